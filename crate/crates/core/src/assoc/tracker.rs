use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hungarian::{assign_with_threshold, CostMatrix, FORBIDDEN};
use super::kalman::{kf_initiate, kf_predict, kf_update, squared_mahalanobis, KalmanError, KalmanState, CHI2_95_4DOF};
use super::{cosine_distance, normalized, Detection};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Detections scoring at least `tau` are high-confidence.
    pub tau: f64,
    /// Frames an unmatched track is retained before removal.
    pub max_lost: u32,
    /// Squared-Mahalanobis gate for appearance matching.
    pub gate: f64,
    /// Maximum fused appearance cost accepted in the first stage.
    pub appearance_match_threshold: f64,
    /// Minimum IOU for the high-confidence IOU stage.
    pub iou_threshold_high: f64,
    /// Minimum IOU for low-confidence recovery.
    pub iou_threshold_low: f64,
    /// Weight of the previous embedding in the moving average.
    pub ema_alpha: f64,
    /// Minimum score for an unmatched high-confidence detection to start a track.
    pub min_score_new: f64,
    /// Blend weight of the squared Mahalanobis distance in the first-stage cost.
    pub motion_weight: f64,
    /// Consecutive hits needed before a tentative track is reported.
    pub confirm_hits: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            tau: 0.4,
            max_lost: 30,
            gate: CHI2_95_4DOF,
            appearance_match_threshold: 0.4,
            iou_threshold_high: 0.5,
            iou_threshold_low: 0.5,
            ema_alpha: 0.9,
            min_score_new: 0.4,
            motion_weight: 0.0,
            confirm_hits: 2,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if self.max_lost < 1 {
            return Err("max_lost must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return Err(format!("ema_alpha must lie in [0, 1], got {}", self.ema_alpha));
        }
        if self.gate.is_nan() || self.gate <= 0.0 {
            return Err("gate must be positive".into());
        }
        if self.confirm_hits < 1 {
            return Err("confirm_hits must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tentative,
    Active,
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: i64,
    pub kstate: KalmanState,
    pub embedding: Vec<f32>,
    pub class_id: i32,
    pub status: TrackStatus,
    pub frames_since_update: u32,
    pub hits: u32,
    /// Score of the most recent matched detection.
    pub score: f64,
}

impl Track {
    pub fn bbox(&self) -> BBox {
        self.kstate.bbox()
    }

    fn absorb(&mut self, det: &Detection, config: &TrackerConfig) -> Result<(), KalmanError> {
        self.kstate = kf_update(&self.kstate, &det.bbox)?;
        if self.embedding.len() == det.embedding.len() {
            let a = config.ema_alpha;
            let mixed = self
                .embedding
                .iter()
                .zip(&det.embedding)
                .map(|(&old, &new)| (a * f64::from(old) + (1.0 - a) * f64::from(new)) as f32)
                .collect();
            self.embedding = normalized(mixed);
        } else {
            self.embedding = det.embedding.clone();
        }
        self.frames_since_update = 0;
        self.hits += 1;
        self.score = det.score;
        self.status = match self.status {
            TrackStatus::Tentative if self.hits < config.confirm_hits => TrackStatus::Tentative,
            _ => TrackStatus::Active,
        };
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchStage {
    Appearance,
    Iou,
    LowConfidence,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepResult {
    /// `(track_id, detection index, stage)`.
    pub matched: Vec<(i64, usize, MatchStage)>,
    pub new_tracks: Vec<i64>,
    /// Tracks that went unmatched this frame and are still retained.
    pub lost: Vec<i64>,
    pub removed: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub track_id: i64,
    pub bbox: BBox,
    pub score: f64,
    pub class_id: i32,
}

/// Per-frame outputs keyed by 1-based frame number.
pub type TrajectorySet = BTreeMap<u32, Vec<TrackOutput>>;

/// Single-sequence online tracker. Not shared between threads while stepping.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: i64,
    frame: u64,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self, String> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            next_id: 1,
            frame: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn frames_processed(&self) -> u64 {
        self.frame
    }

    /// Confirmed tracks that were matched in the latest frame.
    pub fn outputs(&self) -> Vec<TrackOutput> {
        self.tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Active && t.frames_since_update == 0)
            .map(|t| TrackOutput {
                track_id: t.track_id,
                bbox: t.bbox(),
                score: t.score,
                class_id: t.class_id,
            })
            .collect()
    }

    /// Advances every track by one frame and associates `detections`.
    pub fn associate_step(&mut self, detections: &[Detection]) -> Result<StepResult, KalmanError> {
        self.frame += 1;
        let cfg = self.config.clone();
        for t in &mut self.tracks {
            t.kstate = kf_predict(&t.kstate);
        }

        let (high, low): (Vec<usize>, Vec<usize>) =
            (0..detections.len()).partition(|&i| detections[i].score >= cfg.tau);

        let mut track_taken = vec![false; self.tracks.len()];
        let mut det_taken = vec![false; detections.len()];
        let mut result = StepResult::default();

        // Stage 1: appearance cost, Mahalanobis gated.
        let pool: Vec<usize> = (0..self.tracks.len()).collect();
        let cost = CostMatrix::from_fn(pool.len(), high.len(), |r, c| {
            let (t, d) = (&self.tracks[pool[r]], &detections[high[c]]);
            if t.class_id != d.class_id {
                return FORBIDDEN;
            }
            let d2 = match squared_mahalanobis(&t.kstate, &d.bbox) {
                Ok(v) => v,
                Err(_) => return FORBIDDEN,
            };
            if d2 > cfg.gate {
                return FORBIDDEN;
            }
            let app = cosine_distance(&t.embedding, &d.embedding);
            (1.0 - cfg.motion_weight) * app + cfg.motion_weight * d2
        });
        let (pairs, _, _) = assign_with_threshold(&cost, cfg.appearance_match_threshold);
        for (r, c) in pairs {
            self.commit(
                pool[r],
                high[c],
                detections,
                MatchStage::Appearance,
                &mut track_taken,
                &mut det_taken,
                &mut result,
            )?;
        }

        // Stage 2: remaining high-confidence detections by IOU.
        let remaining_high: Vec<usize> = high.iter().copied().filter(|&i| !det_taken[i]).collect();
        self.iou_stage(
            &remaining_high,
            detections,
            cfg.iou_threshold_high,
            MatchStage::Iou,
            &mut track_taken,
            &mut det_taken,
            &mut result,
        )?;

        // Stage 3: low-confidence recovery against whatever is still unmatched.
        self.iou_stage(
            &low,
            detections,
            cfg.iou_threshold_low,
            MatchStage::LowConfidence,
            &mut track_taken,
            &mut det_taken,
            &mut result,
        )?;

        // Lifecycle of unmatched tracks.
        let mut kept = Vec::with_capacity(self.tracks.len());
        for (t, taken) in std::mem::take(&mut self.tracks).into_iter().zip(track_taken) {
            if taken {
                kept.push(t);
                continue;
            }
            let mut t = t;
            if t.status == TrackStatus::Tentative {
                result.removed.push(t.track_id);
                continue;
            }
            t.frames_since_update += 1;
            t.status = TrackStatus::Lost;
            if t.frames_since_update > cfg.max_lost {
                result.removed.push(t.track_id);
            } else {
                result.lost.push(t.track_id);
                kept.push(t);
            }
        }
        self.tracks = kept;

        // Births from unmatched high-confidence detections; low ones are dropped.
        for &i in &high {
            if det_taken[i] || detections[i].score < cfg.min_score_new {
                continue;
            }
            let d = &detections[i];
            let status = if self.frame == 1 || cfg.confirm_hits <= 1 {
                TrackStatus::Active
            } else {
                TrackStatus::Tentative
            };
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track {
                track_id: id,
                kstate: kf_initiate(&d.bbox)?,
                embedding: d.embedding.clone(),
                class_id: d.class_id,
                status,
                frames_since_update: 0,
                hits: 1,
                score: d.score,
            });
            result.new_tracks.push(id);
        }
        Ok(result)
    }

    #[allow(clippy::too_many_arguments)]
    fn iou_stage(
        &mut self,
        dets: &[usize],
        detections: &[Detection],
        min_iou: f64,
        stage: MatchStage,
        track_taken: &mut [bool],
        det_taken: &mut [bool],
        result: &mut StepResult,
    ) -> Result<(), KalmanError> {
        let pool: Vec<usize> = (0..self.tracks.len()).filter(|&i| !track_taken[i]).collect();
        if pool.is_empty() || dets.is_empty() {
            return Ok(());
        }
        let boxes: Vec<BBox> = pool.iter().map(|&i| self.tracks[i].bbox()).collect();
        let cost = CostMatrix::from_fn(pool.len(), dets.len(), |r, c| {
            let d = &detections[dets[c]];
            if self.tracks[pool[r]].class_id != d.class_id {
                FORBIDDEN
            } else {
                1.0 - iou(&boxes[r], &d.bbox)
            }
        });
        let (pairs, _, _) = assign_with_threshold(&cost, 1.0 - min_iou);
        for (r, c) in pairs {
            self.commit(pool[r], dets[c], detections, stage, track_taken, det_taken, result)?;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn commit(
        &mut self,
        track: usize,
        det: usize,
        detections: &[Detection],
        stage: MatchStage,
        track_taken: &mut [bool],
        det_taken: &mut [bool],
        result: &mut StepResult,
    ) -> Result<(), KalmanError> {
        debug_assert!(!track_taken[track] && !det_taken[det]);
        self.tracks[track].absorb(&detections[det], &self.config)?;
        track_taken[track] = true;
        det_taken[det] = true;
        result.matched.push((self.tracks[track].track_id, det, stage));
        Ok(())
    }
}

/// Runs a fresh tracker over consecutive frames numbered from 1.
pub fn run_sequence(frames: &[Vec<Detection>], config: &TrackerConfig) -> Result<TrajectorySet, SequenceError> {
    let mut tracker = Tracker::new(config.clone()).map_err(SequenceError::Config)?;
    let mut out = TrajectorySet::new();
    for (i, dets) in frames.iter().enumerate() {
        tracker.associate_step(dets)?;
        let outputs = tracker.outputs();
        if !outputs.is_empty() {
            out.insert(i as u32 + 1, outputs);
        }
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("invalid tracker configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: BBox, score: f64, emb: Vec<f32>) -> Detection {
        Detection::new(b, score, 0, emb)
    }

    #[test]
    fn retention_window_is_thirty_frames() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.associate_step(&[det(BBox::new(10.0, 10.0, 20.0, 40.0), 0.9, vec![1.0, 0.0])])
            .unwrap();
        assert_eq!(tr.tracks().len(), 1);
        for i in 1..=30 {
            let r = tr.associate_step(&[]).unwrap();
            assert_eq!(r.lost.len(), 1, "frame {i}");
            assert_eq!(tr.tracks()[0].frames_since_update, i);
        }
        let r = tr.associate_step(&[]).unwrap();
        assert_eq!(r.removed.len(), 1);
        assert!(tr.tracks().is_empty());
    }

    #[test]
    fn exact_match_is_stage_one_with_zero_cost() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        let b = BBox::new(50.0, 60.0, 20.0, 40.0);
        let emb = vec![0.6, 0.8, 0.0];
        tr.associate_step(&[det(b, 0.9, emb.clone())]).unwrap();
        assert_eq!(tr.tracks()[0].status, TrackStatus::Active);
        let predicted = kf_predict(&tr.tracks()[0].kstate).bbox();
        let r = tr.associate_step(&[det(predicted, 0.9, emb.clone())]).unwrap();
        assert_eq!(r.matched, vec![(1, 0, MatchStage::Appearance)]);
        assert!(cosine_distance(&tr.tracks()[0].embedding, &emb) < 1e-7);
    }

    #[test]
    fn low_score_detection_never_starts_a_track() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        let r = tr
            .associate_step(&[det(BBox::new(0.0, 0.0, 5.0, 5.0), 0.39, vec![1.0])])
            .unwrap();
        assert!(r.new_tracks.is_empty() && tr.tracks().is_empty());
    }

    #[test]
    fn low_confidence_detection_recovers_track_by_iou() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        let b = BBox::new(100.0, 100.0, 30.0, 30.0);
        tr.associate_step(&[det(b, 0.9, vec![1.0, 0.0])]).unwrap();
        // Orthogonal embedding: appearance rejects it, IOU recovers it.
        let r = tr
            .associate_step(&[det(b.translated(1.0, 0.0), 0.2, vec![0.0, 1.0])])
            .unwrap();
        assert_eq!(r.matched, vec![(1, 0, MatchStage::LowConfidence)]);
    }

    #[test]
    fn tentative_tracks_need_two_hits() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.associate_step(&[]).unwrap();
        let b = BBox::new(0.0, 0.0, 20.0, 20.0);
        tr.associate_step(&[det(b, 0.9, vec![1.0])]).unwrap();
        assert_eq!(tr.tracks()[0].status, TrackStatus::Tentative);
        assert!(tr.outputs().is_empty());
        tr.associate_step(&[det(b, 0.9, vec![1.0])]).unwrap();
        assert_eq!(tr.tracks()[0].status, TrackStatus::Active);
        assert_eq!(tr.outputs().len(), 1);

        tr.associate_step(&[det(BBox::new(300.0, 300.0, 20.0, 20.0), 0.9, vec![1.0])])
            .unwrap();
        let r = tr.associate_step(&[]).unwrap();
        assert_eq!(r.removed, vec![2]);
    }

    #[test]
    fn persistent_detection_keeps_one_id() {
        let b = BBox::new(40.0, 40.0, 25.0, 50.0);
        let frames: Vec<Vec<Detection>> = (0..100).map(|_| vec![det(b, 0.95, vec![0.0, 1.0, 0.0])]).collect();
        let out = run_sequence(&frames, &TrackerConfig::default()).unwrap();
        assert_eq!(out.len(), 100);
        assert!(out.values().all(|v| v.len() == 1 && v[0].track_id == 1));
    }

    #[test]
    fn empty_sequence_is_empty() {
        assert!(run_sequence(&[], &TrackerConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn config_validation() {
        let bad = TrackerConfig {
            tau: 1.0,
            ..Default::default()
        };
        assert!(Tracker::new(bad).is_err());
        let bad = TrackerConfig {
            max_lost: 0,
            ..Default::default()
        };
        assert!(Tracker::new(bad).is_err());
    }
}

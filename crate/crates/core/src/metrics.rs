//! CLEAR-MOT counts and global identity measures.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::assoc::hungarian::{assign_with_threshold, hungarian, CostMatrix, FORBIDDEN};
use crate::geometry::{iou, BBox};
use crate::FrameMap;

/// Fraction of a lifespan above which a ground-truth trajectory is mostly tracked.
pub const MOSTLY_TRACKED: f64 = 0.8;
/// Fraction of a lifespan at or below which it is mostly lost.
pub const MOSTLY_LOST: f64 = 0.2;

/// One ground-truth or predicted box in MOT form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedBox {
    pub frame: u32,
    pub id: i64,
    pub bbox: BBox,
    pub class_id: i32,
    pub conf: f64,
    pub visibility: f64,
}

impl AnnotatedBox {
    pub fn new(frame: u32, id: i64, bbox: BBox, class_id: i32) -> Self {
        Self {
            frame,
            id,
            bbox,
            class_id,
            conf: 1.0,
            visibility: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_min: f64,
    /// Ignore class ids when matching.
    pub single_class: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_min: 0.5,
            single_class: false,
        }
    }
}

impl EvalConfig {
    fn compatible(&self, a: &AnnotatedBox, b: &AnnotatedBox) -> bool {
        self.single_class || a.class_id == b.class_id
    }

    /// IOU when the pair may match, `None` otherwise.
    fn overlap(&self, gt: &AnnotatedBox, pred: &AnnotatedBox) -> Option<f64> {
        if !self.compatible(gt, pred) {
            return None;
        }
        let v = iou(&gt.bbox, &pred.bbox);
        (v >= self.iou_min).then_some(v)
    }
}

/// Last matched prediction id per ground-truth id, carried between frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Carry {
    last: BTreeMap<i64, i64>,
}

impl Carry {
    pub fn last_match(&self, gt_id: i64) -> Option<i64> {
        self.last.get(&gt_id).copied()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMatch {
    /// `(gt index, pred index)` pairs, sorted by gt index.
    pub matches: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
    pub id_switches: u64,
}

/// CLEAR matching of one frame: previous correspondences are kept while they
/// still overlap, the rest are assigned on `1 - IOU`.
pub fn frame_match(gt: &[AnnotatedBox], pred: &[AnnotatedBox], cfg: &EvalConfig, carry: &mut Carry) -> FrameMatch {
    let mut gt_taken = vec![false; gt.len()];
    let mut pred_taken = vec![false; pred.len()];
    let mut matches = Vec::new();

    for (gi, g) in gt.iter().enumerate() {
        let Some(prev) = carry.last_match(g.id) else { continue };
        let hit = pred
            .iter()
            .enumerate()
            .find(|&(pi, p)| !pred_taken[pi] && p.id == prev && cfg.overlap(g, p).is_some());
        if let Some((pi, _)) = hit {
            gt_taken[gi] = true;
            pred_taken[pi] = true;
            matches.push((gi, pi));
        }
    }

    let free_gt: Vec<usize> = (0..gt.len()).filter(|&i| !gt_taken[i]).collect();
    let free_pred: Vec<usize> = (0..pred.len()).filter(|&i| !pred_taken[i]).collect();
    let cost = CostMatrix::from_fn(free_gt.len(), free_pred.len(), |r, c| {
        cfg.overlap(&gt[free_gt[r]], &pred[free_pred[c]])
            .map_or(FORBIDDEN, |v| 1.0 - v)
    });
    let (pairs, _, _) = assign_with_threshold(&cost, 1.0 - cfg.iou_min);
    let mut id_switches = 0;
    for (r, c) in pairs {
        let (gi, pi) = (free_gt[r], free_pred[c]);
        if carry.last_match(gt[gi].id).is_some_and(|prev| prev != pred[pi].id) {
            id_switches += 1;
        }
        gt_taken[gi] = true;
        pred_taken[pi] = true;
        matches.push((gi, pi));
    }
    matches.sort_unstable();
    for &(gi, pi) in &matches {
        carry.last.insert(gt[gi].id, pred[pi].id);
    }

    FrameMatch {
        matches,
        false_positives: (0..pred.len()).filter(|&i| !pred_taken[i]).collect(),
        false_negatives: (0..gt.len()).filter(|&i| !gt_taken[i]).collect(),
        id_switches,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClearCounts {
    pub num_gt: u64,
    pub num_pred: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub ids: u64,
    pub mt: u64,
    pub ml: u64,
    pub num_gt_ids: u64,
}

impl ClearCounts {
    /// `1 - (FN + FP + IDS) / GT`, undefined without ground truth.
    pub fn mota(&self) -> Option<f64> {
        (self.num_gt > 0).then(|| 1.0 - (self.fn_ + self.fp + self.ids) as f64 / self.num_gt as f64)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    fn add(&mut self, o: &Self) {
        self.num_gt += o.num_gt;
        self.num_pred += o.num_pred;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.ids += o.ids;
        self.mt += o.mt;
        self.ml += o.ml;
        self.num_gt_ids += o.num_gt_ids;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn frames_of<'a>(gt: &'a FrameMap<AnnotatedBox>, pred: &'a FrameMap<AnnotatedBox>) -> BTreeSet<u32> {
    gt.keys().chain(pred.keys()).copied().collect()
}

pub fn clear_mot(gt: &FrameMap<AnnotatedBox>, pred: &FrameMap<AnnotatedBox>, cfg: &EvalConfig) -> ClearCounts {
    let empty = Vec::new();
    let mut carry = Carry::default();
    let mut counts = ClearCounts::default();
    // gt id -> (frames present, frames matched)
    let mut life: BTreeMap<i64, (u64, u64)> = BTreeMap::new();
    for f in frames_of(gt, pred) {
        let g = gt.get(&f).unwrap_or(&empty);
        let p = pred.get(&f).unwrap_or(&empty);
        let m = frame_match(g, p, cfg, &mut carry);
        counts.num_gt += g.len() as u64;
        counts.num_pred += p.len() as u64;
        counts.tp += m.matches.len() as u64;
        counts.fp += m.false_positives.len() as u64;
        counts.fn_ += m.false_negatives.len() as u64;
        counts.ids += m.id_switches;
        for b in g {
            life.entry(b.id).or_default().0 += 1;
        }
        for &(gi, _) in &m.matches {
            life.entry(g[gi].id).or_default().1 += 1;
        }
    }
    counts.num_gt_ids = life.len() as u64;
    for &(span, hit) in life.values() {
        let frac = hit as f64 / span as f64;
        if frac >= MOSTLY_TRACKED {
            counts.mt += 1;
        }
        if frac <= MOSTLY_LOST {
            counts.ml += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdCounts {
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

impl IdCounts {
    pub fn idp(&self) -> f64 {
        ratio(self.idtp, self.idtp + self.idfp)
    }

    pub fn idr(&self) -> f64 {
        ratio(self.idtp, self.idtp + self.idfn)
    }

    pub fn idf1(&self) -> f64 {
        ratio(2 * self.idtp, 2 * self.idtp + self.idfp + self.idfn)
    }
}

/// Frames in which each `(gt id, pred id)` pair overlaps at `iou_min`.
pub fn id_overlap_counts(
    gt: &FrameMap<AnnotatedBox>,
    pred: &FrameMap<AnnotatedBox>,
    cfg: &EvalConfig,
) -> BTreeMap<(i64, i64), u64> {
    let mut counts = BTreeMap::new();
    for (f, g) in gt {
        let Some(p) = pred.get(f) else { continue };
        for a in g {
            for b in p {
                if cfg.overlap(a, b).is_some() {
                    *counts.entry((a.id, b.id)).or_insert(0) += 1;
                }
            }
        }
    }
    counts
}

/// One global truth-to-prediction id assignment maximising identity true positives.
pub fn id_metrics(gt: &FrameMap<AnnotatedBox>, pred: &FrameMap<AnnotatedBox>, cfg: &EvalConfig) -> IdCounts {
    let total_gt: u64 = gt.values().map(|v| v.len() as u64).sum();
    let total_pred: u64 = pred.values().map(|v| v.len() as u64).sum();
    let overlaps = id_overlap_counts(gt, pred, cfg);
    let gt_ids: Vec<i64> = overlaps
        .keys()
        .map(|k| k.0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pred_ids: Vec<i64> = overlaps
        .keys()
        .map(|k| k.1)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    // Every cell is finite so the solver minimises cost alone; zero cells add nothing.
    let cost = CostMatrix::from_fn(gt_ids.len(), pred_ids.len(), |r, c| {
        -(overlaps.get(&(gt_ids[r], pred_ids[c])).copied().unwrap_or(0) as f64)
    });
    let idtp: u64 = hungarian(&cost)
        .into_iter()
        .map(|(r, c)| overlaps.get(&(gt_ids[r], pred_ids[c])).copied().unwrap_or(0))
        .sum();
    IdCounts {
        idtp,
        idfp: total_pred - idtp,
        idfn: total_gt - idtp,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub idf1: f64,
    /// `None` when there is no ground truth.
    pub mota: Option<f64>,
    pub mt: u64,
    pub ml: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub ids: u64,
    pub idp: f64,
    pub idr: f64,
    pub precision: f64,
    pub recall: f64,
    pub clear: ClearCounts,
    pub identity: IdCounts,
}

impl MetricsReport {
    pub fn from_counts(clear: ClearCounts, identity: IdCounts) -> Self {
        Self {
            idf1: identity.idf1(),
            mota: clear.mota(),
            mt: clear.mt,
            ml: clear.ml,
            fp: clear.fp,
            fn_: clear.fn_,
            ids: clear.ids,
            idp: identity.idp(),
            idr: identity.idr(),
            precision: clear.precision(),
            recall: clear.recall(),
            clear,
            identity,
        }
    }
}

pub fn evaluate(gt: &FrameMap<AnnotatedBox>, pred: &FrameMap<AnnotatedBox>, cfg: &EvalConfig) -> MetricsReport {
    MetricsReport::from_counts(clear_mot(gt, pred, cfg), id_metrics(gt, pred, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub name: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub per_sequence: Vec<SequenceReport>,
    pub aggregate: MetricsReport,
}

/// Sums raw counts over sequences and recomputes the ratios.
pub fn aggregate(per_sequence: Vec<SequenceReport>) -> EvaluationSummary {
    let mut clear = ClearCounts::default();
    let mut identity = IdCounts::default();
    for s in &per_sequence {
        clear.add(&s.metrics.clear);
        identity.idtp += s.metrics.identity.idtp;
        identity.idfp += s.metrics.identity.idfp;
        identity.idfn += s.metrics.identity.idfn;
    }
    EvaluationSummary {
        per_sequence,
        aggregate: MetricsReport::from_counts(clear, identity),
    }
}

//! Online association: confidence split, Kalman prediction, gated appearance
//! matching, IOU fallback, low-confidence recovery, and track lifecycle.

pub mod hungarian;
pub mod kalman;
mod tracker;

pub use hungarian::{assign_with_threshold, hungarian, CostMatrix, FORBIDDEN};
pub use kalman::{
    kf_initiate, kf_predict, kf_project, kf_update, squared_mahalanobis, KalmanError, KalmanState, CHI2_95_4DOF,
};
pub use tracker::{
    run_sequence, MatchStage, SequenceError, StepResult, Track, TrackOutput, TrackStatus, Tracker, TrackerConfig,
    TrajectorySet,
};

pub use crate::geometry::{iou, BBox};

/// Norm below which an embedding is treated as missing.
const EMBED_NORM_GUARD: f64 = 1e-12;

/// One detector output for a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: i32,
    /// Unit-norm appearance embedding (zero if none was supplied).
    pub embedding: Vec<f32>,
}

impl Detection {
    /// Normalises `embedding` to unit length; all-zero embeddings are kept as is.
    pub fn new(bbox: BBox, score: f64, class_id: i32, embedding: Vec<f32>) -> Self {
        Self {
            bbox,
            score,
            class_id,
            embedding: normalized(embedding),
        }
    }
}

pub(crate) fn normalized(mut v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    if n >= EMBED_NORM_GUARD {
        v.iter_mut().for_each(|x| *x = (f64::from(*x) / n) as f32);
    }
    v
}

/// `1 - cos(a, b)` in `[0, 2]`; 1 when either vector is degenerate or the
/// lengths differ.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    if a.len() != b.len() {
        return 1.0;
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < EMBED_NORM_GUARD || nb < EMBED_NORM_GUARD {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

//! Two-frame feature fusion and online multi-object tracking for aerial video.
//!
//! The crate covers the temporal ReID boosting and detection refinement
//! modules, their training losses, a confidence-cascaded tracker, CLEAR-MOT
//! and identity metrics, a synthetic scene generator, and file formats.

pub mod assoc;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod synth;
pub mod tdrm;
pub mod tebm;
pub mod tensor;

use std::collections::BTreeMap;

/// Per-frame item lists keyed by 1-based frame number.
pub type FrameMap<T> = BTreeMap<u32, Vec<T>>;

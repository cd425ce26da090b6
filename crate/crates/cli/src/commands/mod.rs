pub mod bench;
pub mod eval;
pub mod modules;
pub mod synth;
pub mod track;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uavtrack_core::io::{read_run_config, RunConfig};
use uavtrack_core::metrics::AnnotatedBox;
use uavtrack_core::synth::{gt_ids, random_prototypes};
use uavtrack_core::FrameMap;

use crate::Common;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

macro_rules! data_errors {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Self::Data(e.into())
            }
        })*
    };
}

data_errors!(
    anyhow::Error,
    std::io::Error,
    serde_json::Error,
    uavtrack_core::io::IoError,
    uavtrack_core::io::ConfigError,
    uavtrack_core::synth::SynthError,
    uavtrack_core::assoc::SequenceError,
    uavtrack_core::tensor::TensorError,
    uavtrack_core::losses::LossError,
);

pub type CmdResult = Result<(), Failure>;

pub(crate) fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Loads the configuration file, if any, then applies the seed override.
pub(crate) fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => read_run_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.apply_seed(s);
    }
    Ok(cfg)
}

pub(crate) fn prototypes_for(gt: &FrameMap<AnnotatedBox>, cfg: &RunConfig) -> BTreeMap<i64, Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.prototype_seed);
    random_prototypes(&gt_ids(gt), cfg.embed_dim, &mut rng)
}

/// Sub-directories of `dir` containing `file`, sorted by name.
pub(crate) fn sequence_dirs(dir: &Path, file: &str) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() && path.join(file).is_file() {
            out.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    if out.is_empty() {
        anyhow::bail!("no sequence directories with {file} under {}", dir.display());
    }
    Ok(out)
}

pub(crate) fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

//! Run configuration as a TOML document. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{read_text, IoError};
use crate::assoc::TrackerConfig;
use crate::metrics::EvalConfig;
use crate::synth::{CorruptionConfig, MapLayout, SceneConfig, SynthError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{file}: {message}")]
    Syntax { file: String, message: String },
    #[error("{file}: unknown configuration key `{key}`")]
    UnknownKey { file: String, key: String },
    #[error("{file}: {message}")]
    Invalid { file: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    /// Fallback output directory when none is given on the command line.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Dimension of synthetic appearance embeddings.
    pub embed_dim: usize,
    pub prototype_seed: u64,
    pub tracker: TrackerConfig,
    pub scene: SceneConfig,
    pub corruption: CorruptionConfig,
    pub layout: MapLayout,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            prototype_seed: 2,
            tracker: TrackerConfig::default(),
            scene: SceneConfig::default(),
            corruption: CorruptionConfig::default(),
            layout: MapLayout::default(),
            eval: EvalConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    /// Derives every seed from one value: scene `s`, corruption `s + 1`,
    /// prototypes `s + 2`.
    pub fn apply_seed(&mut self, s: u64) {
        self.scene.seed = s;
        self.corruption.seed = s.wrapping_add(1);
        self.prototype_seed = s.wrapping_add(2);
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.embed_dim == 0 || self.embed_dim > usize::from(u16::MAX) {
            return Err(format!("embed_dim {} must lie in 1..=65535", self.embed_dim));
        }
        self.tracker.validate().map_err(|e| format!("tracker: {e}"))?;
        let synth = |e: SynthError| e.to_string();
        self.scene.validate().map_err(synth)?;
        self.corruption.validate().map_err(synth)?;
        if !(self.eval.iou_min > 0.0 && self.eval.iou_min <= 1.0) {
            return Err(format!("eval: iou_min {} must lie in (0, 1]", self.eval.iou_min));
        }
        Ok(())
    }
}

pub fn parse_run_config(text: &str, file: &str) -> Result<RunConfig, ConfigError> {
    let syntax = |e: toml::de::Error| ConfigError::Syntax {
        file: file.to_string(),
        message: e.to_string().trim_end().to_string(),
    };
    let de = toml::Deserializer::parse(text).map_err(syntax)?;
    let mut unknown = Vec::new();
    let cfg: RunConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string())).map_err(syntax)?;
    if let Some(key) = unknown.into_iter().next() {
        return Err(ConfigError::UnknownKey {
            file: file.to_string(),
            key,
        });
    }
    cfg.validate().map_err(|message| ConfigError::Invalid {
        file: file.to_string(),
        message,
    })?;
    Ok(cfg)
}

pub fn read_run_config(path: &Path) -> Result<RunConfig, ConfigError> {
    parse_run_config(&read_text(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(parse_run_config("", "c").unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_are_applied() {
        let cfg = parse_run_config(
            "embed_dim = 16\n[tracker]\ntau = 0.5\n[scene]\nspeed_range = [0, 1]\n",
            "c",
        )
        .unwrap();
        assert_eq!(cfg.embed_dim, 16);
        assert_eq!(cfg.tracker.tau, 0.5);
        assert_eq!(cfg.tracker.max_lost, 30);
        assert_eq!(cfg.scene.speed_range, [0.0, 1.0]);
    }

    #[test]
    fn unknown_key_path_is_named() {
        match parse_run_config("[tracker]\nfoo = 1\n", "c") {
            Err(ConfigError::UnknownKey { key, .. }) => assert_eq!(key, "tracker.foo"),
            other => panic!("{other:?}"),
        }
        match parse_run_config("bogus = true\n", "c") {
            Err(ConfigError::UnknownKey { key, .. }) => assert_eq!(key, "bogus"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(matches!(
            parse_run_config("[tracker]\ntau = 1.5\n", "c"),
            Err(ConfigError::Invalid { .. })
        ));
        assert!(matches!(
            parse_run_config("[tracker\n", "c"),
            Err(ConfigError::Syntax { .. })
        ));
    }

    #[test]
    fn seed_fans_out() {
        let mut c = RunConfig::default();
        c.apply_seed(7);
        assert_eq!((c.scene.seed, c.corruption.seed, c.prototype_seed), (7, 8, 9));
    }
}

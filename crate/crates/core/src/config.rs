//! Run configuration: one section per component, loadable from TOML, with
//! a stable content hash stamped into every artifact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::encoder::EncoderTrainConfig;
use crate::landmarks::GraphConfig;
use crate::similarity::SfsConfig;
use crate::successor::SfConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    OneHot,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub mode: EncoderMode,
    pub alpha: f64,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub pretrain_steps: usize,
    pub pretrain_episodes: usize,
    pub pretrain_episode_len: usize,
    pub train: EncoderTrainConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            mode: EncoderMode::OneHot,
            alpha: 10.0,
            hidden: vec![64],
            output_dim: 32,
            pretrain_steps: 2_000,
            pretrain_episodes: 50,
            pretrain_episode_len: 100,
            train: EncoderTrainConfig::default(),
        }
    }
}

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SflConfig {
    pub encoder: EncoderConfig,
    pub sf: SfConfig,
    pub sfs: SfsConfig,
    pub graph: GraphConfig,
    pub agent: AgentConfig,
}

impl SflConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SflConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn bad(field: &'static str, reason: impl Into<String>) -> Result<(), ConfigError> {
            Err(ConfigError::Invalid {
                field,
                reason: reason.into(),
            })
        }
        if !(self.sf.gamma > 0.0 && self.sf.gamma < 1.0) {
            return bad("sf.gamma", "must lie in (0, 1)");
        }
        if self.sf.batch_size == 0 {
            return bad("sf.batch_size", "must be at least 1");
        }
        if self.sf.n_step == 0 {
            return bad("sf.n_step", "must be at least 1");
        }
        if self.sf.buffer_capacity < self.sf.batch_size {
            return bad("sf.buffer_capacity", "must hold at least one batch");
        }
        if self.sfs.window == 0 {
            return bad("sfs.window", "must be at least 1");
        }
        for (field, eps) in [
            ("sfs.epsilon_train", self.sfs.epsilon_train),
            ("sfs.epsilon_eval", self.sfs.epsilon_eval),
        ] {
            if !(0.0..=1.0).contains(&eps) {
                return bad(field, "must lie in [0, 1]");
            }
        }
        if self.graph.landmark_cap == 0 {
            return bad("graph.landmark_cap", "must be at least 1");
        }
        if self.graph.n_cand == 0 {
            return bad("graph.n_cand", "must be at least 1");
        }
        let a = &self.agent;
        for (field, v) in [
            ("agent.n_front", a.n_front),
            ("agent.n_explore", a.n_explore),
            ("agent.n_land", a.n_land),
        ] {
            if v == 0 {
                return bad(field, "must be at least 1");
            }
        }
        if a.frontier_temperature <= 0.0 {
            return bad("agent.frontier_temperature", "must be positive");
        }
        if self.encoder.alpha <= 0.0 {
            return bad("encoder.alpha", "must be positive");
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, hex, first 16 chars.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config is always serializable");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

//! TOML run configuration. Every section and key is optional; unknown keys
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricsConfig;
use crate::model::ModelConfig;
use crate::postproc::PostprocParams;
use crate::synth::Augment;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("[{section}] {msg}")]
    Invalid { section: &'static str, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub noise_sigma: f32,
    pub brightness_jitter: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 256,
            size: ModelConfig::default().input_size,
            seed: 0,
            noise_sigma: 0.0,
            brightness_jitter: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn augment(&self) -> Augment {
        Augment {
            noise_sigma: self.noise_sigma,
            brightness_jitter: self.brightness_jitter,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub postproc: PostprocParams,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |section| move |msg: String| ConfigError::Invalid { section, msg };
        self.model.validate().map_err(|e| invalid("model")(e.to_string()))?;
        self.train.validate().map_err(|e| invalid("train")(e.to_string()))?;
        self.synth.augment().validate().map_err(invalid("synth"))?;
        if self.synth.size < 2 {
            return Err(invalid("synth")(format!("size must be at least 2, got {}", self.synth.size)));
        }
        self.postproc.validate().map_err(invalid("postproc"))?;
        self.metrics.ssim.validate().map_err(invalid("metrics.ssim"))?;
        self.metrics.ld.validate().map_err(invalid("metrics.ld"))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

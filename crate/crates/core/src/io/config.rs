//! Run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::episode::KShotConfig;
use crate::pipeline::model::{Ablation, ModelConfig};

/// Environment variable that overrides [`RunConfig::seed`].
pub const SEED_ENV: &str = "FECANET_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Self-similarity neighbourhood.
    pub k: usize,
    /// Multi-scale guidance depth.
    #[serde(alias = "n")]
    pub depth: usize,
    pub tau: f64,
    pub lr: f64,
    pub shots: usize,
    pub ablation: Ablation,
    pub image_size: usize,
    pub widths: [usize; 3],
    pub batch_size: usize,
    pub steps: usize,
    pub backbone_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            seed: 0,
            k: m.k,
            depth: m.depth,
            tau: 0.5,
            lr: 1e-3,
            shots: 1,
            ablation: m.ablation,
            image_size: 32,
            widths: m.widths,
            batch_size: 4,
            steps: 500,
            backbone_seed: m.backbone_seed,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(&crate::io::read_file(path)?)?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Applies `FECANET_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::validation(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.kshot()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.image_size < 16 {
            return Err(Error::validation(format!("image size must be at least 16, got {}", self.image_size)));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be at least 1"));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            k: self.k,
            depth: self.depth,
            widths: self.widths,
            ablation: self.ablation,
            backbone_seed: self.backbone_seed,
        }
    }

    pub fn kshot(&self) -> Result<KShotConfig> {
        KShotConfig::new(self.shots, self.tau)
    }
}

//! Experiment configuration: JSON in, strictly validated (unknown keys are
//! rejected), hashed for the run manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pape_core::encodings::EncodingSpec;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelShapeConfig {
    pub layers: usize,
    pub heads: usize,
    pub d: usize,
    pub h: usize,
}

impl Default for ModelShapeConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            d: 32,
            h: 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// Tokens per axis of the training grid.
    pub grid: Vec<usize>,
    pub train_samples: usize,
    pub test_samples: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            grid: vec![6, 6],
            train_samples: 256,
            test_samples: 200,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub steps: u64,
    pub lr: f64,
    pub warmup: u64,
    pub weight_decay: f64,
    /// Whether positional tables join the decay set (they do not by
    /// default).
    pub decay_positional: bool,
    pub batch: usize,
    /// Number of seeds for the statistical runs.
    pub seeds: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 3e-4,
            warmup: 100,
            weight_decay: 0.05,
            decay_positional: false,
            batch: 16,
            seeds: 5,
        }
    }
}

fn default_encodings() -> Vec<EncodingSpec> {
    vec![
        EncodingSpec::None,
        EncodingSpec::NdSincos { base: 10_000.0 },
        EncodingSpec::Pape {
            m: 4,
            ablation: None,
        },
    ]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub model: ModelShapeConfig,
    #[serde(default = "default_encodings")]
    pub encodings: Vec<EncodingSpec>,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            model: ModelShapeConfig::default(),
            encodings: default_encodings(),
            task: TaskConfig::default(),
            trainer: TrainerConfig::default(),
            out_dir: default_out_dir(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.d != self.model.heads * self.model.h {
            bail!(
                "model: d = {} must equal heads * h = {}",
                self.model.d,
                self.model.heads * self.model.h
            );
        }
        if self.task.grid.is_empty() || self.task.grid.contains(&0) {
            bail!("task: grid extents must be positive");
        }
        if self.trainer.batch == 0 || self.trainer.seeds == 0 {
            bail!("trainer: batch and seeds must be positive");
        }
        if self.encodings.is_empty() {
            bail!("at least one encoding must be configured");
        }
        for enc in &self.encodings {
            enc.validate()
                .map_err(|e| anyhow::anyhow!("encoding {}: {}", enc.kind_name(), e))?;
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        hex_string(&hasher.finalize())
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_hash_is_stable() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hash(), c.clone().hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = r#"{"seed": 1, "surprise": true}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
        let nested = r#"{"seed": 1, "trainer": {"steps": 10, "lr": 1e-3, "warmup": 1,
            "weight_decay": 0.0, "decay_positional": false, "batch": 2, "seeds": 1,
            "typo": 1}}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(nested).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 43;
        assert_ne!(a.hash(), b.hash());
    }
}

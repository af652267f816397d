use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EmgfError, Result};
use crate::model::{Architecture, FusionConfig, ModelConfig, PreprocessConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    /// Weight of the triplet term in the total loss.
    pub beta: f64,
    pub epochs: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub preprocess: PreprocessConfig,
    pub fusion: FusionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-5,
            batch_size: 16,
            dropout: 0.3,
            beta: 0.12,
            epochs: 30,
            seed: 0,
            model: ModelConfig::default(),
            preprocess: PreprocessConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

/// Named starting points; `synthetic` is tuned for the small generated data.
pub const PRESETS: [&str; 6] = ["default", "synthetic", "laptop", "restaurant", "twitter", "mams"];

impl TrainConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        // (con, dep, sem) layers and beta per benchmark
        let (layers, beta) = match name {
            "default" => return Ok(c),
            "synthetic" => return Ok(TrainConfig::synthetic()),
            "laptop" => ((6, 3, 3), 0.12),
            "restaurant" => ((3, 3, 3), 0.12),
            "twitter" => ((6, 9, 1), 0.07),
            "mams" => ((6, 3, 3), 0.12),
            other => {
                return Err(EmgfError::Config(format!(
                    "unknown preset '{other}' (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        c.model.con_layers = layers.0;
        c.model.dep_layers = layers.1;
        c.model.sem_layers = layers.2;
        c.beta = beta;
        Ok(c)
    }

    /// Desk-scale settings for the generated data: larger step size, no dropout.
    pub fn synthetic() -> Self {
        TrainConfig {
            lr: 1e-3,
            dropout: 0.0,
            epochs: 200,
            ..TrainConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig =
            toml::from_str(text).map_err(|e| EmgfError::Config(e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EmgfError::io(path, e))?;
        TrainConfig::from_toml(&text).map_err(|e| match e {
            EmgfError::Config(msg) => EmgfError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn arch(&self) -> Architecture {
        Architecture {
            model: self.model.clone(),
            preprocess: self.preprocess.clone(),
            fusion: self.fusion.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(EmgfError::Config("lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(EmgfError::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(EmgfError::Config("epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EmgfError::Config("dropout must be in [0, 1)".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(EmgfError::Config("beta must be non-negative".into()));
        }
        self.arch().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{Channel, ChannelSet};

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.lr, 2e-5);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.dropout, 0.3);
        assert_eq!(c.beta, 0.12);
        assert_eq!(c.preprocess.margin, 0.2);
        assert_eq!(c.fusion.blocks, 6);
        c.validate().unwrap();
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let c = TrainConfig::from_toml(
            "lr = 0.01\n[model]\ndim = 8\n[fusion]\nchannels = [\"sem\", \"dep\"]\n",
        )
        .unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.model.dim, 8);
        assert_eq!(c.model.heads, 2);
        assert_eq!(
            c.fusion.channels,
            ChannelSet::new([Channel::Dep, Channel::Sem]).unwrap()
        );
    }

    #[test]
    fn toml_round_trip() {
        let mut c = TrainConfig::preset("twitter").unwrap();
        c.model.kge_dim = Some(4);
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::from_toml("lr = 0.0").is_err());
        assert!(TrainConfig::from_toml("dropout = 1.0").is_err());
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
        assert!(TrainConfig::from_toml("[fusion]\nchannels = []").is_err());
        assert!(TrainConfig::preset("imdb").is_err());
    }
}

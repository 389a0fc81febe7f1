//! Config files. TOML when the extension is `.toml`, JSON otherwise.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thp_core::likelihood::LikelihoodConfig;
use thp_core::model::ModelConfig;
use thp_core::optim::AdamConfig;
use thp_core::train::TrainConfig;

use crate::error::{io_err, Result, ThpError};

/// Environment variable overriding the seed of any config.
pub const SEED_ENV: &str = "THP_SEED";

fn is_toml(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"))
}

pub fn load_value(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |message: String| ThpError::Config {
        path: path.to_path_buf(),
        message,
    };
    if is_toml(path) {
        toml::from_str(&text).map_err(|e| bad(e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
    }
}

pub fn load_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let v = load_value(path)?;
    serde_json::from_value(v).map_err(|e| ThpError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// `THP_SEED` if set.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ThpError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {s:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(ThpError::Usage(format!("{SEED_ENV}: {e}"))),
    }
}

/// Contents of a `thp train --config` file.
///
/// `model` fields override the named `preset`; `num_types` and
/// `num_vertices` default to what the data and graph need.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub model: serde_json::Map<String, Value>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub adam: Option<AdamConfig>,
    #[serde(default)]
    pub likelihood: Option<LikelihoodConfig>,
    /// Fraction of the data held out for early stopping.
    #[serde(default)]
    pub dev_fraction: Option<f64>,
    /// Mean training gap is measured from the data unless given.
    #[serde(default)]
    pub mean_gap: Option<f64>,
}

pub const DEFAULT_DEV_FRACTION: f64 = 0.1;

impl TrainFile {
    /// Resolves the model config for `num_types` types (and vertices).
    pub fn model_config(&self, num_types: usize, num_vertices: Option<usize>) -> std::result::Result<ModelConfig, String> {
        let name = self.preset.as_deref().unwrap_or("desk");
        let base = ModelConfig::preset(name, num_types).ok_or_else(|| format!("unknown preset {name:?}"))?;
        let mut v = serde_json::to_value(ModelConfig {
            num_vertices,
            ..base
        })
        .map_err(|e| e.to_string())?;
        let obj = v.as_object_mut().expect("config serialises to an object");
        for (k, val) in &self.model {
            if !obj.contains_key(k) {
                return Err(format!("unknown model field {k:?}"));
            }
            obj.insert(k.clone(), val.clone());
        }
        let cfg: ModelConfig = serde_json::from_value(v).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn train_config(&self, seed_override: Option<u64>) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            adam: self.adam.unwrap_or(d.adam),
            likelihood: self.likelihood.clone().unwrap_or(d.likelihood),
            patience: self.patience.unwrap_or(d.patience),
            seed: seed_override.or(self.seed).unwrap_or(d.seed),
        }
    }
}

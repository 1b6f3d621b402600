use std::fs;
use std::path::Path;
use std::str::FromStr;

use adaseg::losses::Weighting;
use adaseg::training::HpoSpace;
use adaseg::{ModelSpec, OptimizerKind, TrainConfig};
use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    Single,
    Adaptive,
    AdaptiveVoxel,
    AdaptiveSlice,
    Semi,
}

impl Method {
    pub fn weighting(self) -> Weighting {
        match self {
            Method::AdaptiveVoxel => Weighting::Voxel,
            Method::AdaptiveSlice => Weighting::Slice,
            _ => Weighting::None,
        }
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.into())).map_err(|_| usage!("unknown method {s:?}"))
    }
}

/// Everything a training command needs besides the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub structure: Option<String>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub hpo: HpoSpace,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Adaptive,
            structure: None,
            model: ModelSpec::default(),
            train: TrainConfig {
                optimizer: OptimizerKind::Adam,
                learning_rate: 2e-3,
                batch_size: 4,
                epochs: 30,
                seed: 0,
                ..TrainConfig::default()
            },
            hpo: HpoSpace::default(),
        }
    }
}

/// Overlays `patch` on `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Flags shared by the training commands. Unset flags fall back to the
/// config file, then to the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    /// JSON file with any subset of `method`, `structure`, `model`, `train`, `hpo`.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// U-Net depth (3, 4 or 5).
    #[arg(long)]
    pub depth: Option<usize>,
    /// Filters of the first level (8, 16, 32 or 64).
    #[arg(long)]
    pub base_filters: Option<usize>,
    /// Spatial dropout rate.
    #[arg(long)]
    pub dropout: Option<f32>,
    /// sgd_momentum, rmsprop or adam.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Weight of the Dice term in the combined loss.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Validation DSC every this many epochs.
    #[arg(long)]
    pub eval_every: Option<usize>,
}

impl TrainFlags {
    /// Resolves flags > config file > defaults.
    pub fn resolve(&self, method: Option<Method>, structure: Option<&str>) -> Result<ExperimentConfig> {
        let mut value = serde_json::to_value(ExperimentConfig::default())?;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let patch: Value = serde_json::from_str(&text)
                .map_err(|e| usage!("config {}: {e}", path.display()))?;
            if !patch.is_object() {
                return Err(usage!("config {} must hold a JSON object", path.display()));
            }
            merge(&mut value, patch);
        }
        let mut cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| usage!("invalid configuration: {e}"))?;
        if let Some(m) = method {
            cfg.method = m;
        }
        if let Some(s) = structure {
            cfg.structure = Some(s.to_string());
        }
        let m = &mut cfg.model;
        if let Some(v) = self.depth {
            m.depth = v;
        }
        if let Some(v) = self.base_filters {
            m.base_filters = v;
        }
        if let Some(v) = self.dropout {
            m.spatial_dropout_rate = v;
        }
        let t = &mut cfg.train;
        if let Some(v) = &self.optimizer {
            t.optimizer = v.parse()?;
        }
        if let Some(v) = self.lr {
            t.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.alpha {
            t.loss.alpha = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.eval_every {
            t.eval_every = v;
        }
        t.loss.weighting = cfg.method.weighting();
        if cfg.method == Method::Single && cfg.structure.is_none() {
            return Err(usage!("method single needs --structure"));
        }
        if cfg.method != Method::Single && cfg.structure.is_some() {
            return Err(usage!("--structure only applies to method single"));
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

/// Reads a JSON file into `T`, reporting problems as usage errors.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"train": {"epochs": 12, "batch_size": 16}, "model": {"depth": 4}}"#).unwrap();
        let flags = TrainFlags {
            config: Some(path),
            epochs: Some(3),
            ..TrainFlags::default()
        };
        let cfg = flags.resolve(None, None).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.model.depth, 4);
        assert_eq!(cfg.train.learning_rate, 2e-3);
    }

    #[test]
    fn rejects_unknown_keys_and_missing_structure() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"train": {"epoch": 12}}"#).unwrap();
        let flags = TrainFlags {
            config: Some(path),
            ..TrainFlags::default()
        };
        assert!(flags.resolve(None, None).is_err());
        assert!(TrainFlags::default().resolve(Some(Method::Single), None).is_err());
        assert!(TrainFlags::default().resolve(Some(Method::Single), Some("disk")).is_ok());
    }
}

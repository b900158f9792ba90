//! Resolved run configurations.
//!
//! Each command starts from its defaults, overlays the keys of an optional
//! JSON config file, then overlays the flags that were actually given.
//! Unknown keys are rejected at every layer.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use xdiag::data::{SplitSpec, SynthSpec};
use xdiag::kancd::{KancdDims, MfType};
use xdiag::neuralcd::NeuralCdDims;
use xdiag::train::TrainConfig;
use xdiag::transfer::DEFAULT_DROPOUT;
use xdiag::Error;

use crate::args::FileFormat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub subject: String,
    pub n_students: usize,
    pub n_items: usize,
    pub n_knowledge: usize,
    pub slip: f64,
    pub guess: f64,
    pub mastery_rate: f64,
    pub avg_knowledge_per_item: f64,
    pub seed: u64,
    pub format: FileFormat,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SynthSpec::default();
        SynthConfig {
            subject: s.subject,
            n_students: s.n_students,
            n_items: s.n_items,
            n_knowledge: s.n_knowledge,
            slip: s.slip,
            guess: s.guess,
            mastery_rate: s.mastery_rate,
            avg_knowledge_per_item: s.avg_knowledge_per_item,
            seed: s.seed,
            format: FileFormat::Csv,
        }
    }
}

impl SynthConfig {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            subject: self.subject.clone(),
            n_students: self.n_students,
            n_items: self.n_items,
            n_knowledge: self.n_knowledge,
            slip: self.slip,
            guess: self.guess,
            mastery_rate: self.mastery_rate,
            avg_knowledge_per_item: self.avg_knowledge_per_item,
            seed: self.seed,
        }
    }
}

/// Optimizer, early stopping and split settings shared by `train` and
/// `transfer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub patience: usize,
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub stratify_by_student: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SplitSpec::default();
        Schedule {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: t.seed,
            patience: t.patience,
            train_fraction: s.train,
            valid_fraction: s.valid,
            test_fraction: s.test,
            stratify_by_student: s.stratify_by_student,
        }
    }
}

impl Schedule {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            patience: self.patience,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train: self.train_fraction,
            valid: self.valid_fraction,
            test: self.test_fraction,
            seed: self.seed,
            stratify_by_student: self.stratify_by_student,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    #[serde(flatten)]
    pub schedule: Schedule,
    pub hidden1: usize,
    pub hidden2: usize,
    /// KaNCD only; `None` picks `min(20, K - 1)`.
    pub latent_dim: Option<usize>,
    pub mf_type: MfType,
    /// Padded knowledge width; `None` keeps the data's own.
    pub k_common: Option<usize>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            schedule: Schedule::default(),
            hidden1: NeuralCdDims::DEFAULT_HIDDEN1,
            hidden2: NeuralCdDims::DEFAULT_HIDDEN2,
            latent_dim: None,
            mf_type: MfType::Gmf,
            k_common: None,
        }
    }
}

impl TrainRunConfig {
    pub fn resolved_latent_dim(&self, n_knowledge: usize) -> usize {
        self.latent_dim
            .unwrap_or_else(|| KancdDims::DEFAULT_LATENT_DIM.min(n_knowledge.saturating_sub(1)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferRunConfig {
    #[serde(flatten)]
    pub schedule: Schedule,
    pub head1: Option<usize>,
    pub head2: Option<usize>,
    pub dropout: f64,
    pub freeze_embeddings: bool,
}

impl Default for TransferRunConfig {
    fn default() -> Self {
        TransferRunConfig {
            schedule: Schedule::default(),
            head1: None,
            head2: None,
            dropout: DEFAULT_DROPOUT,
            freeze_embeddings: false,
        }
    }
}

/// Defaults, then the config file, then `overrides`.
pub fn resolve<T>(file: Option<&Path>, overrides: Value) -> Result<T, Error>
where
    T: Default + Serialize + DeserializeOwned,
{
    let mut merged = match serde_json::to_value(T::default())? {
        Value::Object(m) => m,
        _ => unreachable!("configs serialize as objects"),
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let layer: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        overlay(&mut merged, layer, &path.display().to_string())?;
    }
    overlay(&mut merged, overrides, "command line")?;
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))
}

fn overlay(base: &mut Map<String, Value>, layer: Value, origin: &str) -> Result<(), Error> {
    let Value::Object(layer) = layer else {
        return Err(Error::Config(format!("{origin}: config must be a JSON object")));
    };
    for (k, v) in layer {
        if !base.contains_key(&k) {
            return Err(Error::Config(format!("{origin}: unknown key `{k}`")));
        }
        base.insert(k, v);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flags_override_file_and_defaults() {
        let dir = std::env::temp_dir().join(format!("xdiag-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.json");
        std::fs::write(&path, r#"{"epochs": 7, "hidden1": 9, "mf_type": "ncf2"}"#).unwrap();
        let cfg: TrainRunConfig = resolve(Some(&path), json!({"epochs": 3})).unwrap();
        std::fs::remove_dir_all(dir).ok();
        assert_eq!(cfg.schedule.epochs, 3);
        assert_eq!(cfg.hidden1, 9);
        assert_eq!(cfg.hidden2, NeuralCdDims::DEFAULT_HIDDEN2);
        assert_eq!(cfg.mf_type, MfType::Ncf2);
        assert_eq!(cfg.schedule.learning_rate, 2e-3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = resolve::<TransferRunConfig>(None, json!({"lr": 0.1})).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn wrong_types_are_config_errors() {
        assert!(matches!(
            resolve::<SynthConfig>(None, json!({"n_students": "many"})),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn default_latent_dim_stays_below_k() {
        let cfg = TrainRunConfig::default();
        assert_eq!(cfg.resolved_latent_dim(8), 7);
        assert_eq!(cfg.resolved_latent_dim(100), 20);
    }
}

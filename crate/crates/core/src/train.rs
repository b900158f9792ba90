//! Mini-batch training shared by every model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SubjectDataset;
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::model::{check_compatible, DiagnosisModel};
use crate::tensor::{Adam, AdamConfig, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without a validation-AUC improvement before stopping;
    /// 0 disables early stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 256,
            learning_rate: 2e-3,
            seed: 0,
            patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy per training record.
    pub train_loss: f64,
    pub valid_auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

/// Summed cross-entropy of the model on `ds`, dropout off.
pub fn dataset_loss(model: &dyn DiagnosisModel, ds: &SubjectDataset) -> Result<f64> {
    let preds = model.predict_dataset(ds)?;
    let store = crate::tensor::ParamStore::new();
    let mut tape = Tape::new(&store);
    let p = tape.constant(crate::tensor::Matrix::column_vector(&preds));
    let targets: Vec<f64> = ds.interactions().iter().map(|it| it.score).collect();
    let l = tape.bce(p, &targets)?;
    Ok(tape.value(l).data()[0])
}

fn valid_auc(model: &dyn DiagnosisModel, valid: &SubjectDataset) -> Result<Option<f64>> {
    if valid.is_empty() {
        return Ok(None);
    }
    let preds = model.predict_dataset(valid)?;
    let labels: Vec<bool> = valid.records().iter().map(|r| r.label()).collect();
    match auc(&preds, &labels) {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Minimizes summed binary cross-entropy with Adam over shuffled
/// mini-batches, projecting non-negative parameters after every step.
///
/// After each epoch the validation AUC is measured; the parameters of the
/// best epoch are restored at the end. When no epoch produces a defined
/// validation AUC the final parameters are kept.
pub fn fit(
    model: &mut dyn DiagnosisModel,
    train: &SubjectDataset,
    valid: &SubjectDataset,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    check_compatible(&*model, train)?;
    if !valid.is_empty() {
        check_compatible(&*model, valid)?;
    }

    let mut adam = Adam::new(
        model.params(),
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    )?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, crate::tensor::ParamStore)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let its: Vec<_> = batch.iter().map(|&i| train.interactions()[i]).collect();
            let students: Vec<usize> = its.iter().map(|it| it.student).collect();
            let items: Vec<usize> = its.iter().map(|it| it.item).collect();
            let targets: Vec<f64> = its.iter().map(|it| it.score).collect();
            let grads = {
                let mut tape = Tape::new(model.params());
                let y = model.forward_batch(&mut tape, &students, &items, train.q().gather(&items), true, &mut dropout_rng)?;
                let loss = tape.bce(y, &targets)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        detail: format!("loss {value}"),
                    });
                }
                total += value;
                tape.backward(loss)?
            };
            adam.step(model.params_mut(), &grads).map_err(|e| match e {
                Error::NonFiniteGradient { param } => Error::Divergence {
                    epoch,
                    detail: format!("non-finite gradient for `{param}`"),
                },
                e => e,
            })?;
        }

        let auc = valid_auc(&*model, valid)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            valid_auc: auc,
        });
        log::info!(
            "epoch {epoch}: train loss {:.6}, valid auc {}",
            total / train.len() as f64,
            auc.map_or("n/a".to_string(), |a| format!("{a:.6}"))
        );

        if let Some(a) = auc {
            if best.as_ref().is_none_or(|(b, _)| a > *b) {
                best = Some((a, model.params().clone()));
                history.best_epoch = Some(epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience > 0 && since_best >= cfg.patience {
                    break;
                }
            }
        }
    }

    match best {
        Some((_, params)) => *model.params_mut() = params,
        None => history.best_epoch = history.epochs.last().map(|e| e.epoch),
    }
    Ok(history)
}

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::{ParamId, ParamStore};
use super::tape::Gradients;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state with a non-negativity projection.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    steps: u64,
    nonneg: Vec<bool>,
}

impl Adam {
    /// The projection mask is taken from the store's `nonneg` flags.
    pub fn new(params: &ParamStore, config: AdamConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                config.learning_rate
            )));
        }
        let shapes = params.ids().map(|id| params.value(id).shape());
        let first: Vec<Matrix> = shapes.map(|(r, c)| Matrix::zeros(r, c)).collect();
        Ok(Adam {
            config,
            second: first.clone(),
            first,
            steps: 0,
            nonneg: params.ids().map(|id| params.get(id).nonneg).collect(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn is_nonneg(&self, id: ParamId) -> bool {
        self.nonneg[id.index()]
    }

    /// One update. Parameters without a gradient are treated as having a
    /// zero gradient; frozen parameters are skipped entirely. Gradients are
    /// validated before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for id in params.ids() {
            if let Some(g) = grads.get(id) {
                if g.shape() != params.value(id).shape() {
                    return Err(Error::Dimension {
                        op: "adam_step",
                        lhs: params.value(id).shape(),
                        rhs: g.shape(),
                    });
                }
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient {
                        param: params.name(id).to_string(),
                    });
                }
            }
        }

        self.steps += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.steps as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for id in params.ids() {
            if params.is_frozen(id) {
                continue;
            }
            let i = id.index();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let w = params.value_mut(id).data_mut();
            match grads.get(id) {
                Some(g) => {
                    for (((w, m), v), &g) in w.iter_mut().zip(m).zip(v).zip(g.data()) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *w -= learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    }
                }
                None => {
                    for ((w, m), v) in w.iter_mut().zip(m).zip(v) {
                        *m *= beta1;
                        *v *= beta2;
                        *w -= learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    }
                }
            }
            if self.nonneg[i] {
                for w in w.iter_mut() {
                    if *w < 0.0 {
                        *w = 0.0;
                    }
                }
            }
        }
        Ok(())
    }
}

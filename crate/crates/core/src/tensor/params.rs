use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamId(usize);

impl ParamId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    /// Projected onto `≥ 0` after every optimizer step.
    pub nonneg: bool,
    /// Never touched by the optimizer.
    pub frozen: bool,
}

/// Ordered collection of named trainable matrices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix, nonneg: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value,
            nonneg,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn assign(&mut self, id: ParamId, value: Matrix) -> Result<()> {
        let slot = &mut self.params[id.0].value;
        slot.check_same_shape(&value, "assign")?;
        *slot = value;
        Ok(())
    }

    pub fn named_values(&self) -> BTreeMap<String, Matrix> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    /// Overwrites every parameter from a name → matrix map. Every parameter
    /// must be present with a matching shape; extra entries are an error.
    pub fn load_named(&mut self, values: &BTreeMap<String, Matrix>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} matrices, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for p in &mut self.params {
            let v = values
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing matrix `{}`", p.name)))?;
            if v.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "matrix `{}` has shape {:?}, expected {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

/// Uniform Glorot initialization. Non-negative parameters take the absolute
/// value of each draw.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, nonneg: bool, rng: &mut R) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| {
            let v = rng.gen_range(-bound..=bound);
            if nonneg {
                v.abs()
            } else {
                v
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

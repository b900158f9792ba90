//! Neural cognitive diagnosis with direct per-concept embeddings.
//!
//! Students carry a row of the proficiency matrix `A` (N×K), items a row of
//! the difficulty matrix `B` (M×K) and a discrimination scalar `D` (M×1).
//! The sigmoids of those rows, masked by the item's Q-matrix row, feed a
//! three-layer network whose weights are kept non-negative so that raising
//! any examined proficiency never lowers the predicted probability.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiagnosisModel, Embedding, InteractionNet, ModelKind};
use crate::tensor::{glorot_uniform, NodeId, ParamId, ParamStore, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuralCdDims {
    pub n_students: usize,
    pub n_items: usize,
    pub n_knowledge: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl NeuralCdDims {
    pub const DEFAULT_HIDDEN1: usize = 512;
    pub const DEFAULT_HIDDEN2: usize = 256;

    pub fn validate(&self) -> Result<()> {
        if [self.n_students, self.n_items, self.n_knowledge, self.hidden1, self.hidden2].contains(&0) {
            return Err(Error::Config(format!("all model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Embedding block `A`, `B`, `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeuralCdEmbedding {
    pub a: ParamId,
    pub b: ParamId,
    pub d: ParamId,
    n_students: usize,
    n_items: usize,
    n_knowledge: usize,
}

impl NeuralCdEmbedding {
    pub fn register<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        n_students: usize,
        n_items: usize,
        n_knowledge: usize,
        rng: &mut R,
    ) -> Self {
        let a = store.add("A", glorot_uniform(n_students, n_knowledge, false, rng), false);
        let b = store.add("B", glorot_uniform(n_items, n_knowledge, false, rng), false);
        let d = store.add("D", glorot_uniform(n_items, 1, false, rng), false);
        NeuralCdEmbedding {
            a,
            b,
            d,
            n_students,
            n_items,
            n_knowledge,
        }
    }
}

impl Embedding for NeuralCdEmbedding {
    fn proficiency(&self, tape: &mut Tape<'_>, students: &[usize]) -> Result<NodeId> {
        let a = tape.param(self.a);
        let rows = tape.gather_rows(a, students)?;
        Ok(tape.sigmoid(rows))
    }

    fn item_factors(&self, tape: &mut Tape<'_>, items: &[usize]) -> Result<(NodeId, NodeId)> {
        let b = tape.param(self.b);
        let d = tape.param(self.d);
        let b_rows = tape.gather_rows(b, items)?;
        let d_rows = tape.gather_rows(d, items)?;
        Ok((tape.sigmoid(b_rows), tape.sigmoid(d_rows)))
    }

    fn n_students(&self) -> usize {
        self.n_students
    }

    fn n_items(&self) -> usize {
        self.n_items
    }

    fn n_knowledge(&self) -> usize {
        self.n_knowledge
    }

    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.a, self.b, self.d]
    }
}

#[derive(Debug, Clone)]
pub struct NeuralCd {
    dims: NeuralCdDims,
    store: ParamStore,
    emb: NeuralCdEmbedding,
    net: InteractionNet,
}

impl NeuralCd {
    /// Glorot-initialized model; interaction weights start non-negative.
    pub fn new(dims: NeuralCdDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let emb = NeuralCdEmbedding::register(&mut store, dims.n_students, dims.n_items, dims.n_knowledge, &mut rng);
        let net = InteractionNet::register(&mut store, dims.n_knowledge, dims.hidden1, dims.hidden2, &mut rng);
        Ok(NeuralCd { dims, store, emb, net })
    }

    pub fn dims(&self) -> &NeuralCdDims {
        &self.dims
    }

    pub fn net(&self) -> &InteractionNet {
        &self.net
    }

    pub fn neuralcd_embedding(&self) -> &NeuralCdEmbedding {
        &self.emb
    }

    /// Zero-extends every knowledge-indexed parameter (`A`, `B` and the
    /// input columns of `W1`) to `k_common`. The padded model makes
    /// identical predictions on data whose padded concepts are never
    /// examined, and keeps doing so under training.
    pub fn pad_knowledge(&self, k_common: usize) -> Result<NeuralCd> {
        if k_common < self.dims.n_knowledge {
            return Err(Error::Dimension {
                op: "pad_knowledge",
                lhs: (self.dims.n_knowledge, 1),
                rhs: (k_common, 1),
            });
        }
        let mut out = self.clone();
        out.dims.n_knowledge = k_common;
        out.emb.n_knowledge = k_common;
        for id in [self.emb.a, self.emb.b, self.net.w1] {
            let padded = self.store.value(id).pad_cols(k_common)?;
            *out.store.value_mut(id) = padded;
        }
        Ok(out)
    }
}

impl DiagnosisModel for NeuralCd {
    fn kind(&self) -> ModelKind {
        ModelKind::NeuralCd
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn embedding(&self) -> &dyn Embedding {
        &self.emb
    }

    fn interaction(
        &self,
        tape: &mut Tape<'_>,
        x: NodeId,
        _training: bool,
        _rng: &mut dyn RngCore,
    ) -> Result<NodeId> {
        self.net.forward(tape, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::QMatrix;
    use crate::tensor::Matrix;
    use crate::tensor::sigmoid;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn tiny(seed: u64) -> NeuralCd {
        NeuralCd::new(
            NeuralCdDims {
                n_students: 2,
                n_items: 2,
                n_knowledge: 2,
                hidden1: 3,
                hidden2: 2,
            },
            seed,
        )
        .unwrap()
    }

    fn q2() -> QMatrix {
        QMatrix::new(
            vec!["e0".into(), "e1".into()],
            vec!["k0".into(), "k1".into()],
            m(&[&[1.0, 0.0], &[1.0, 1.0]]),
        )
        .unwrap()
    }

    #[test]
    fn null_input_fixpoint() {
        let mut model = tiny(1);
        let emb = model.emb;
        for id in [emb.a, emb.b, emb.d] {
            let (r, c) = model.store.value(id).shape();
            model.store.assign(id, Matrix::zeros(r, c)).unwrap();
        }
        let q = q2();
        let y00 = model.forward(0, 0, &q).unwrap().y;
        let y11 = model.forward(1, 1, &q).unwrap().y;
        assert_eq!(y00, y11);
        let mlp_at_zero = model.predict_with_proficiency(&[0.5, 0.5], 0, &[0.0, 0.0]).unwrap();
        assert_eq!(y00, mlp_at_zero);
    }

    #[test]
    fn masked_concept_has_no_effect() {
        let mut model = tiny(2);
        let q = q2();
        let before = model.forward(0, 0, &q).unwrap().y;
        let a = model.emb.a;
        model.store.value_mut(a).set(0, 1, 25.0);
        let after = model.forward(0, 0, &q).unwrap().y;
        assert_eq!(before, after);
        // the same change is visible through an item that examines k1
        let y1 = model.forward(0, 1, &q).unwrap().y;
        model.store.value_mut(a).set(0, 1, -25.0);
        assert_ne!(y1, model.forward(0, 1, &q).unwrap().y);
    }

    #[test]
    fn diagnose_is_sigmoid_of_a_row() {
        let mut model = tiny(3);
        let a = model.emb.a;
        model.store.assign(a, m(&[&[0.0, 0.0], &[1.0, -2.0]])).unwrap();
        assert_eq!(model.diagnose(0).unwrap(), vec![0.5, 0.5]);
        assert_eq!(model.diagnose(1).unwrap(), vec![sigmoid(1.0), sigmoid(-2.0)]);
        let base = model.diagnose(1).unwrap();
        model.store.value_mut(a).set(1, 0, 1.5);
        let bumped = model.diagnose(1).unwrap();
        assert!(bumped[0] > base[0]);
        assert_eq!(bumped[1], base[1]);
    }

    #[test]
    fn out_of_range_indices() {
        let model = tiny(4);
        let q = q2();
        assert!(matches!(
            model.forward(2, 0, &q),
            Err(Error::IndexOutOfRange { kind: "student", .. })
        ));
        assert!(matches!(
            model.forward(0, 5, &q),
            Err(Error::IndexOutOfRange { kind: "item", .. })
        ));
        assert!(model.diagnose(9).is_err());
    }

    #[test]
    fn interaction_weights_start_nonneg() {
        let model = tiny(5);
        for id in [model.net.w1, model.net.w2, model.net.w3] {
            assert!(model.store.value(id).data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn padded_model_predicts_identically() {
        let model = tiny(6);
        let q = q2();
        let padded = model.pad_knowledge(5).unwrap();
        let qp = q.pad(5).unwrap();
        for (s, e) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(model.forward(s, e, &q).unwrap().y, padded.forward(s, e, &qp).unwrap().y);
        }
        assert_eq!(padded.diagnose(0).unwrap().len(), 5);
        assert!(model.pad_knowledge(1).is_err());
    }
}

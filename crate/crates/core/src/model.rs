//! Pieces shared by every diagnosis model: the embedding contract, the
//! monotone interaction network, and batched prediction.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{QMatrix, SubjectDataset};
use crate::error::{Error, Result};
use crate::tensor::{glorot_uniform, Matrix, NodeId, ParamId, ParamStore, Tape};

/// Records scored per tape during inference.
pub const PREDICT_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[serde(rename = "neuralcd")]
    NeuralCd,
    #[serde(rename = "kancd")]
    Kancd,
    #[serde(rename = "transfer-neuralcd")]
    TransferNeuralCd,
    #[serde(rename = "transfer-kancd")]
    TransferKancd,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::NeuralCd => "neuralcd",
            ModelKind::Kancd => "kancd",
            ModelKind::TransferNeuralCd => "transfer-neuralcd",
            ModelKind::TransferKancd => "transfer-kancd",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        [
            ModelKind::NeuralCd,
            ModelKind::Kancd,
            ModelKind::TransferNeuralCd,
            ModelKind::TransferKancd,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Probability that `student` answers `item` correctly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub student: usize,
    pub item: usize,
    pub y: f64,
}

/// Produces the student and item factors that feed the interaction input.
pub trait Embedding {
    /// `h^s` rows for the given students, post-sigmoid, `B×K`.
    fn proficiency(&self, tape: &mut Tape<'_>, students: &[usize]) -> Result<NodeId>;

    /// `(h^diff, h^disc)` for the given items, post-sigmoid, `B×K` and `B×1`.
    fn item_factors(&self, tape: &mut Tape<'_>, items: &[usize]) -> Result<(NodeId, NodeId)>;

    fn n_students(&self) -> usize;
    fn n_items(&self) -> usize;
    fn n_knowledge(&self) -> usize;

    /// Every parameter owned by the embedding block.
    fn param_ids(&self) -> Vec<ParamId>;
}

/// `x = Q_e ∘ (h^s − h^diff) · h^disc`, row-wise over a batch.
pub fn interaction_input(
    tape: &mut Tape<'_>,
    hs: NodeId,
    hdiff: NodeId,
    hdisc: NodeId,
    q: NodeId,
) -> Result<NodeId> {
    let gap = tape.sub(hs, hdiff)?;
    let masked = tape.hadamard(q, gap)?;
    tape.scale_rows(masked, hdisc)
}

/// `sigmoid(x · Wᵀ + b)` with `W` stored as `out × in` and `b` as `1 × out`.
pub fn dense_sigmoid(tape: &mut Tape<'_>, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
    let wn = tape.param(w);
    let bn = tape.param(b);
    let z = tape.matmul_t(x, wn)?;
    let z = tape.add_row(z, bn)?;
    Ok(tape.sigmoid(z))
}

/// `x · Wᵀ + b` without activation.
pub fn dense_linear(tape: &mut Tape<'_>, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
    let wn = tape.param(w);
    let bn = tape.param(b);
    let z = tape.matmul_t(x, wn)?;
    tape.add_row(z, bn)
}

/// Adds a weight/bias pair for a `fan_in → fan_out` layer.
pub(crate) fn add_layer<R: rand::Rng + ?Sized>(
    store: &mut ParamStore,
    weight: &str,
    bias: &str,
    fan_in: usize,
    fan_out: usize,
    nonneg: bool,
    rng: &mut R,
) -> (ParamId, ParamId) {
    let w = store.add(weight, glorot_uniform(fan_out, fan_in, nonneg, rng), nonneg);
    let b = store.add(bias, Matrix::zeros(1, fan_out), false);
    (w, b)
}

/// Three-layer network `K → h1 → h2 → 1` with sigmoid activations and
/// non-negative weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionNet {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
}

impl InteractionNet {
    pub fn register<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        k: usize,
        h1: usize,
        h2: usize,
        rng: &mut R,
    ) -> Self {
        let (w1, b1) = add_layer(store, "W1", "b1", k, h1, true, rng);
        let (w2, b2) = add_layer(store, "W2", "b2", h1, h2, true, rng);
        let (w3, b3) = add_layer(store, "W3", "b3", h2, 1, true, rng);
        InteractionNet { w1, b1, w2, b2, w3, b3 }
    }

    /// The `f2` activation.
    pub fn features(&self, tape: &mut Tape<'_>, x: NodeId) -> Result<NodeId> {
        let f1 = dense_sigmoid(tape, x, self.w1, self.b1)?;
        dense_sigmoid(tape, f1, self.w2, self.b2)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: NodeId) -> Result<NodeId> {
        let f2 = self.features(tape, x)?;
        dense_sigmoid(tape, f2, self.w3, self.b3)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]
    }
}

/// Common interface of the trainable diagnosis models.
pub trait DiagnosisModel {
    fn kind(&self) -> ModelKind;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn embedding(&self) -> &dyn Embedding;

    /// Maps the interaction input `x` (`B×K`) to probabilities (`B×1`).
    fn interaction(
        &self,
        tape: &mut Tape<'_>,
        x: NodeId,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<NodeId>;

    /// Knowledge dimension without padding; diagnoses are cut to this.
    fn n_real_knowledge(&self) -> usize {
        self.embedding().n_knowledge()
    }

    /// Records the full forward pass for a batch. `q` holds the Q-matrix
    /// rows of `items`.
    fn forward_batch(
        &self,
        tape: &mut Tape<'_>,
        students: &[usize],
        items: &[usize],
        q: Matrix,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<NodeId> {
        let emb = self.embedding();
        check_indices(emb, students, items)?;
        if q.shape() != (items.len(), emb.n_knowledge()) {
            return Err(Error::Dimension {
                op: "q_batch",
                lhs: q.shape(),
                rhs: (items.len(), emb.n_knowledge()),
            });
        }
        let hs = emb.proficiency(tape, students)?;
        let (hdiff, hdisc) = emb.item_factors(tape, items)?;
        let qn = tape.constant(q);
        let x = interaction_input(tape, hs, hdiff, hdisc, qn)?;
        self.interaction(tape, x, training, rng)
    }

    /// Inference-mode probabilities for aligned student/item lists.
    fn predict(&self, students: &[usize], items: &[usize], q: &QMatrix) -> Result<Vec<f64>> {
        if students.len() != items.len() {
            return Err(Error::Dimension {
                op: "predict",
                lhs: (students.len(), 1),
                rhs: (items.len(), 1),
            });
        }
        check_indices(self.embedding(), students, items)?;
        if q.n_items() != self.embedding().n_items() {
            return Err(Error::Dimension {
                op: "predict_q",
                lhs: (q.n_items(), q.n_knowledge()),
                rhs: (self.embedding().n_items(), self.embedding().n_knowledge()),
            });
        }
        let mut out = Vec::with_capacity(students.len());
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        for (s, e) in students.chunks(PREDICT_CHUNK).zip(items.chunks(PREDICT_CHUNK)) {
            let mut tape = Tape::new(self.params());
            let y = self.forward_batch(&mut tape, s, e, q.gather(e), false, &mut rng)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(out)
    }

    fn predict_dataset(&self, ds: &SubjectDataset) -> Result<Vec<f64>> {
        let (s, e): (Vec<usize>, Vec<usize>) = ds.interactions().iter().map(|it| (it.student, it.item)).unzip();
        self.predict(&s, &e, ds.q())
    }

    fn forward(&self, student: usize, item: usize, q: &QMatrix) -> Result<Prediction> {
        let y = self.predict(&[student], &[item], q)?[0];
        Ok(Prediction { student, item, y })
    }

    /// Trained `h^s` for one student, padding removed.
    fn diagnose(&self, student: usize) -> Result<Vec<f64>> {
        let emb = self.embedding();
        check_indices(emb, &[student], &[])?;
        let mut tape = Tape::new(self.params());
        let hs = emb.proficiency(&mut tape, &[student])?;
        Ok(tape.value(hs).data()[..self.n_real_knowledge()].to_vec())
    }

    /// Output for an explicit proficiency vector `hs` (full, padded width)
    /// against one item, all other factors taken from the model.
    fn predict_with_proficiency(&self, hs: &[f64], item: usize, q_row: &[f64]) -> Result<f64> {
        let emb = self.embedding();
        check_indices(emb, &[], &[item])?;
        let k = emb.n_knowledge();
        if hs.len() != k || q_row.len() != k {
            return Err(Error::Dimension {
                op: "predict_with_proficiency",
                lhs: (1, hs.len()),
                rhs: (1, k),
            });
        }
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut tape = Tape::new(self.params());
        let hsn = tape.constant(Matrix::row_vector(hs));
        let (hdiff, hdisc) = emb.item_factors(&mut tape, &[item])?;
        let qn = tape.constant(Matrix::row_vector(q_row));
        let x = interaction_input(&mut tape, hsn, hdiff, hdisc, qn)?;
        let y = self.interaction(&mut tape, x, false, &mut rng)?;
        Ok(tape.value(y).data()[0])
    }
}

pub(crate) fn check_indices(emb: &dyn Embedding, students: &[usize], items: &[usize]) -> Result<()> {
    if let Some(&s) = students.iter().find(|&&s| s >= emb.n_students()) {
        return Err(Error::IndexOutOfRange {
            kind: "student",
            index: s,
            len: emb.n_students(),
        });
    }
    if let Some(&e) = items.iter().find(|&&e| e >= emb.n_items()) {
        return Err(Error::IndexOutOfRange {
            kind: "item",
            index: e,
            len: emb.n_items(),
        });
    }
    Ok(())
}

/// Fails unless `ds` indexes the same students, items and knowledge
/// dimension as the model.
pub fn check_compatible(model: &dyn DiagnosisModel, ds: &SubjectDataset) -> Result<()> {
    let emb = model.embedding();
    let want = (emb.n_students(), emb.n_items(), emb.n_knowledge());
    let got = (ds.n_students(), ds.n_items(), ds.n_knowledge());
    if want != got {
        return Err(Error::Dataset(format!(
            "dataset `{}` has (students, items, knowledge) = {got:?}, model expects {want:?}",
            ds.subject()
        )));
    }
    Ok(())
}

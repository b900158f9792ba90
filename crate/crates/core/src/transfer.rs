//! Cross-subject transfer.
//!
//! The first two interaction layers of a pretrained model (`W1/b1`,
//! `W2/b2`) are copied and frozen; the pretrained output layer is dropped.
//! On top of the frozen `f2` activation sit two new sigmoid layers and an
//! output layer, with dropout in front of the first two. The target subject
//! gets a fresh embedding block of the same family as the source, sized to
//! the target's students and items and to the source's (padded) knowledge
//! width.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SubjectDataset;
use crate::error::{Error, Result};
use crate::kancd::{Kancd, KancdEmbedding, MfType};
use crate::model::{add_layer, dense_sigmoid, DiagnosisModel, Embedding, InteractionNet, ModelKind};
use crate::neuralcd::{NeuralCd, NeuralCdEmbedding};
use crate::tensor::{check_dropout_rate, NodeId, ParamId, ParamStore, Tape};
use crate::train::{fit, History, TrainConfig};

pub const DEFAULT_DROPOUT: f64 = 0.5;

/// A pretrained base model to transfer from.
#[derive(Debug, Clone, Copy)]
pub enum SourceModel<'a> {
    NeuralCd(&'a NeuralCd),
    Kancd(&'a Kancd),
}

impl SourceModel<'_> {
    pub fn kind(&self) -> ModelKind {
        match self {
            SourceModel::NeuralCd(_) => ModelKind::NeuralCd,
            SourceModel::Kancd(_) => ModelKind::Kancd,
        }
    }

    fn parts(&self) -> (&ParamStore, &InteractionNet, usize) {
        match self {
            SourceModel::NeuralCd(m) => (m.params(), m.net(), m.dims().n_knowledge),
            SourceModel::Kancd(m) => (m.params(), m.net(), m.dims().n_knowledge),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Width of the first head layer; defaults to half the source `h2`.
    pub head1: Option<usize>,
    /// Width of the second head layer; defaults to a quarter of `h2`.
    pub head2: Option<usize>,
    pub dropout: f64,
    /// Keep the fresh target embeddings fixed and train only the head.
    pub freeze_embeddings: bool,
    pub train: TrainConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            head1: None,
            head2: None,
            dropout: DEFAULT_DROPOUT,
            freeze_embeddings: false,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferDims {
    pub n_students: usize,
    pub n_items: usize,
    pub k_common: usize,
    pub n_real_knowledge: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub head1: usize,
    pub head2: usize,
    /// Present for KaNCD targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mf_type: Option<MfType>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetEmbedding {
    NeuralCd(NeuralCdEmbedding),
    Kancd(KancdEmbedding),
}

impl TargetEmbedding {
    fn as_dyn(&self) -> &dyn Embedding {
        match self {
            TargetEmbedding::NeuralCd(e) => e,
            TargetEmbedding::Kancd(e) => e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backbone {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Backbone {
    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Head {
    pub w4: ParamId,
    pub b4: ParamId,
    pub w5: ParamId,
    pub b5: ParamId,
    pub w6: ParamId,
    pub b6: ParamId,
}

impl Head {
    pub fn param_ids(&self) -> [ParamId; 6] {
        [self.w4, self.b4, self.w5, self.b5, self.w6, self.b6]
    }
}

#[derive(Debug, Clone)]
pub struct TransferModel {
    kind: ModelKind,
    dims: TransferDims,
    store: ParamStore,
    emb: TargetEmbedding,
    backbone: Backbone,
    head: Head,
    dropout: f64,
    source_digest: String,
}

impl TransferModel {
    /// Builds a transfer model for `target` on top of `source`.
    ///
    /// `expected`, when given, must match the source's kind. The target's
    /// knowledge dimension may be smaller than the source's and is padded
    /// up to it; it may not be larger.
    pub fn build(
        source: SourceModel<'_>,
        expected: Option<ModelKind>,
        source_digest: impl Into<String>,
        target: &SubjectDataset,
        cfg: &TransferConfig,
    ) -> Result<TransferModel> {
        if let Some(want) = expected {
            if want != source.kind() {
                return Err(Error::KindMismatch {
                    expected: want.to_string(),
                    found: source.kind().to_string(),
                });
            }
        }
        check_dropout_rate(cfg.dropout)?;
        let (src_store, net, k_common) = source.parts();
        if target.n_knowledge() > k_common {
            return Err(Error::Dimension {
                op: "transfer_knowledge",
                lhs: (target.n_knowledge(), 1),
                rhs: (k_common, 1),
            });
        }
        let hidden1 = src_store.value(net.w1).rows();
        let hidden2 = src_store.value(net.w2).rows();
        let head1 = cfg.head1.unwrap_or((hidden2 / 2).max(1));
        let head2 = cfg.head2.unwrap_or((hidden2 / 4).max(1));
        if head1 == 0 || head2 == 0 {
            return Err(Error::Config("head widths must be positive".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let mut store = ParamStore::new();
        let (emb, kind, latent_dim, mf_type) = match source {
            SourceModel::NeuralCd(_) => (
                TargetEmbedding::NeuralCd(NeuralCdEmbedding::register(
                    &mut store,
                    target.n_students(),
                    target.n_items(),
                    k_common,
                    &mut rng,
                )),
                ModelKind::TransferNeuralCd,
                None,
                None,
            ),
            SourceModel::Kancd(m) => {
                let d = m.dims().latent_dim;
                (
                    TargetEmbedding::Kancd(KancdEmbedding::register(
                        &mut store,
                        target.n_students(),
                        target.n_items(),
                        k_common,
                        d,
                        m.mf_type(),
                        &mut rng,
                    )?),
                    ModelKind::TransferKancd,
                    Some(d),
                    Some(m.mf_type()),
                )
            }
        };
        if cfg.freeze_embeddings {
            for id in emb.as_dyn().param_ids() {
                store.set_frozen(id, true);
            }
        }

        let mut copy = |name: &str, id: ParamId| {
            let p = src_store.get(id);
            let new = store.add(name, p.value.clone(), p.nonneg);
            store.set_frozen(new, true);
            new
        };
        let backbone = Backbone {
            w1: copy("W1", net.w1),
            b1: copy("b1", net.b1),
            w2: copy("W2", net.w2),
            b2: copy("b2", net.b2),
        };
        let (w4, b4) = add_layer(&mut store, "W4", "b4", hidden2, head1, true, &mut rng);
        let (w5, b5) = add_layer(&mut store, "W5", "b5", head1, head2, true, &mut rng);
        let (w6, b6) = add_layer(&mut store, "W6", "b6", head2, 1, true, &mut rng);

        Ok(TransferModel {
            kind,
            dims: TransferDims {
                n_students: target.n_students(),
                n_items: target.n_items(),
                k_common,
                n_real_knowledge: target.n_real_knowledge(),
                hidden1,
                hidden2,
                head1,
                head2,
                latent_dim,
                mf_type,
            },
            store,
            emb,
            backbone,
            head: Head { w4, b4, w5, b5, w6, b6 },
            dropout: cfg.dropout,
            source_digest: source_digest.into(),
        })
    }

    /// Reassembles a transfer model from its parameter groups, as stored in
    /// a checkpoint.
    pub(crate) fn from_parts(
        kind: ModelKind,
        dims: TransferDims,
        dropout: f64,
        freeze_embeddings: bool,
        source_digest: String,
        values: &std::collections::BTreeMap<String, crate::tensor::Matrix>,
    ) -> Result<TransferModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let emb = match (kind, dims.latent_dim, dims.mf_type) {
            (ModelKind::TransferNeuralCd, None, None) => TargetEmbedding::NeuralCd(NeuralCdEmbedding::register(
                &mut store,
                dims.n_students,
                dims.n_items,
                dims.k_common,
                &mut rng,
            )),
            (ModelKind::TransferKancd, Some(d), Some(t)) => TargetEmbedding::Kancd(KancdEmbedding::register(
                &mut store,
                dims.n_students,
                dims.n_items,
                dims.k_common,
                d,
                t,
                &mut rng,
            )?),
            _ => return Err(Error::Checkpoint(format!("inconsistent transfer dims for `{kind}`"))),
        };
        if freeze_embeddings {
            for id in emb.as_dyn().param_ids() {
                store.set_frozen(id, true);
            }
        }
        let mut frozen_layer = |w: &str, b: &str, fan_in, fan_out| {
            let (w, b) = add_layer(&mut store, w, b, fan_in, fan_out, true, &mut rng);
            store.set_frozen(w, true);
            store.set_frozen(b, true);
            (w, b)
        };
        let (w1, b1) = frozen_layer("W1", "b1", dims.k_common, dims.hidden1);
        let (w2, b2) = frozen_layer("W2", "b2", dims.hidden1, dims.hidden2);
        let (w4, b4) = add_layer(&mut store, "W4", "b4", dims.hidden2, dims.head1, true, &mut rng);
        let (w5, b5) = add_layer(&mut store, "W5", "b5", dims.head1, dims.head2, true, &mut rng);
        let (w6, b6) = add_layer(&mut store, "W6", "b6", dims.head2, 1, true, &mut rng);
        store.load_named(values)?;
        check_dropout_rate(dropout)?;
        Ok(TransferModel {
            kind,
            dims,
            store,
            emb,
            backbone: Backbone { w1, b1, w2, b2 },
            head: Head { w4, b4, w5, b5, w6, b6 },
            dropout,
            source_digest,
        })
    }

    pub fn dims(&self) -> &TransferDims {
        &self.dims
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn target_embedding(&self) -> &TargetEmbedding {
        &self.emb
    }

    pub fn embeddings_frozen(&self) -> bool {
        self.emb
            .as_dyn()
            .param_ids()
            .first()
            .is_some_and(|&id| self.store.is_frozen(id))
    }

    /// Name → value for one parameter group.
    pub fn group_values(&self, ids: &[ParamId]) -> std::collections::BTreeMap<String, crate::tensor::Matrix> {
        ids.iter()
            .map(|&id| (self.store.name(id).to_string(), self.store.value(id).clone()))
            .collect()
    }

    /// SHA-256 over the exact bit patterns of the backbone parameters.
    pub fn backbone_digest(&self) -> String {
        let mut h = Sha256::new();
        for id in self.backbone.param_ids() {
            let m = self.store.value(id);
            h.update(self.store.name(id).as_bytes());
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for v in m.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Diagnosed proficiency on the target subject, padding removed.
    pub fn diagnose_target(&self, student: usize) -> Result<Vec<f64>> {
        self.diagnose(student)
    }
}

impl DiagnosisModel for TransferModel {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn embedding(&self) -> &dyn Embedding {
        self.emb.as_dyn()
    }

    fn n_real_knowledge(&self) -> usize {
        self.dims.n_real_knowledge
    }

    fn interaction(
        &self,
        tape: &mut Tape<'_>,
        x: NodeId,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<NodeId> {
        let bb = &self.backbone;
        let f1 = dense_sigmoid(tape, x, bb.w1, bb.b1)?;
        let f2 = dense_sigmoid(tape, f1, bb.w2, bb.b2)?;
        let f2 = tape.dropout(f2, self.dropout, rng, training)?;
        let l1 = dense_sigmoid(tape, f2, self.head.w4, self.head.b4)?;
        let l1 = tape.dropout(l1, self.dropout, rng, training)?;
        let l2 = dense_sigmoid(tape, l1, self.head.w5, self.head.b5)?;
        dense_sigmoid(tape, l2, self.head.w6, self.head.b6)
    }
}

/// Pads `ds` to the model's knowledge width when needed.
pub fn align_target(model: &TransferModel, ds: &SubjectDataset) -> Result<SubjectDataset> {
    if ds.n_knowledge() == model.dims.k_common {
        return Ok(ds.clone());
    }
    ds.pad_knowledge(model.dims.k_common)
}

/// Fine-tunes the head and, unless frozen, the target embeddings. The
/// backbone is verified bit-for-bit unchanged afterwards.
pub fn fine_tune(
    model: &mut TransferModel,
    train: &SubjectDataset,
    valid: &SubjectDataset,
    cfg: &TrainConfig,
) -> Result<History> {
    let train = align_target(model, train)?;
    let valid = align_target(model, valid)?;
    let before = model.backbone_digest();
    let history = fit(model, &train, &valid, cfg)?;
    let after = model.backbone_digest();
    if before != after {
        return Err(Error::Checkpoint(format!(
            "frozen backbone changed during fine-tuning ({before} → {after})"
        )));
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};
    use crate::kancd::KancdDims;
    use crate::neuralcd::NeuralCdDims;

    fn dataset(k: usize, seed: u64) -> SubjectDataset {
        synth_generate(&SynthSpec {
            n_students: 12,
            n_items: 2 * k,
            n_knowledge: k,
            seed,
            ..SynthSpec::default()
        })
        .unwrap()
        .dataset
    }

    fn source(k: usize) -> NeuralCd {
        NeuralCd::new(
            NeuralCdDims {
                n_students: 10,
                n_items: 8,
                n_knowledge: k,
                hidden1: 8,
                hidden2: 8,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn smaller_target_is_padded() {
        let src = source(16);
        let target = dataset(11, 2);
        let model = TransferModel::build(SourceModel::NeuralCd(&src), None, "x", &target, &TransferConfig::default()).unwrap();
        assert_eq!(model.dims().k_common, 16);
        assert_eq!(model.dims().n_real_knowledge, 11);
        assert_eq!(model.dims().head1, 4);
        assert_eq!(model.dims().head2, 2);
        assert_eq!(model.diagnose_target(0).unwrap().len(), 11);
    }

    #[test]
    fn larger_target_rejected() {
        let src = source(3);
        let target = dataset(5, 2);
        assert!(TransferModel::build(SourceModel::NeuralCd(&src), None, "x", &target, &TransferConfig::default()).is_err());
    }

    #[test]
    fn self_transfer_copies_backbone() {
        let src = source(4);
        let target = dataset(4, 3);
        let model = TransferModel::build(SourceModel::NeuralCd(&src), None, "x", &target, &TransferConfig::default()).unwrap();
        let net = src.net();
        assert_eq!(model.params().value(model.backbone.w1), src.params().value(net.w1));
        assert_eq!(model.params().value(model.backbone.b2), src.params().value(net.b2));
        for id in model.backbone.param_ids() {
            assert!(model.params().is_frozen(id));
        }
        for id in model.head.param_ids() {
            assert!(!model.params().is_frozen(id));
        }
    }

    #[test]
    fn kind_mismatch() {
        let src = Kancd::new(
            KancdDims {
                n_students: 4,
                n_items: 4,
                n_knowledge: 4,
                latent_dim: 2,
                hidden1: 4,
                hidden2: 4,
            },
            MfType::Gmf,
            0,
        )
        .unwrap();
        let target = dataset(4, 1);
        let err = TransferModel::build(
            SourceModel::Kancd(&src),
            Some(ModelKind::NeuralCd),
            "x",
            &target,
            &TransferConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::KindMismatch { .. }));
        let ok = TransferModel::build(SourceModel::Kancd(&src), Some(ModelKind::Kancd), "x", &target, &TransferConfig::default()).unwrap();
        assert_eq!(ok.kind(), ModelKind::TransferKancd);
    }

    #[test]
    fn inference_is_deterministic_and_rate_zero_matches() {
        let src = source(4);
        let target = dataset(4, 5);
        let mut model = TransferModel::build(SourceModel::NeuralCd(&src), None, "x", &target, &TransferConfig::default()).unwrap();
        let q = target.q();
        let a = model.forward(0, 1, q).unwrap();
        let b = model.forward(0, 1, q).unwrap();
        assert_eq!(a, b);

        model.dropout = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new(model.params());
        let y = model.forward_batch(&mut tape, &[0], &[1], q.gather(&[1]), true, &mut rng).unwrap();
        assert_eq!(tape.value(y).data()[0], a.y);
    }

    #[test]
    fn fresh_embeddings_at_zero_diagnose_half() {
        let src = source(6);
        let target = dataset(4, 5);
        let mut model = TransferModel::build(SourceModel::NeuralCd(&src), None, "x", &target, &TransferConfig::default()).unwrap();
        let TargetEmbedding::NeuralCd(emb) = model.emb.clone() else { unreachable!() };
        let (r, c) = model.store.value(emb.a).shape();
        model.store.assign(emb.a, crate::tensor::Matrix::zeros(r, c)).unwrap();
        assert_eq!(model.diagnose_target(3).unwrap(), vec![0.5; 4]);
    }
}

//! JSON checkpoints for every model kind.
//!
//! A checkpoint carries the model kind, its dimensions, every parameter
//! matrix by name, and the vocabulary and Q-matrix of the data it was
//! trained on so that later runs can index raw files against it. Transfer
//! checkpoints split their parameters into backbone, target-embedding and
//! head groups and record the SHA-256 of the source checkpoint file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{QMatrix, Vocabulary};
use crate::error::{Error, Result};
use crate::kancd::{Kancd, KancdDims, MfType};
use crate::model::{DiagnosisModel, ModelKind};
use crate::neuralcd::{NeuralCd, NeuralCdDims};
use crate::tensor::Matrix;
use crate::transfer::{SourceModel, TransferDims, TransferModel};

pub const FORMAT_VERSION: u32 = 1;

/// Any model that can be saved or loaded.
#[derive(Debug, Clone)]
pub enum AnyModel {
    NeuralCd(NeuralCd),
    Kancd(Kancd),
    Transfer(TransferModel),
}

impl AnyModel {
    pub fn as_model(&self) -> &dyn DiagnosisModel {
        match self {
            AnyModel::NeuralCd(m) => m,
            AnyModel::Kancd(m) => m,
            AnyModel::Transfer(m) => m,
        }
    }

    pub fn as_model_mut(&mut self) -> &mut dyn DiagnosisModel {
        match self {
            AnyModel::NeuralCd(m) => m,
            AnyModel::Kancd(m) => m,
            AnyModel::Transfer(m) => m,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.as_model().kind()
    }

    /// The model as a transfer source; `None` for transfer models.
    pub fn as_source(&self) -> Option<SourceModel<'_>> {
        match self {
            AnyModel::NeuralCd(m) => Some(SourceModel::NeuralCd(m)),
            AnyModel::Kancd(m) => Some(SourceModel::Kancd(m)),
            AnyModel::Transfer(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dims {
    Transfer(TransferDims),
    Kancd {
        #[serde(flatten)]
        dims: KancdDims,
        mf_type: MfType,
    },
    NeuralCd(NeuralCdDims),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSection {
    pub source_checkpoint_digest: String,
    pub k_common: usize,
    pub dropout: f64,
    pub freeze_embeddings: bool,
    pub backbone: BTreeMap<String, Matrix>,
    pub target_embeddings: BTreeMap<String, Matrix>,
    pub head: BTreeMap<String, Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: ModelKind,
    pub subject: String,
    pub seed: u64,
    pub dims: Dims,
    /// Free-form training configuration, kept for provenance.
    #[serde(default)]
    pub config: serde_json::Value,
    pub vocabulary: Vocabulary,
    pub q_matrix: QMatrix,
    /// All parameters of a base model; empty for transfer models.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferSection>,
}

/// Context stored next to the parameters.
#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub subject: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub vocabulary: Vocabulary,
    pub q_matrix: QMatrix,
}

impl Checkpoint {
    pub fn from_model(model: &AnyModel, meta: CheckpointMeta) -> Checkpoint {
        let (dims, parameters, transfer) = match model {
            AnyModel::NeuralCd(m) => (Dims::NeuralCd(*m.dims()), m.params().named_values(), None),
            AnyModel::Kancd(m) => (
                Dims::Kancd {
                    dims: *m.dims(),
                    mf_type: m.mf_type(),
                },
                m.params().named_values(),
                None,
            ),
            AnyModel::Transfer(m) => {
                let emb_ids = m.embedding().param_ids();
                let section = TransferSection {
                    source_checkpoint_digest: m.source_digest().to_string(),
                    k_common: m.dims().k_common,
                    dropout: m.dropout(),
                    freeze_embeddings: m.embeddings_frozen(),
                    backbone: m.group_values(&m.backbone().param_ids()),
                    target_embeddings: m.group_values(&emb_ids),
                    head: m.group_values(&m.head().param_ids()),
                };
                (Dims::Transfer(*m.dims()), BTreeMap::new(), Some(section))
            }
        };
        Checkpoint {
            format_version: FORMAT_VERSION,
            kind: model.kind(),
            subject: meta.subject,
            seed: meta.seed,
            dims,
            config: meta.config,
            vocabulary: meta.vocabulary,
            q_matrix: meta.q_matrix,
            parameters,
            transfer,
        }
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            subject: self.subject.clone(),
            seed: self.seed,
            config: self.config.clone(),
            vocabulary: self.vocabulary.clone(),
            q_matrix: self.q_matrix.clone(),
        }
    }

    /// Rebuilds the model, checking that every matrix is present with the
    /// expected shape.
    pub fn to_model(&self) -> Result<AnyModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        QMatrix::new(
            self.q_matrix.items.clone(),
            self.q_matrix.knowledge.clone(),
            self.q_matrix.cells.clone(),
        )
        .map_err(|e| Error::Checkpoint(format!("invalid Q-matrix: {e}")))?;
        let model = match (self.kind, &self.dims, &self.transfer) {
            (ModelKind::NeuralCd, Dims::NeuralCd(d), None) => {
                let mut m = NeuralCd::new(*d, 0)?;
                m.params_mut().load_named(&self.parameters)?;
                AnyModel::NeuralCd(m)
            }
            (ModelKind::Kancd, Dims::Kancd { dims, mf_type }, None) => {
                let mut m = Kancd::new(*dims, *mf_type, 0)?;
                m.params_mut().load_named(&self.parameters)?;
                AnyModel::Kancd(m)
            }
            (ModelKind::TransferNeuralCd | ModelKind::TransferKancd, Dims::Transfer(d), Some(t)) => {
                if t.k_common != d.k_common {
                    return Err(Error::Checkpoint(format!(
                        "k_common {} disagrees with dims {}",
                        t.k_common, d.k_common
                    )));
                }
                let mut all = BTreeMap::new();
                for group in [&t.backbone, &t.target_embeddings, &t.head] {
                    for (k, v) in group {
                        if all.insert(k.clone(), v.clone()).is_some() {
                            return Err(Error::Checkpoint(format!("duplicate matrix `{k}`")));
                        }
                    }
                }
                AnyModel::Transfer(TransferModel::from_parts(
                    self.kind,
                    *d,
                    t.dropout,
                    t.freeze_embeddings,
                    t.source_checkpoint_digest.clone(),
                    &all,
                )?)
            }
            (kind, _, _) => {
                return Err(Error::Checkpoint(format!("dims do not describe a `{kind}` model")));
            }
        };
        let m = model.as_model();
        let (n, e, k) = (m.embedding().n_students(), m.embedding().n_items(), m.embedding().n_knowledge());
        if self.vocabulary.students.len() != n || self.q_matrix.n_items() != e || self.q_matrix.n_knowledge() != k {
            return Err(Error::Checkpoint(format!(
                "vocabulary ({} students, {}×{} Q-matrix) does not match model ({n}, {e}, {k})",
                self.vocabulary.students.len(),
                self.q_matrix.n_items(),
                self.q_matrix.n_knowledge()
            )));
        }
        Ok(model)
    }
}

/// SHA-256 hex digest of raw bytes.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(digest_bytes(&bytes))
}

pub fn save(model: &AnyModel, meta: CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ckpt = Checkpoint::from_model(model, meta);
    let mut bytes = serde_json::to_vec_pretty(&ckpt)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load(path: impl AsRef<Path>) -> Result<(AnyModel, CheckpointMeta)> {
    let ckpt = read(path)?;
    Ok((ckpt.to_model()?, ckpt.meta()))
}

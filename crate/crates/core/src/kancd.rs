//! Knowledge-association neural cognitive diagnosis.
//!
//! Students, items and knowledge concepts each get a `d`-dimensional latent
//! vector (`d < K`). The proficiency of student `s` on concept `k` is a
//! combiner applied to `l_s ∘ l_k`; the difficulty of item `e` on `k` is a
//! second combiner applied to `l_e ∘ l_k`. The resulting rows go through
//! the same masked interaction network as the direct-embedding model.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{add_layer, check_indices, dense_linear, dense_sigmoid, DiagnosisModel, Embedding, InteractionNet, ModelKind};
use crate::tensor::{glorot_uniform, NodeId, ParamId, ParamStore, Tape};

/// How a latent product `l ∘ l_k` is reduced to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MfType {
    /// Plain inner product.
    Mf,
    /// Learned linear map `d → 1`.
    Gmf,
    /// `d → d → 1` network.
    Ncf1,
    /// `d → d → d → 1` network.
    Ncf2,
}

impl MfType {
    pub const ALL: [MfType; 4] = [MfType::Mf, MfType::Gmf, MfType::Ncf1, MfType::Ncf2];

    pub fn as_str(self) -> &'static str {
        match self {
            MfType::Mf => "mf",
            MfType::Gmf => "gmf",
            MfType::Ncf1 => "ncf1",
            MfType::Ncf2 => "ncf2",
        }
    }
}

impl fmt::Display for MfType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MfType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MfType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mf type `{s}` (expected mf, gmf, ncf1, ncf2)")))
    }
}

/// Parameters of one combiner. Hidden layers use sigmoid activations; the
/// output is linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Combiner {
    Mf,
    Gmf { w: ParamId, b: ParamId },
    Ncf1 { hidden: (ParamId, ParamId), out: (ParamId, ParamId) },
    Ncf2 { hidden1: (ParamId, ParamId), hidden2: (ParamId, ParamId), out: (ParamId, ParamId) },
}

impl Combiner {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, mf_type: MfType, d: usize, rng: &mut R) -> Self {
        let mut layer = |name: &str, fan_in: usize, fan_out: usize| {
            add_layer(store, &format!("{prefix}.{name}.w"), &format!("{prefix}.{name}.b"), fan_in, fan_out, false, rng)
        };
        match mf_type {
            MfType::Mf => Combiner::Mf,
            MfType::Gmf => {
                let (w, b) = layer("out", d, 1);
                Combiner::Gmf { w, b }
            }
            MfType::Ncf1 => Combiner::Ncf1 {
                hidden: layer("hidden", d, d),
                out: layer("out", d, 1),
            },
            MfType::Ncf2 => Combiner::Ncf2 {
                hidden1: layer("hidden1", d, d),
                hidden2: layer("hidden2", d, d),
                out: layer("out", d, 1),
            },
        }
    }

    /// Maps each row of `pairs` (`n×d`) to one raw scalar (`n×1`).
    pub fn apply(&self, tape: &mut Tape<'_>, pairs: NodeId) -> Result<NodeId> {
        match *self {
            Combiner::Mf => Ok(tape.row_sum(pairs)),
            Combiner::Gmf { w, b } => dense_linear(tape, pairs, w, b),
            Combiner::Ncf1 { hidden, out } => {
                let h = dense_sigmoid(tape, pairs, hidden.0, hidden.1)?;
                dense_linear(tape, h, out.0, out.1)
            }
            Combiner::Ncf2 { hidden1, hidden2, out } => {
                let h = dense_sigmoid(tape, pairs, hidden1.0, hidden1.1)?;
                let h = dense_sigmoid(tape, h, hidden2.0, hidden2.1)?;
                dense_linear(tape, h, out.0, out.1)
            }
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match *self {
            Combiner::Mf => vec![],
            Combiner::Gmf { w, b } => vec![w, b],
            Combiner::Ncf1 { hidden, out } => vec![hidden.0, hidden.1, out.0, out.1],
            Combiner::Ncf2 { hidden1, hidden2, out } => {
                vec![hidden1.0, hidden1.1, hidden2.0, hidden2.1, out.0, out.1]
            }
        }
    }
}

/// Latent vectors, combiners and discrimination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KancdEmbedding {
    pub student_latent: ParamId,
    pub item_latent: ParamId,
    pub knowledge_latent: ParamId,
    pub proficiency_combiner: Combiner,
    pub difficulty_combiner: Combiner,
    pub disc: ParamId,
    pub mf_type: MfType,
    n_students: usize,
    n_items: usize,
    n_knowledge: usize,
    latent_dim: usize,
}

impl KancdEmbedding {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n_students: usize,
        n_items: usize,
        n_knowledge: usize,
        latent_dim: usize,
        mf_type: MfType,
        rng: &mut R,
    ) -> Result<Self> {
        if latent_dim == 0 || latent_dim >= n_knowledge {
            return Err(Error::Config(format!(
                "latent dimension d = {latent_dim} must satisfy 0 < d < K = {n_knowledge}"
            )));
        }
        let student_latent = store.add("L_s", glorot_uniform(n_students, latent_dim, false, rng), false);
        let item_latent = store.add("L_e", glorot_uniform(n_items, latent_dim, false, rng), false);
        let knowledge_latent = store.add("L_k", glorot_uniform(n_knowledge, latent_dim, false, rng), false);
        let proficiency_combiner = Combiner::register(store, "comb_a", mf_type, latent_dim, rng);
        let difficulty_combiner = Combiner::register(store, "comb_b", mf_type, latent_dim, rng);
        let disc = store.add("D", glorot_uniform(n_items, 1, false, rng), false);
        Ok(KancdEmbedding {
            student_latent,
            item_latent,
            knowledge_latent,
            proficiency_combiner,
            difficulty_combiner,
            disc,
            mf_type,
            n_students,
            n_items,
            n_knowledge,
            latent_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Raw (pre-sigmoid) `B×K` block: `combiner(rows[b] ∘ l_k)` for every
    /// selected row and every concept.
    fn assemble(&self, tape: &mut Tape<'_>, latent: ParamId, rows: &[usize], combiner: &Combiner) -> Result<NodeId> {
        let l = tape.param(latent);
        let selected = tape.gather_rows(l, rows)?;
        let lk = tape.param(self.knowledge_latent);
        let pairs = tape.pair_product(selected, lk)?;
        let flat = combiner.apply(tape, pairs)?;
        tape.reshape(flat, rows.len(), self.n_knowledge)
    }

    fn entry(&self, params: &ParamStore, latent: ParamId, row: usize, kc: usize, combiner: &Combiner) -> Result<f64> {
        if kc >= self.n_knowledge {
            return Err(Error::IndexOutOfRange {
                kind: "knowledge",
                index: kc,
                len: self.n_knowledge,
            });
        }
        let mut tape = Tape::new(params);
        let l = tape.param(latent);
        let selected = tape.gather_rows(l, &[row])?;
        let lk = tape.param(self.knowledge_latent);
        let lk_row = tape.gather_rows(lk, &[kc])?;
        let pair = tape.pair_product(selected, lk_row)?;
        let out = combiner.apply(&mut tape, pair)?;
        Ok(tape.value(out).data()[0])
    }
}

impl Embedding for KancdEmbedding {
    fn proficiency(&self, tape: &mut Tape<'_>, students: &[usize]) -> Result<NodeId> {
        let raw = self.assemble(tape, self.student_latent, students, &self.proficiency_combiner)?;
        Ok(tape.sigmoid(raw))
    }

    fn item_factors(&self, tape: &mut Tape<'_>, items: &[usize]) -> Result<(NodeId, NodeId)> {
        let raw = self.assemble(tape, self.item_latent, items, &self.difficulty_combiner)?;
        let hdiff = tape.sigmoid(raw);
        let d = tape.param(self.disc);
        let d_rows = tape.gather_rows(d, items)?;
        Ok((hdiff, tape.sigmoid(d_rows)))
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
        let mut ids = vec![self.student_latent, self.item_latent, self.knowledge_latent];
        ids.extend(self.proficiency_combiner.param_ids());
        ids.extend(self.difficulty_combiner.param_ids());
        ids.push(self.disc);
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KancdDims {
    pub n_students: usize,
    pub n_items: usize,
    pub n_knowledge: usize,
    pub latent_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl KancdDims {
    pub const DEFAULT_LATENT_DIM: usize = 20;
}

#[derive(Debug, Clone)]
pub struct Kancd {
    dims: KancdDims,
    mf_type: MfType,
    store: ParamStore,
    emb: KancdEmbedding,
    net: InteractionNet,
}

impl Kancd {
    pub fn new(dims: KancdDims, mf_type: MfType, seed: u64) -> Result<Self> {
        if [dims.n_students, dims.n_items, dims.n_knowledge, dims.hidden1, dims.hidden2].contains(&0) {
            return Err(Error::Config(format!("all model dimensions must be positive: {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let emb = KancdEmbedding::register(
            &mut store,
            dims.n_students,
            dims.n_items,
            dims.n_knowledge,
            dims.latent_dim,
            mf_type,
            &mut rng,
        )?;
        let net = InteractionNet::register(&mut store, dims.n_knowledge, dims.hidden1, dims.hidden2, &mut rng);
        Ok(Kancd {
            dims,
            mf_type,
            store,
            emb,
            net,
        })
    }

    pub fn dims(&self) -> &KancdDims {
        &self.dims
    }

    pub fn mf_type(&self) -> MfType {
        self.mf_type
    }

    pub fn net(&self) -> &InteractionNet {
        &self.net
    }

    pub fn kancd_embedding(&self) -> &KancdEmbedding {
        &self.emb
    }

    /// Raw proficiency `A[s][k]` before the sigmoid.
    pub fn proficiency_entry(&self, student: usize, kc: usize) -> Result<f64> {
        check_indices(&self.emb, &[student], &[])?;
        self.emb
            .entry(&self.store, self.emb.student_latent, student, kc, &self.emb.proficiency_combiner)
    }

    /// Raw difficulty `B[e][k]` before the sigmoid.
    pub fn difficulty_entry(&self, item: usize, kc: usize) -> Result<f64> {
        check_indices(&self.emb, &[], &[item])?;
        self.emb
            .entry(&self.store, self.emb.item_latent, item, kc, &self.emb.difficulty_combiner)
    }
}

impl DiagnosisModel for Kancd {
    fn kind(&self) -> ModelKind {
        ModelKind::Kancd
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

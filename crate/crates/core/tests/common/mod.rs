#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xdiag::data::{ResponseRecord, SubjectDataset};
use xdiag::kancd::{Kancd, KancdDims, MfType};
use xdiag::neuralcd::{NeuralCd, NeuralCdDims};
use xdiag::tensor::{NodeId, ParamStore, Tape};
use xdiag::transfer::{SourceModel, TransferConfig, TransferModel};
use xdiag::DiagnosisModel;

pub fn record(s: &str, e: &str, score: f64, codes: &[&str]) -> ResponseRecord {
    ResponseRecord {
        student_id: s.into(),
        item_id: e.into(),
        score,
        knowledge_codes: codes.iter().map(|c| c.to_string()).collect(),
    }
}

/// Complete `n_students × n_items` response matrix over `n_knowledge`
/// concepts with random scores and a random non-empty Q-matrix.
pub fn random_dataset(n_students: usize, n_items: usize, n_knowledge: usize, seed: u64) -> SubjectDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..n_knowledge).map(|k| format!("k{k}")).collect();
    let q: Vec<Vec<String>> = (0..n_items)
        .map(|e| {
            let mut codes: Vec<String> = (0..n_knowledge)
                .filter(|_| rng.gen_bool(0.5))
                .map(|k| vocab[k].clone())
                .collect();
            if codes.is_empty() {
                codes.push(vocab[e % n_knowledge].clone());
            }
            codes
        })
        .collect();
    let mut records = Vec::new();
    for s in 0..n_students {
        for (e, codes) in q.iter().enumerate() {
            records.push(ResponseRecord {
                student_id: format!("s{s}"),
                item_id: format!("e{e}"),
                score: if rng.gen_bool(0.5) { 1.0 } else { 0.0 },
                knowledge_codes: codes.clone(),
            });
        }
    }
    SubjectDataset::from_records("random", records, Some(&vocab)).unwrap()
}

/// Moves every parameter off its initial value so that zero biases and
/// other special points are not the only ones exercised.
pub fn jitter(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let nonneg = store.get(id).nonneg;
        for v in store.value_mut(id).data_mut() {
            *v += rng.gen_range(-0.3..0.3);
            if nonneg {
                *v = v.abs();
            }
        }
    }
}

pub fn neuralcd_for(ds: &SubjectDataset, hidden: (usize, usize), seed: u64) -> NeuralCd {
    NeuralCd::new(
        NeuralCdDims {
            n_students: ds.n_students(),
            n_items: ds.n_items(),
            n_knowledge: ds.n_knowledge(),
            hidden1: hidden.0,
            hidden2: hidden.1,
        },
        seed,
    )
    .unwrap()
}

pub fn kancd_for(ds: &SubjectDataset, d: usize, hidden: (usize, usize), mf: MfType, seed: u64) -> Kancd {
    Kancd::new(
        KancdDims {
            n_students: ds.n_students(),
            n_items: ds.n_items(),
            n_knowledge: ds.n_knowledge(),
            latent_dim: d,
            hidden1: hidden.0,
            hidden2: hidden.1,
        },
        mf,
        seed,
    )
    .unwrap()
}

pub fn transfer_for(source: SourceModel<'_>, target: &SubjectDataset, seed: u64) -> TransferModel {
    let mut cfg = TransferConfig::default();
    cfg.train.seed = seed;
    TransferModel::build(source, None, "test", target, &cfg).unwrap()
}

/// Summed cross-entropy over every record of `ds`; dropout masks are
/// drawn from a fresh RNG seeded with `mask_seed` on every call.
pub fn dataset_loss_node(
    model: &dyn DiagnosisModel,
    ds: &SubjectDataset,
    tape: &mut Tape<'_>,
    training: bool,
    mask_seed: u64,
) -> xdiag::Result<NodeId> {
    let s: Vec<usize> = ds.interactions().iter().map(|it| it.student).collect();
    let e: Vec<usize> = ds.interactions().iter().map(|it| it.item).collect();
    let r: Vec<f64> = ds.interactions().iter().map(|it| it.score).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let y = model.forward_batch(tape, &s, &e, ds.q().gather(&e), training, &mut rng)?;
    tape.bce(y, &r)
}

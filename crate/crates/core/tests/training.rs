mod common;

use common::{kancd_for, neuralcd_for, random_dataset, transfer_for};
use xdiag::checkpoint::{self, AnyModel, CheckpointMeta};
use xdiag::data::{synth_generate, SubjectDataset, SynthOutput, SynthSpec};
use xdiag::eval::evaluate;
use xdiag::kancd::MfType;
use xdiag::neuralcd::NeuralCd;
use xdiag::tensor::Matrix;
use xdiag::train::{dataset_loss, fit, TrainConfig};
use xdiag::transfer::{fine_tune, SourceModel, TransferConfig, TransferModel};
use xdiag::{DiagnosisModel, Error};

fn noiseless(n: usize, m: usize, k: usize, seed: u64) -> SynthOutput {
    synth_generate(&SynthSpec {
        n_students: n,
        n_items: m,
        n_knowledge: k,
        slip: 0.0,
        guess: 0.0,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn empty(ds: &SubjectDataset) -> SubjectDataset {
    ds.subset(&[])
}

fn cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate: 0.01,
        seed,
        patience: 0,
        ..TrainConfig::default()
    }
}

fn train_auc(m: &dyn DiagnosisModel, ds: &SubjectDataset) -> f64 {
    evaluate(m, ds).unwrap().auc.unwrap()
}

#[test]
fn neuralcd_recovers_noiseless_training_data() {
    let ds = noiseless(200, 16, 8, 1).dataset;
    let mut m = neuralcd_for(&ds, (64, 32), 1);
    fit(&mut m, &ds, &empty(&ds), &cfg(100, 1)).unwrap();
    let a = train_auc(&m, &ds);
    assert!(a >= 0.95, "train AUC {a}");
}

#[test]
fn kancd_recovers_noiseless_training_data() {
    let ds = noiseless(200, 16, 8, 1).dataset;
    let mut m = kancd_for(&ds, 4, (64, 32), MfType::Gmf, 1);
    fit(&mut m, &ds, &empty(&ds), &cfg(100, 1)).unwrap();
    let a = train_auc(&m, &ds);
    assert!(a >= 0.95, "train AUC {a}");
}

#[test]
fn same_seed_same_history() {
    let ds = random_dataset(20, 8, 4, 3);
    let (tr, va) = (ds.subset(&(0..120).collect::<Vec<_>>()), ds.subset(&(120..160).collect::<Vec<_>>()));
    let run_n = || {
        let mut m = neuralcd_for(&ds, (8, 4), 5);
        (fit(&mut m, &tr, &va, &cfg(5, 5)).unwrap(), m.params().named_values())
    };
    assert_eq!(run_n(), run_n());
    let run_k = || {
        let mut m = kancd_for(&ds, 2, (8, 4), MfType::Ncf2, 5);
        (fit(&mut m, &tr, &va, &cfg(5, 5)).unwrap(), m.params().named_values())
    };
    assert_eq!(run_k(), run_k());
}

#[test]
fn mf_and_gmf_histories_differ() {
    let ds = random_dataset(20, 8, 4, 3);
    let run = |mf| {
        let mut m = kancd_for(&ds, 2, (8, 4), mf, 5);
        fit(&mut m, &ds, &empty(&ds), &cfg(3, 5)).unwrap()
    };
    assert_ne!(run(MfType::Mf), run(MfType::Gmf));
}

#[test]
fn single_step_descends() {
    let ds = random_dataset(5, 2, 2, 9);
    assert_eq!(ds.len(), 10);
    for seed in 0..5 {
        let mut m = neuralcd_for(&ds, (4, 3), seed);
        let before = dataset_loss(&m, &ds).unwrap();
        let c = TrainConfig {
            epochs: 1,
            batch_size: 10,
            seed,
            patience: 0,
            ..TrainConfig::default()
        };
        fit(&mut m, &ds, &empty(&ds), &c).unwrap();
        let after = dataset_loss(&m, &ds).unwrap();
        assert!(after < before, "{after} ≥ {before}");
    }
}

#[test]
fn weights_stay_nonnegative_after_training() {
    let ds = random_dataset(10, 6, 3, 2);
    let mut m = neuralcd_for(&ds, (8, 4), 2);
    fit(&mut m, &ds, &empty(&ds), &cfg(10, 2)).unwrap();
    for name in ["W1", "W2", "W3"] {
        let id = m.params().find(name).unwrap();
        assert!(m.params().value(id).data().iter().all(|&v| v >= 0.0), "{name}");
    }
}

#[test]
fn non_finite_parameters_abort_as_divergence() {
    let ds = random_dataset(4, 3, 2, 2);
    let mut m = neuralcd_for(&ds, (4, 3), 2);
    let a = m.params().find("A").unwrap();
    m.params_mut().value_mut(a).data_mut()[0] = f64::NAN;
    assert!(matches!(fit(&mut m, &ds, &empty(&ds), &cfg(1, 0)), Err(Error::Divergence { .. })));
    assert!(matches!(fit(&mut m, &empty(&ds), &ds, &cfg(1, 0)), Err(Error::Dataset(_))));
}

#[test]
fn padded_training_matches_unpadded() {
    let ds = random_dataset(12, 6, 3, 4);
    let padded = ds.pad_knowledge(5).unwrap();
    let mut plain = neuralcd_for(&ds, (8, 4), 4);
    let mut wide = plain.pad_knowledge(5).unwrap();
    fit(&mut plain, &ds, &empty(&ds), &cfg(5, 4)).unwrap();
    fit(&mut wide, &padded, &empty(&padded), &cfg(5, 4)).unwrap();
    assert_eq!(plain.predict_dataset(&ds).unwrap(), wide.predict_dataset(&padded).unwrap());
}

#[test]
fn diagnosis_is_componentwise_monotone_in_a() {
    let ds = random_dataset(3, 3, 3, 4);
    let mut m = neuralcd_for(&ds, (4, 3), 4);
    let before = m.diagnose(1).unwrap();
    let a = m.params().find("A").unwrap();
    let v = m.params().value(a).get(1, 2);
    m.params_mut().value_mut(a).set(1, 2, v + 0.5);
    let after = m.diagnose(1).unwrap();
    assert!(after[2] > before[2]);
    assert_eq!(after[..2], before[..2]);
}

#[test]
fn trained_checkpoint_reloads_to_identical_report() {
    let ds = random_dataset(10, 6, 3, 6);
    let mut m = kancd_for(&ds, 2, (8, 4), MfType::Ncf1, 6);
    fit(&mut m, &ds, &empty(&ds), &cfg(5, 6)).unwrap();
    let dir = std::env::temp_dir().join(format!("xdiag-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");
    let meta = CheckpointMeta {
        subject: ds.subject().into(),
        seed: 6,
        config: serde_json::Value::Null,
        vocabulary: ds.vocabulary(),
        q_matrix: ds.q().clone(),
    };
    let model = AnyModel::Kancd(m);
    checkpoint::save(&model, meta, &path).unwrap();
    let (back, meta) = checkpoint::load(&path).unwrap();
    assert_eq!(meta.vocabulary, ds.vocabulary());
    assert_eq!(evaluate(back.as_model(), &ds).unwrap(), evaluate(model.as_model(), &ds).unwrap());
    std::fs::remove_dir_all(dir).ok();
}

fn source_and_target() -> (NeuralCd, SubjectDataset) {
    let src = random_dataset(10, 5, 4, 1);
    let mut s = neuralcd_for(&src, (8, 8), 1);
    fit(&mut s, &src, &empty(&src), &cfg(3, 1)).unwrap();
    (s, random_dataset(8, 5, 3, 2))
}

#[test]
fn zero_epoch_fine_tune_is_noop() {
    let (s, tgt) = source_and_target();
    let mut t = transfer_for(SourceModel::NeuralCd(&s), &tgt, 3);
    let before = t.params().named_values();
    fine_tune(&mut t, &tgt, &empty(&tgt), &cfg(0, 3)).unwrap();
    assert_eq!(t.params().named_values(), before);
}

#[test]
fn one_step_changes_exactly_head_and_embeddings() {
    let (s, tgt) = source_and_target();
    let mut t = transfer_for(SourceModel::NeuralCd(&s), &tgt, 3);
    let before = t.params().named_values();
    let digest = t.backbone_digest();
    let c = TrainConfig {
        epochs: 1,
        batch_size: tgt.len(),
        seed: 3,
        patience: 0,
        ..TrainConfig::default()
    };
    fine_tune(&mut t, &tgt, &empty(&tgt), &c).unwrap();
    let after = t.params().named_values();
    let changed: Vec<&str> = before
        .iter()
        .filter(|(k, v)| after[*k] != **v)
        .map(|(k, _)| k.as_str())
        .collect();
    assert_eq!(changed, ["A", "B", "D", "W4", "W5", "W6", "b4", "b5", "b6"]);
    assert_eq!(t.backbone_digest(), digest);
}

#[test]
fn strict_mode_trains_head_only() {
    let (s, tgt) = source_and_target();
    let mut tc = TransferConfig {
        freeze_embeddings: true,
        ..TransferConfig::default()
    };
    tc.train.seed = 3;
    let mut t = TransferModel::build(SourceModel::NeuralCd(&s), None, "x", &tgt, &tc).unwrap();
    let before = t.params().named_values();
    fine_tune(&mut t, &tgt, &empty(&tgt), &cfg(3, 3)).unwrap();
    let after = t.params().named_values();
    for k in ["A", "B", "D", "W1", "b1", "W2", "b2"] {
        assert_eq!(after[k], before[k], "{k}");
    }
    assert_ne!(after["W6"], before["W6"]);
}

#[test]
fn transfer_head_stays_nonnegative_and_monotone() {
    let (s, tgt) = source_and_target();
    let mut t = transfer_for(SourceModel::NeuralCd(&s), &tgt, 3);
    fine_tune(&mut t, &tgt, &empty(&tgt), &cfg(20, 3)).unwrap();
    for k in ["W4", "W5", "W6"] {
        let id = t.params().find(k).unwrap();
        assert!(t.params().value(id).data().iter().all(|&v| v >= 0.0));
    }
    let padded = tgt.pad_knowledge(4).unwrap();
    let emb = t.embedding();
    for st in 0..tgt.n_students() {
        let mut tape = xdiag::tensor::Tape::new(t.params());
        let hs = emb.proficiency(&mut tape, &[st]).unwrap();
        let hs = tape.value(hs).data().to_vec();
        for e in 0..tgt.n_items() {
            let q = padded.q().row(e);
            let base = t.predict_with_proficiency(&hs, e, q).unwrap();
            for j in (0..4).filter(|&j| q[j] == 1.0) {
                let mut up = hs.clone();
                up[j] += 0.05;
                assert!(t.predict_with_proficiency(&up, e, q).unwrap() >= base);
            }
        }
    }
}

#[test]
fn fine_tune_rejects_empty_train() {
    let (s, tgt) = source_and_target();
    let mut t = transfer_for(SourceModel::NeuralCd(&s), &tgt, 3);
    assert!(matches!(fine_tune(&mut t, &empty(&tgt), &tgt, &cfg(1, 3)), Err(Error::Dataset(_))));
}

#[test]
fn transfer_target_diagnosis_separates_masters() {
    let src = noiseless(300, 20, 8, 11).dataset;
    let mut s = neuralcd_for(&src, (64, 32), 11);
    fit(&mut s, &src, &empty(&src), &cfg(60, 11)).unwrap();
    let tgt = noiseless(300, 20, 6, 12);
    let mut t = transfer_for(SourceModel::NeuralCd(&s), &tgt.dataset, 12);
    fine_tune(&mut t, &tgt.dataset, &empty(&tgt.dataset), &cfg(100, 12)).unwrap();
    for k in 0..6 {
        let (mut yes, mut no) = (Vec::new(), Vec::new());
        for st in 0..300 {
            let h = t.diagnose_target(st).unwrap();
            assert_eq!(h.len(), 6);
            if tgt.mastery[st][k] { yes.push(h[k]) } else { no.push(h[k]) }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&yes) > mean(&no), "KC {k}: {} vs {}", mean(&yes), mean(&no));
    }
}

#[test]
fn fresh_zero_embeddings_diagnose_half() {
    let (s, tgt) = source_and_target();
    let mut t = transfer_for(SourceModel::NeuralCd(&s), &tgt, 3);
    let a = t.params().find("A").unwrap();
    let (r, c) = t.params().value(a).shape();
    t.params_mut().assign(a, Matrix::zeros(r, c)).unwrap();
    assert_eq!(t.diagnose_target(0).unwrap(), vec![0.5; 3]);
}

#[test]
fn predictions_lie_strictly_inside_unit_interval() {
    let ds = random_dataset(6, 6, 3, 1);
    let mut m = neuralcd_for(&ds, (4, 2), 0);
    common::jitter(m.params_mut(), 3);
    assert!(m.predict_dataset(&ds).unwrap().iter().all(|&y| y > 0.0 && y < 1.0));
}

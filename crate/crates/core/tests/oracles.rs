mod common;

use common::{jitter, kancd_for, neuralcd_for, random_dataset, transfer_for};
use xdiag::kancd::MfType;
use xdiag::tensor::{sigmoid, Matrix, ParamStore};
use xdiag::transfer::SourceModel;
use xdiag::DiagnosisModel;

const TOL: f64 = 1e-12;

fn value<'a>(store: &'a ParamStore, name: &str) -> &'a Matrix {
    store.value(store.find(name).unwrap_or_else(|| panic!("no parameter `{name}`")))
}

fn set(store: &mut ParamStore, name: &str, rows: &[&[f64]]) {
    let id = store.find(name).unwrap();
    store.assign(id, Matrix::from_rows(rows).unwrap()).unwrap();
}

fn affine(w: &Matrix, b: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| {
            let mut acc = b.get(0, i);
            for (j, xj) in x.iter().enumerate() {
                acc += w.get(i, j) * xj;
            }
            acc
        })
        .collect()
}

fn dense(store: &ParamStore, w: &str, b: &str, x: &[f64]) -> Vec<f64> {
    affine(value(store, w), value(store, b), x).into_iter().map(sigmoid).collect()
}

fn interaction_x(hs: &[f64], hdiff: &[f64], hdisc: f64, q: &[f64]) -> Vec<f64> {
    (0..hs.len()).map(|k| q[k] * (hs[k] - hdiff[k]) * hdisc).collect()
}

fn neuralcd_factors(store: &ParamStore, s: usize, e: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let hs = value(store, "A").row(s).iter().map(|&v| sigmoid(v)).collect();
    let hdiff = value(store, "B").row(e).iter().map(|&v| sigmoid(v)).collect();
    let hdisc = sigmoid(value(store, "D").get(e, 0));
    (hs, hdiff, hdisc)
}

fn base_head(store: &ParamStore, x: &[f64]) -> f64 {
    let f1 = dense(store, "W1", "b1", x);
    let f2 = dense(store, "W2", "b2", &f1);
    dense(store, "W3", "b3", &f2)[0]
}

fn combine(store: &ParamStore, prefix: &str, mf: MfType, v: &[f64]) -> f64 {
    let p = |s: &str| format!("{prefix}.{s}");
    match mf {
        MfType::Mf => v.iter().sum(),
        MfType::Gmf => affine(value(store, &p("out.w")), value(store, &p("out.b")), v)[0],
        MfType::Ncf1 => {
            let h = dense(store, &p("hidden.w"), &p("hidden.b"), v);
            affine(value(store, &p("out.w")), value(store, &p("out.b")), &h)[0]
        }
        MfType::Ncf2 => {
            let h = dense(store, &p("hidden1.w"), &p("hidden1.b"), v);
            let h = dense(store, &p("hidden2.w"), &p("hidden2.b"), &h);
            affine(value(store, &p("out.w")), value(store, &p("out.b")), &h)[0]
        }
    }
}

fn kancd_raw(store: &ParamStore, latent: &str, prefix: &str, mf: MfType, row: usize, k: usize) -> f64 {
    let l = value(store, latent).row(row);
    let lk = value(store, "L_k").row(k);
    let v: Vec<f64> = l.iter().zip(lk).map(|(a, b)| a * b).collect();
    combine(store, prefix, mf, &v)
}

fn kancd_factors(store: &ParamStore, mf: MfType, k: usize, s: usize, e: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let hs = (0..k).map(|j| sigmoid(kancd_raw(store, "L_s", "comb_a", mf, s, j))).collect();
    let hdiff = (0..k).map(|j| sigmoid(kancd_raw(store, "L_e", "comb_b", mf, e, j))).collect();
    let hdisc = sigmoid(value(store, "D").get(e, 0));
    (hs, hdiff, hdisc)
}

#[test]
fn neuralcd_hand_set_instance() {
    let ds = random_dataset(2, 2, 2, 0);
    let mut m = neuralcd_for(&ds, (2, 2), 0);
    let st = m.params_mut();
    set(st, "A", &[&[0.3, -1.2], &[2.0, 0.1]]);
    set(st, "B", &[&[-0.5, 0.4], &[1.1, -0.7]]);
    set(st, "D", &[&[0.25], &[-1.5]]);
    set(st, "W1", &[&[0.2, 0.9], &[1.3, 0.05]]);
    set(st, "b1", &[&[0.1, -0.2]]);
    set(st, "W2", &[&[0.7, 0.4], &[0.0, 1.6]]);
    set(st, "b2", &[&[-0.3, 0.6]]);
    set(st, "W3", &[&[1.1, 0.8]]);
    set(st, "b3", &[&[-0.4]]);
    for s in 0..2 {
        for e in 0..2 {
            let (hs, hd, disc) = neuralcd_factors(m.params(), s, e);
            let want = base_head(m.params(), &interaction_x(&hs, &hd, disc, ds.q().row(e)));
            let got = m.forward(s, e, ds.q()).unwrap().y;
            assert!((got - want).abs() <= TOL, "({s},{e}): {got} vs {want}");
        }
    }
}

#[test]
fn neuralcd_random_instances() {
    for seed in 0..10 {
        let ds = random_dataset(3, 4, 3, seed);
        let mut m = neuralcd_for(&ds, (5, 3), seed);
        jitter(m.params_mut(), seed + 100);
        for s in 0..3 {
            for e in 0..4 {
                let (hs, hd, disc) = neuralcd_factors(m.params(), s, e);
                let want = base_head(m.params(), &interaction_x(&hs, &hd, disc, ds.q().row(e)));
                assert!((m.forward(s, e, ds.q()).unwrap().y - want).abs() <= TOL);
            }
        }
    }
}

#[test]
fn kancd_entries_match_recomputation() {
    for mf in MfType::ALL {
        for seed in 0..5 {
            let ds = random_dataset(3, 3, 4, seed);
            let mut m = kancd_for(&ds, 2, (4, 3), mf, seed);
            jitter(m.params_mut(), seed + 7);
            for i in 0..3 {
                for k in 0..4 {
                    let a = kancd_raw(m.params(), "L_s", "comb_a", mf, i, k);
                    let b = kancd_raw(m.params(), "L_e", "comb_b", mf, i, k);
                    assert!((m.proficiency_entry(i, k).unwrap() - a).abs() <= TOL, "{mf} A[{i}][{k}]");
                    assert!((m.difficulty_entry(i, k).unwrap() - b).abs() <= TOL, "{mf} B[{i}][{k}]");
                }
            }
        }
    }
}

#[test]
fn kancd_orthogonal_latents_give_zero() {
    let ds = random_dataset(2, 2, 3, 1);
    let mut m = kancd_for(&ds, 2, (4, 3), MfType::Mf, 1);
    let st = m.params_mut();
    set(st, "L_e", &[&[1.0, 0.0], &[1.0, 0.0]]);
    set(st, "L_k", &[&[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0]]);
    assert_eq!(m.difficulty_entry(0, 0).unwrap(), 0.0);
}

#[test]
fn kancd_full_forward_matches_recomputation() {
    for mf in MfType::ALL {
        let ds = random_dataset(2, 2, 3, 3);
        let mut m = kancd_for(&ds, 2, (4, 3), mf, 3);
        jitter(m.params_mut(), 11);
        for s in 0..2 {
            for e in 0..2 {
                let (hs, hd, disc) = kancd_factors(m.params(), mf, 3, s, e);
                let want = base_head(m.params(), &interaction_x(&hs, &hd, disc, ds.q().row(e)));
                let got = m.forward(s, e, ds.q()).unwrap().y;
                assert!((got - want).abs() <= TOL, "{mf}: {got} vs {want}");
            }
        }
    }
}

fn transfer_head(store: &ParamStore, x: &[f64]) -> f64 {
    let f1 = dense(store, "W1", "b1", x);
    let f2 = dense(store, "W2", "b2", &f1);
    let l1 = dense(store, "W4", "b4", &f2);
    let l2 = dense(store, "W5", "b5", &l1);
    dense(store, "W6", "b6", &l2)[0]
}

#[test]
fn transfer_neuralcd_matches_recomputation() {
    for seed in 0..5 {
        let src_ds = random_dataset(3, 3, 2, seed);
        let src = neuralcd_for(&src_ds, (6, 8), seed);
        let target = random_dataset(2, 3, 2, seed + 50);
        let mut t = transfer_for(SourceModel::NeuralCd(&src), &target, seed);
        jitter(t.params_mut(), seed);
        for s in 0..2 {
            for e in 0..3 {
                let (hs, hd, disc) = neuralcd_factors(t.params(), s, e);
                let want = transfer_head(t.params(), &interaction_x(&hs, &hd, disc, target.q().row(e)));
                let got = t.forward(s, e, target.q()).unwrap().y;
                assert!((got - want).abs() <= TOL, "{got} vs {want}");
            }
        }
    }
}

#[test]
fn transfer_kancd_padded_matches_recomputation() {
    let src_ds = random_dataset(3, 3, 4, 9);
    let src = kancd_for(&src_ds, 2, (6, 8), MfType::Ncf1, 9);
    let target = random_dataset(2, 3, 3, 10);
    let mut t = transfer_for(SourceModel::Kancd(&src), &target, 10);
    jitter(t.params_mut(), 12);
    let padded = target.pad_knowledge(4).unwrap();
    for s in 0..2 {
        for e in 0..3 {
            let (hs, hd, disc) = kancd_factors(t.params(), MfType::Ncf1, 4, s, e);
            let want = transfer_head(t.params(), &interaction_x(&hs, &hd, disc, padded.q().row(e)));
            let got = t.forward(s, e, padded.q()).unwrap().y;
            assert!((got - want).abs() <= TOL);
        }
    }
}

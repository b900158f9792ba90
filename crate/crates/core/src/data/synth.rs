use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ResponseRecord, SubjectDataset};
use crate::error::{Error, Result};

/// Parameters of a DINA-style synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub subject: String,
    pub n_students: usize,
    pub n_items: usize,
    pub n_knowledge: usize,
    pub slip: f64,
    pub guess: f64,
    pub mastery_rate: f64,
    pub avg_knowledge_per_item: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            subject: "synthetic".into(),
            n_students: 500,
            n_items: 20,
            n_knowledge: 8,
            slip: 0.1,
            guess: 0.1,
            mastery_rate: 0.6,
            avg_knowledge_per_item: 2.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_students == 0 || self.n_items == 0 || self.n_knowledge == 0 {
            return Err(Error::Config("synthetic N, M and K must be positive".into()));
        }
        for (name, p) in [("slip", self.slip), ("guess", self.guess)] {
            if !(0.0..0.5).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 0.5)")));
            }
        }
        if !(0.0..=1.0).contains(&self.mastery_rate) {
            return Err(Error::Config(format!("mastery rate {} outside [0, 1]", self.mastery_rate)));
        }
        if !(self.avg_knowledge_per_item > 0.0 && self.avg_knowledge_per_item.is_finite()) {
            return Err(Error::Config("average knowledge per item must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: SubjectDataset,
    /// `mastery[s][k]`, indexed like the dataset.
    pub mastery: Vec<Vec<bool>>,
}

/// Draws a full response matrix under the DINA model.
///
/// Each item examines one uniformly chosen concept plus each other concept
/// independently with the probability that makes the expected count equal
/// `avg_knowledge_per_item` (clamped to `[1, K]`). When `M ≥ K`, concepts
/// left unexamined are attached to a random item so every concept appears
/// in the Q-matrix. A student answers correctly with probability `1 − slip`
/// when mastering every examined concept and `guess` otherwise.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, m, k) = (spec.n_students, spec.n_items, spec.n_knowledge);

    let avg = spec.avg_knowledge_per_item.clamp(1.0, k as f64);
    let extra_p = if k > 1 { (avg - 1.0) / (k - 1) as f64 } else { 0.0 };
    let mut item_kcs: Vec<Vec<bool>> = (0..m)
        .map(|_| {
            let anchor = rng.gen_range(0..k);
            (0..k).map(|j| j == anchor || rng.gen::<f64>() < extra_p).collect()
        })
        .collect();
    if m >= k {
        for j in 0..k {
            if !item_kcs.iter().any(|row| row[j]) {
                let e = rng.gen_range(0..m);
                item_kcs[e][j] = true;
            }
        }
    }

    let mastery: Vec<Vec<bool>> = (0..n)
        .map(|_| (0..k).map(|_| rng.gen::<f64>() < spec.mastery_rate).collect())
        .collect();

    let kc_names: Vec<String> = (0..k).map(|j| format!("k{j}")).collect();
    let item_codes: Vec<Vec<String>> = item_kcs
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(|(j, _)| kc_names[j].clone())
                .collect()
        })
        .collect();

    let mut records = Vec::with_capacity(n * m);
    for (s, mastered) in mastery.iter().enumerate() {
        let student_id = format!("s{s}");
        for (e, kcs) in item_kcs.iter().enumerate() {
            let masters_all = kcs.iter().zip(mastered).all(|(&need, &has)| !need || has);
            let p_correct = if masters_all { 1.0 - spec.slip } else { spec.guess };
            let correct = rng.gen::<f64>() < p_correct;
            records.push(ResponseRecord {
                student_id: student_id.clone(),
                item_id: format!("e{e}"),
                score: if correct { 1.0 } else { 0.0 },
                knowledge_codes: item_codes[e].clone(),
            });
        }
    }

    let examined: Vec<String> = (0..k)
        .filter(|&j| item_kcs.iter().any(|row| row[j]))
        .map(|j| kc_names[j].clone())
        .collect();
    let mastery = if examined.len() == k {
        mastery
    } else {
        let keep: Vec<usize> = (0..k).filter(|&j| item_kcs.iter().any(|row| row[j])).collect();
        mastery
            .into_iter()
            .map(|row| keep.iter().map(|&j| row[j]).collect())
            .collect()
    };
    let dataset = SubjectDataset::from_records(spec.subject.clone(), records, Some(&examined))?;
    Ok(SynthOutput { dataset, mastery })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(slip: f64, guess: f64, mastery: f64) -> SynthSpec {
        SynthSpec {
            n_students: 60,
            n_items: 12,
            n_knowledge: 5,
            slip,
            guess,
            mastery_rate: mastery,
            seed: 11,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn noiseless_is_conjunctive() {
        let out = synth_generate(&spec(0.0, 0.0, 0.5)).unwrap();
        let ds = &out.dataset;
        for it in ds.interactions() {
            let q = ds.q().row(it.item);
            let masters = q
                .iter()
                .zip(&out.mastery[it.student])
                .all(|(&need, &has)| need == 0.0 || has);
            assert_eq!(it.score == 1.0, masters);
        }
    }

    #[test]
    fn saturated_population_all_correct() {
        let out = synth_generate(&spec(0.0, 0.3, 1.0)).unwrap();
        assert!(out.dataset.interactions().iter().all(|it| it.score == 1.0));
    }

    #[test]
    fn full_matrix_and_coverage() {
        let out = synth_generate(&spec(0.1, 0.1, 0.5)).unwrap();
        assert_eq!(out.dataset.len(), 60 * 12);
        assert_eq!(out.dataset.n_knowledge(), 5);
        assert_eq!(out.mastery.len(), 60);
    }

    #[test]
    fn rejects_large_slip() {
        assert!(synth_generate(&spec(0.5, 0.1, 0.5)).is_err());
    }

    #[test]
    fn deterministic() {
        let a = synth_generate(&spec(0.1, 0.2, 0.5)).unwrap();
        let b = synth_generate(&spec(0.1, 0.2, 0.5)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.mastery, b.mastery);
    }
}

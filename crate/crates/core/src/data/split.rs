use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SubjectDataset;
use crate::error::{Error, Result};

/// Students with fewer records than this are kept entirely in train when
/// stratifying.
pub const MIN_STRATIFIED_RECORDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
    pub stratify_by_student: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
            seed: 0,
            stratify_by_student: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.valid, self.test];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {fr:?} must be in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Partitions the records into train/valid/test.
///
/// Global sizes are `round(n·train)` and `round(n·(train+valid)) − train`,
/// unless stratification forces more records into train. With
/// stratification every student with at least three records contributes one
/// record to train up front, and each student's remaining records are
/// spread across the three parts in proportion.
pub fn split(ds: &SubjectDataset, spec: &SplitSpec) -> Result<(SubjectDataset, SubjectDataset, SubjectDataset)> {
    spec.validate()?;
    let n = ds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_train = (n as f64 * spec.train).round() as usize;
    let n_train_valid = ((n as f64 * (spec.train + spec.valid)).round() as usize).max(n_train);

    let mut forced = Vec::new();
    let mut rest: Vec<(f64, usize)> = Vec::with_capacity(n);

    if spec.stratify_by_student {
        let mut by_student: Vec<Vec<usize>> = vec![Vec::new(); ds.n_students()];
        for (i, it) in ds.interactions().iter().enumerate() {
            by_student[it.student].push(i);
        }
        let mut sparse = 0usize;
        for mut recs in by_student {
            if recs.is_empty() {
                continue;
            }
            if recs.len() < MIN_STRATIFIED_RECORDS {
                sparse += 1;
                forced.extend(recs);
                continue;
            }
            recs.shuffle(&mut rng);
            forced.push(recs[0]);
            let m = recs.len() - 1;
            for (j, &r) in recs[1..].iter().enumerate() {
                let key = (j as f64 + rng.gen::<f64>()) / m as f64;
                rest.push((key, r));
            }
        }
        if sparse > 0 {
            log::warn!("{sparse} students with fewer than {MIN_STRATIFIED_RECORDS} records kept entirely in train");
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        rest.extend(all.into_iter().enumerate().map(|(j, r)| (j as f64, r)));
    }

    rest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let train_total = n_train.max(forced.len());
    let extra_train = (train_total - forced.len()).min(rest.len());
    let n_valid = n_train_valid
        .saturating_sub(train_total)
        .min(rest.len() - extra_train);

    let mut train = forced;
    train.extend(rest[..extra_train].iter().map(|x| x.1));
    let mut valid: Vec<usize> = rest[extra_train..extra_train + n_valid].iter().map(|x| x.1).collect();
    let mut test: Vec<usize> = rest[extra_train + n_valid..].iter().map(|x| x.1).collect();
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&valid), ds.subset(&test)))
}

//! Prediction metrics, per-subject reports and per-student scatter export.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SubjectDataset;
use crate::error::{Error, Result};
use crate::model::{check_compatible, DiagnosisModel};

/// Predictions at or above this are read as "correct".
pub const THRESHOLD: f64 = 0.5;

fn check_lengths(scores: &[f64], labels: usize) -> Result<()> {
    if scores.is_empty() || scores.len() != labels {
        return Err(Error::Dimension {
            op: "metric",
            lhs: (scores.len(), 1),
            rhs: (labels, 1),
        });
    }
    Ok(())
}

/// Area under the ROC curve via the Mann–Whitney rank statistic; tied
/// scores share their average rank, so a tied positive/negative pair counts
/// one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Fraction of records where `score ≥ threshold` agrees with the label.
pub fn acc(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_lengths(scores, labels.len())?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == l)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

pub fn rmse(scores: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(scores, targets.len())?;
    let mse = scores.iter().zip(targets).map(|(s, t)| (s - t).powi(2)).sum::<f64>() / scores.len() as f64;
    Ok(mse.sqrt())
}

pub fn mae(scores: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(scores, targets.len())?;
    Ok(scores.iter().zip(targets).map(|(s, t)| (s - t).abs()).sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subject: String,
    /// Absent when the labels contain a single class.
    pub auc: Option<f64>,
    pub acc: f64,
    pub rmse: f64,
    pub mae: f64,
    pub n_records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Metrics from precomputed predictions aligned with `ds.records()`.
pub fn report_from_predictions(subject: &str, preds: &[f64], ds: &SubjectDataset) -> Result<MetricsReport> {
    if ds.is_empty() {
        return Err(Error::Dataset(format!("cannot evaluate empty dataset `{subject}`")));
    }
    let labels: Vec<bool> = ds.records().iter().map(|r| r.label()).collect();
    let targets: Vec<f64> = ds.records().iter().map(|r| r.score).collect();
    let (auc, note) = match auc(preds, &labels) {
        Ok(v) => (Some(v), None),
        Err(Error::UndefinedMetric(msg)) => (None, Some(msg)),
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        subject: subject.to_string(),
        auc,
        acc: acc(preds, &labels, THRESHOLD)?,
        rmse: rmse(preds, &targets)?,
        mae: mae(preds, &targets)?,
        n_records: ds.len(),
        note,
    })
}

/// Scores every record of `ds` with dropout off.
pub fn evaluate(model: &dyn DiagnosisModel, ds: &SubjectDataset) -> Result<MetricsReport> {
    check_compatible(model, ds)?;
    let preds = model.predict_dataset(ds)?;
    report_from_predictions(ds.subject(), &preds, ds)
}

/// Aligned text table, one row per subject: AUC and ACC in percent,
/// RMSE and MAE raw.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let width = reports.iter().map(|r| r.subject.len()).max().unwrap_or(0).max("Discipline".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}",
        "Discipline", "AUC(%)", "ACC(%)", "RMSE", "MAE"
    );
    for r in reports {
        let auc = r.auc.map_or_else(|| "/".to_string(), |a| format!("{:.4}", a * 100.0));
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9.4}  {:>9.6}  {:>9.6}",
            r.subject,
            auc,
            r.acc * 100.0,
            r.rmse,
            r.mae
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub item_id: String,
    pub truth: u8,
    pub pred_prob: f64,
    pub pred_label: u8,
    pub correct: bool,
}

/// One student's per-item truth and prediction, ready for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterExport {
    pub subject: String,
    pub student_id: String,
    pub rows: Vec<ScatterRow>,
    pub accuracy: f64,
}

impl ScatterExport {
    pub fn from_predictions(subject: &str, student_id: &str, rows: Vec<(String, bool, f64)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dataset(format!("student `{student_id}` has no records")));
        }
        let rows: Vec<ScatterRow> = rows
            .into_iter()
            .map(|(item_id, truth, p)| {
                let pred = p >= THRESHOLD;
                ScatterRow {
                    item_id,
                    truth: truth as u8,
                    pred_prob: p,
                    pred_label: pred as u8,
                    correct: pred == truth,
                }
            })
            .collect();
        let correct = rows.iter().filter(|r| r.correct).count();
        Ok(ScatterExport {
            subject: subject.to_string(),
            student_id: student_id.to_string(),
            accuracy: correct as f64 / rows.len() as f64,
            rows,
        })
    }

    pub fn n_correct(&self) -> usize {
        self.rows.iter().filter(|r| r.correct).count()
    }

    /// CSV body `item_id,truth,pred_prob,pred_label,correct` followed by a
    /// `#` summary line.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "item_id,truth,pred_prob,pred_label,correct").map_err(io)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.item_id, r.truth, r.pred_prob, r.pred_label, r.correct as u8
            )
            .map_err(io)?;
        }
        writeln!(
            w,
            "# subject={} student={} rows={} correct={} accuracy={:.6}",
            self.subject,
            self.student_id,
            self.rows.len(),
            self.n_correct(),
            self.accuracy
        )
        .map_err(io)?;
        w.flush().map_err(io)
    }
}

/// Predictions for every record of `student_id` in `ds`, in record order.
pub fn scatter(model: &dyn DiagnosisModel, ds: &SubjectDataset, student_id: &str) -> Result<ScatterExport> {
    check_compatible(model, ds)?;
    let s = ds.student_index(student_id).ok_or_else(|| Error::UnknownId {
        kind: "student",
        id: student_id.to_string(),
    })?;
    let picked: Vec<usize> = ds
        .interactions()
        .iter()
        .enumerate()
        .filter(|(_, it)| it.student == s)
        .map(|(i, _)| i)
        .collect();
    let items: Vec<usize> = picked.iter().map(|&i| ds.interactions()[i].item).collect();
    let preds = model.predict(&vec![s; items.len()], &items, ds.q())?;
    let rows = picked
        .iter()
        .zip(preds)
        .map(|(&i, p)| {
            let r = &ds.records()[i];
            (r.item_id.clone(), r.label(), p)
        })
        .collect();
    ScatterExport::from_predictions(ds.subject(), student_id, rows)
}

pub fn export_scatter(
    model: &dyn DiagnosisModel,
    ds: &SubjectDataset,
    student_id: &str,
    path: impl AsRef<Path>,
) -> Result<ScatterExport> {
    let export = scatter(model, ds, student_id)?;
    export.write_csv(path)?;
    Ok(export)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_fixtures() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert!(matches!(auc(&[0.3, 0.4], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn acc_threshold_is_inclusive() {
        assert_eq!(acc(&[0.9, 0.1], &[true, false], THRESHOLD).unwrap(), 1.0);
        assert_eq!(acc(&[0.5], &[true], THRESHOLD).unwrap(), 1.0);
        assert_eq!(acc(&[0.5], &[false], THRESHOLD).unwrap(), 0.0);
    }

    #[test]
    fn sixteen_items_fourteen_correct() {
        let scores: Vec<f64> = (0..16).map(|i| if i < 14 { 0.8 } else { 0.2 }).collect();
        let labels = vec![true; 16];
        assert_eq!(acc(&scores, &labels, THRESHOLD).unwrap(), 0.875);
    }

    #[test]
    fn error_metrics() {
        assert_eq!(rmse(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.5], &[1.0]).unwrap(), 0.5);
        assert_eq!(mae(&[0.5], &[1.0]).unwrap(), 0.5);
        assert!(rmse(&[], &[]).is_err());
        assert!(mae(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn table_layout() {
        let r = MetricsReport {
            subject: "Physics".into(),
            auc: Some(0.768717),
            acc: 0.737405,
            rmse: 0.423814,
            mae: 0.358252,
            n_records: 10,
            note: None,
        };
        let t = format_table(&[r]);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].starts_with("Discipline"));
        assert!(lines[1].contains("76.8717") && lines[1].contains("73.7405") && lines[1].contains("0.423814"));
    }

    #[test]
    fn scatter_accuracy() {
        let rows = (0..16)
            .map(|i| (format!("e{i}"), true, if i < 14 { 0.9 } else { 0.1 }))
            .collect();
        let s = ScatterExport::from_predictions("math", "s0", rows).unwrap();
        assert_eq!(s.accuracy, 0.875);
        assert_eq!(s.n_correct(), 14);
    }
}

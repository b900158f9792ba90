//! Response logs, Q-matrices and indexed subject datasets.
//!
//! A [`SubjectDataset`] owns the raw [`ResponseRecord`]s of one subject, the
//! student/item/knowledge vocabularies that map ids to dense indices, and
//! the item × knowledge [`QMatrix`] induced from the records.

mod io;
mod split;
mod synth;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use io::{load_qmatrix_csv, load_records, load_responses, load_responses_with, write_qmatrix_csv, write_responses_csv, write_responses_jsonl, Format, LoadOptions};
pub use split::{split, SplitSpec};
pub use synth::{synth_generate, SynthOutput, SynthSpec};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Prefix given to knowledge columns added by [`SubjectDataset::pad_knowledge`].
pub const PAD_PREFIX: &str = "__pad";

/// One student's answer to one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub student_id: String,
    pub item_id: String,
    pub score: f64,
    pub knowledge_codes: Vec<String>,
}

impl ResponseRecord {
    /// Correctness label used by ranking and accuracy metrics.
    pub fn label(&self) -> bool {
        self.score >= 0.5
    }
}

/// Binary item × knowledge incidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QMatrix {
    pub items: Vec<String>,
    pub knowledge: Vec<String>,
    pub cells: Matrix,
}

impl QMatrix {
    pub fn new(items: Vec<String>, knowledge: Vec<String>, cells: Matrix) -> Result<Self> {
        if cells.shape() != (items.len(), knowledge.len()) {
            return Err(Error::Dimension {
                op: "qmatrix",
                lhs: cells.shape(),
                rhs: (items.len(), knowledge.len()),
            });
        }
        if cells.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Dataset("Q-matrix cells must be 0 or 1".into()));
        }
        for (i, item) in items.iter().enumerate() {
            if cells.row(i).iter().all(|&v| v == 0.0) {
                return Err(Error::Dataset(format!("item `{item}` examines no knowledge concept")));
            }
        }
        Ok(QMatrix { items, knowledge, cells })
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_knowledge(&self) -> usize {
        self.knowledge.len()
    }

    pub fn row(&self, item: usize) -> &[f64] {
        self.cells.row(item)
    }

    /// Stacks the rows for a batch of items.
    pub fn gather(&self, items: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(items.len(), self.n_knowledge());
        for (r, &e) in items.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(e));
        }
        out
    }

    pub fn pad(&self, k_common: usize) -> Result<QMatrix> {
        let k = self.n_knowledge();
        let cells = self.cells.pad_cols(k_common)?;
        let mut knowledge = self.knowledge.clone();
        knowledge.extend((k..k_common).map(|j| format!("{PAD_PREFIX}{j}")));
        Ok(QMatrix {
            items: self.items.clone(),
            knowledge,
            cells,
        })
    }
}

/// Dense student/item/knowledge orderings shared by a dataset, its splits,
/// and any model trained on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub students: Vec<String>,
    pub items: Vec<String>,
    pub knowledge: Vec<String>,
}

/// Index triple for one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub student: usize,
    pub item: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDataset {
    subject: String,
    records: Vec<ResponseRecord>,
    interactions: Vec<Interaction>,
    q: QMatrix,
    students: Vec<String>,
    student_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    /// Knowledge columns before any padding.
    n_real_knowledge: usize,
}

impl SubjectDataset {
    /// Indexes `records`. Students and items are numbered in order of first
    /// appearance. Knowledge concepts follow `knowledge_vocab` when given,
    /// otherwise natural sort order of the codes seen.
    pub fn from_records(
        subject: impl Into<String>,
        records: Vec<ResponseRecord>,
        knowledge_vocab: Option<&[String]>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Dataset("no response records".into()));
        }
        let mut students = Vec::new();
        let mut student_index = HashMap::new();
        let mut items = Vec::new();
        let mut item_index = HashMap::new();
        for r in &records {
            student_index.entry(r.student_id.clone()).or_insert_with(|| {
                students.push(r.student_id.clone());
                students.len() - 1
            });
            item_index.entry(r.item_id.clone()).or_insert_with(|| {
                items.push(r.item_id.clone());
                items.len() - 1
            });
        }
        let knowledge = match knowledge_vocab {
            Some(v) => v.to_vec(),
            None => {
                let mut seen: Vec<String> = records
                    .iter()
                    .flat_map(|r| r.knowledge_codes.iter().cloned())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                seen.sort_by(|a, b| natord::compare(a, b));
                seen
            }
        };
        let q = induce_q(&records, &items, &item_index, knowledge)?;
        Self::assemble(subject.into(), records, q, students, student_index)
    }

    /// Indexes `records` against a fixed vocabulary and Q-matrix, as needed
    /// when scoring new data with a trained model. Unknown ids are errors.
    pub fn with_vocabulary(
        subject: impl Into<String>,
        records: Vec<ResponseRecord>,
        vocab: &Vocabulary,
        q: QMatrix,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Dataset("no response records".into()));
        }
        if q.items != vocab.items || q.knowledge != vocab.knowledge {
            return Err(Error::Dataset("Q-matrix does not match vocabulary".into()));
        }
        let student_index: HashMap<_, _> = vocab
            .students
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Self::assemble(subject.into(), records, q, vocab.students.clone(), student_index)
    }

    fn assemble(
        subject: String,
        records: Vec<ResponseRecord>,
        q: QMatrix,
        students: Vec<String>,
        student_index: HashMap<String, usize>,
    ) -> Result<Self> {
        let item_index: HashMap<_, _> = q
            .items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let mut interactions = Vec::with_capacity(records.len());
        for r in &records {
            let student = *student_index.get(&r.student_id).ok_or_else(|| Error::UnknownId {
                kind: "student",
                id: r.student_id.clone(),
            })?;
            let item = *item_index.get(&r.item_id).ok_or_else(|| Error::UnknownId {
                kind: "item",
                id: r.item_id.clone(),
            })?;
            interactions.push(Interaction {
                student,
                item,
                score: r.score,
            });
        }
        let n_real_knowledge = q
            .knowledge
            .iter()
            .take_while(|k| !k.starts_with(PAD_PREFIX))
            .count();
        Ok(SubjectDataset {
            subject,
            records,
            interactions,
            q,
            students,
            student_index,
            item_index,
            n_real_knowledge,
        })
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn records(&self) -> &[ResponseRecord] {
        &self.records
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn q(&self) -> &QMatrix {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_students(&self) -> usize {
        self.students.len()
    }

    pub fn n_items(&self) -> usize {
        self.q.n_items()
    }

    /// Knowledge dimension including any padding.
    pub fn n_knowledge(&self) -> usize {
        self.q.n_knowledge()
    }

    /// Knowledge dimension of the subject itself.
    pub fn n_real_knowledge(&self) -> usize {
        self.n_real_knowledge
    }

    pub fn students(&self) -> &[String] {
        &self.students
    }

    pub fn student_index(&self, id: &str) -> Option<usize> {
        self.student_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            students: self.students.clone(),
            items: self.q.items.clone(),
            knowledge: self.q.knowledge.clone(),
        }
    }

    /// Records at `positions`, sharing this dataset's indices and Q-matrix.
    pub fn subset(&self, positions: &[usize]) -> SubjectDataset {
        SubjectDataset {
            subject: self.subject.clone(),
            records: positions.iter().map(|&i| self.records[i].clone()).collect(),
            interactions: positions.iter().map(|&i| self.interactions[i]).collect(),
            q: self.q.clone(),
            students: self.students.clone(),
            student_index: self.student_index.clone(),
            item_index: self.item_index.clone(),
            n_real_knowledge: self.n_real_knowledge,
        }
    }

    /// Zero-extends the knowledge dimension to `k_common`. Padded columns
    /// are never examined by any item.
    pub fn pad_knowledge(&self, k_common: usize) -> Result<SubjectDataset> {
        let mut out = self.clone();
        out.q = self.q.pad(k_common)?;
        Ok(out)
    }
}

fn induce_q(
    records: &[ResponseRecord],
    items: &[String],
    item_index: &HashMap<String, usize>,
    knowledge: Vec<String>,
) -> Result<QMatrix> {
    let kc_index: HashMap<&str, usize> = knowledge
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();
    let mut cells = Matrix::zeros(items.len(), knowledge.len());
    for (line, r) in records.iter().enumerate() {
        let e = item_index[&r.item_id];
        for code in &r.knowledge_codes {
            let j = *kc_index.get(code.as_str()).ok_or_else(|| Error::Row {
                line: line + 1,
                message: format!("unknown knowledge code `{code}`"),
            })?;
            cells.set(e, j, 1.0);
        }
    }
    QMatrix::new(items.to_vec(), knowledge, cells)
}

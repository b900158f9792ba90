use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use super::{QMatrix, ResponseRecord, SubjectDataset};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const COLUMNS: [&str; 4] = ["user_id", "item_id", "score", "knowledge_code"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl`/`.ndjson` are JSON lines, anything else CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Dataset subject; defaults to the file stem.
    pub subject: Option<String>,
    /// Fixed knowledge ordering. Codes outside it are row errors.
    pub knowledge_vocab: Option<Vec<String>>,
}

/// Raw records of a response file, in file order, without indexing.
pub fn load_records(path: impl AsRef<Path>, format: Format) -> Result<Vec<ResponseRecord>> {
    let path = path.as_ref();
    let records = match format {
        Format::Csv => read_csv(path)?,
        Format::Jsonl => read_jsonl(path)?,
    };
    if records.is_empty() {
        return Err(Error::Dataset(format!("{} contains no records", path.display())));
    }
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

pub fn load_responses(path: impl AsRef<Path>, format: Format) -> Result<SubjectDataset> {
    load_responses_with(path, format, &LoadOptions::default())
}

pub fn load_responses_with(path: impl AsRef<Path>, format: Format, opts: &LoadOptions) -> Result<SubjectDataset> {
    let path = path.as_ref();
    let records = match format {
        Format::Csv => read_csv(path)?,
        Format::Jsonl => read_jsonl(path)?,
    };
    if records.is_empty() {
        return Err(Error::Dataset(format!("{} contains no records", path.display())));
    }
    if let Some(vocab) = &opts.knowledge_vocab {
        let known: HashSet<&str> = vocab.iter().map(String::as_str).collect();
        for (line, r) in &records {
            if let Some(code) = r.knowledge_codes.iter().find(|c| !known.contains(c.as_str())) {
                return Err(Error::Row {
                    line: *line,
                    message: format!("unknown knowledge code `{code}`"),
                });
            }
        }
    }
    let subject = opts.subject.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let records = records.into_iter().map(|(_, r)| r).collect();
    SubjectDataset::from_records(subject, records, opts.knowledge_vocab.as_deref())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn validate(line: usize, student: String, item: String, score: f64, codes: Vec<String>) -> Result<ResponseRecord> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Row {
            line,
            message: format!("score {score} outside [0, 1]"),
        });
    }
    if student.is_empty() || item.is_empty() {
        return Err(Error::Row {
            line,
            message: "empty user_id or item_id".into(),
        });
    }
    let mut seen = HashSet::new();
    let codes: Vec<String> = codes
        .into_iter()
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty() && seen.insert(c.clone()))
        .collect();
    if codes.is_empty() {
        return Err(Error::Row {
            line,
            message: "empty knowledge_code".into(),
        });
    }
    Ok(ResponseRecord {
        student_id: student,
        item_id: item,
        score,
        knowledge_codes: codes,
    })
}

fn read_csv(path: &Path) -> Result<Vec<(usize, ResponseRecord)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let headers = reader.headers()?.clone();
    let mut cols = [0usize; 4];
    for (slot, name) in cols.iter_mut().zip(COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            column: name.to_string(),
            path: path.to_path_buf(),
        })?;
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| row.get(cols[i]).unwrap_or("");
        let score: f64 = field(2).parse().map_err(|_| Error::Row {
            line,
            message: format!("unparseable score `{}`", field(2)),
        })?;
        let codes = field(3).split(';').map(str::to_string).collect();
        out.push((line, validate(line, field(0).to_string(), field(1).to_string(), score, codes)?));
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonId {
    Str(String),
    Num(serde_json::Number),
}

impl JsonId {
    fn into_string(self) -> String {
        match self {
            JsonId::Str(s) => s,
            JsonId::Num(n) => n.to_string(),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonCodes {
    One(String),
    Many(Vec<String>),
}

fn read_jsonl(path: &Path) -> Result<Vec<(usize, ResponseRecord)>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let text = line.map_err(|e| Error::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Row {
            line: lineno,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Row {
            line: lineno,
            message: "expected a JSON object".into(),
        })?;
        if let Some(missing) = COLUMNS.iter().find(|c| !obj.contains_key(**c)) {
            return Err(Error::Schema {
                column: missing.to_string(),
                path: path.to_path_buf(),
            });
        }
        let bad = |what: &str, e: serde_json::Error| Error::Row {
            line: lineno,
            message: format!("invalid {what}: {e}"),
        };
        let student = JsonId::deserialize(&obj["user_id"]).map_err(|e| bad("user_id", e))?;
        let item = JsonId::deserialize(&obj["item_id"]).map_err(|e| bad("item_id", e))?;
        let score = f64::deserialize(&obj["score"]).map_err(|e| bad("score", e))?;
        let codes = match JsonCodes::deserialize(&obj["knowledge_code"]).map_err(|e| bad("knowledge_code", e))? {
            JsonCodes::One(c) => vec![c],
            JsonCodes::Many(cs) => cs,
        };
        out.push((
            lineno,
            validate(lineno, student.into_string(), item.into_string(), score, codes)?,
        ));
    }
    Ok(out)
}

/// Canonical CSV form; multiple knowledge codes are `;`-joined.
pub fn write_responses_csv(ds: &SubjectDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(COLUMNS)?;
    for r in ds.records() {
        let score = r.score.to_string();
        let codes = r.knowledge_codes.join(";");
        w.write_record([r.student_id.as_str(), r.item_id.as_str(), score.as_str(), codes.as_str()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_responses_jsonl(ds: &SubjectDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in ds.records() {
        let obj = serde_json::json!({
            "user_id": r.student_id,
            "item_id": r.item_id,
            "score": r.score,
            "knowledge_code": r.knowledge_codes,
        });
        writeln!(w, "{obj}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Item rows labelled by `item_id`, one 0/1 column per knowledge concept.
pub fn write_qmatrix_csv(q: &QMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["item_id".to_string()];
    header.extend(q.knowledge.iter().cloned());
    w.write_record(&header)?;
    for (i, item) in q.items.iter().enumerate() {
        let mut row = vec![item.clone()];
        row.extend(q.row(i).iter().map(|&v| if v != 0.0 { "1" } else { "0" }.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_qmatrix_csv(path: impl AsRef<Path>) -> Result<QMatrix> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("item_id") {
        return Err(Error::Schema {
            column: "item_id".into(),
            path: path.to_path_buf(),
        });
    }
    let knowledge: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut items = Vec::new();
    let mut data = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        items.push(row.get(0).unwrap_or("").to_string());
        for cell in row.iter().skip(1) {
            data.push(match cell {
                "0" => 0.0,
                "1" => 1.0,
                other => {
                    return Err(Error::Row {
                        line,
                        message: format!("Q-matrix cell `{other}` is not 0/1"),
                    })
                }
            });
        }
    }
    let cells = Matrix::from_vec(items.len(), knowledge.len(), data)?;
    QMatrix::new(items, knowledge, cells)
}

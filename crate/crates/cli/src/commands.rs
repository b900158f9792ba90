use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use serde_json::{json, Value};
use xdiag::checkpoint::{self, AnyModel, CheckpointMeta};
use xdiag::data::{
    load_records, load_responses, split, synth_generate, write_qmatrix_csv, write_responses_csv,
    write_responses_jsonl, Format, SubjectDataset, PAD_PREFIX,
};
use xdiag::eval::{evaluate, export_scatter, format_table, MetricsReport};
use xdiag::kancd::{Kancd, KancdDims};
use xdiag::neuralcd::{NeuralCd, NeuralCdDims};
use xdiag::train::fit;
use xdiag::transfer::{align_target, fine_tune, TransferConfig, TransferModel};
use xdiag::{DiagnosisModel, Error, ModelKind, Result};

use crate::args::{BaseModel, DiagnoseArgs, EvalArgs, FileFormat, ScatterArgs, SynthArgs, TrainArgs, TransferArgs};
use crate::config::{resolve, SynthConfig, TrainRunConfig, TransferRunConfig};

pub struct Context {
    pub data_dir: Option<PathBuf>,
}

impl Context {
    /// `path` as given when it exists or is absolute, otherwise under the
    /// data directory.
    pub fn input(&self, path: &Path) -> PathBuf {
        match &self.data_dir {
            Some(dir) if path.is_relative() && !path.exists() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn overrides(args: &impl Serialize) -> Result<Value> {
    Ok(serde_json::to_value(args)?)
}

fn load_dataset(path: &Path) -> Result<SubjectDataset> {
    load_responses(path, Format::from_path(path))
}

/// Records of `path` indexed against a checkpoint's vocabulary.
fn load_for_checkpoint(path: &Path, meta: &CheckpointMeta) -> Result<SubjectDataset> {
    let records = load_records(path, Format::from_path(path))?;
    let subject = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| meta.subject.clone());
    SubjectDataset::with_vocabulary(subject, records, &meta.vocabulary, meta.q_matrix.clone())
}

fn expected_kind(model: BaseModel) -> ModelKind {
    match model {
        BaseModel::Neuralcd => ModelKind::NeuralCd,
        BaseModel::Kancd => ModelKind::Kancd,
    }
}

fn write_splits(out: &Path, subject: &str, parts: [(&str, &SubjectDataset); 3]) -> Result<()> {
    for (name, ds) in parts {
        if !ds.is_empty() {
            write_responses_csv(ds, out.join(format!("{subject}_{name}.csv")))?;
        }
    }
    Ok(())
}

fn print_test_report(model: &dyn DiagnosisModel, test: &SubjectDataset) -> Result<()> {
    if !test.is_empty() {
        print!("{}", format_table(&[evaluate(model, test)?]));
    }
    Ok(())
}

pub fn synth(ctx: &Context, a: &SynthArgs) -> Result<()> {
    let cfg: SynthConfig = resolve(a.config.as_deref().map(|p| ctx.input(p)).as_deref(), overrides(a)?)?;
    let out = synth_generate(&cfg.spec())?;
    create_dir(&a.out)?;
    let ds = &out.dataset;
    let responses = match cfg.format {
        FileFormat::Csv => {
            let p = a.out.join(format!("{}.csv", cfg.subject));
            write_responses_csv(ds, &p)?;
            p
        }
        FileFormat::Jsonl => {
            let p = a.out.join(format!("{}.jsonl", cfg.subject));
            write_responses_jsonl(ds, &p)?;
            p
        }
    };
    write_qmatrix_csv(ds.q(), a.out.join("q.csv"))?;
    let mastery: Vec<Vec<u8>> = out.mastery.iter().map(|row| row.iter().map(|&m| m as u8).collect()).collect();
    write_json(
        &a.out.join("truth.json"),
        &json!({
            "subject": cfg.subject,
            "students": ds.students(),
            "knowledge": ds.q().knowledge,
            "mastery": mastery,
        }),
    )?;
    write_json(&a.out.join("config.json"), &json!({ "command": "synth", "config": cfg }))?;
    info!("wrote {} records to {}", ds.len(), responses.display());
    println!("{}", json!({ "records": ds.len(), "responses": responses }));
    Ok(())
}

pub fn train(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let data = ctx.input(&a.data);
    let mut ov = overrides(a)?;
    if a.train.no_stratify {
        ov["stratify_by_student"] = json!(false);
    }
    let cfg: TrainRunConfig = resolve(a.config.as_deref().map(|p| ctx.input(p)).as_deref(), ov)?;
    let ds = load_dataset(&data)?;
    let ds = match cfg.k_common {
        Some(k) => ds.pad_knowledge(k)?,
        None => ds,
    };
    let (tr, va, te) = split(&ds, &cfg.schedule.split_spec())?;
    let seed = cfg.schedule.seed;
    let mut model = match a.model {
        BaseModel::Neuralcd => AnyModel::NeuralCd(NeuralCd::new(
            NeuralCdDims {
                n_students: ds.n_students(),
                n_items: ds.n_items(),
                n_knowledge: ds.n_knowledge(),
                hidden1: cfg.hidden1,
                hidden2: cfg.hidden2,
            },
            seed,
        )?),
        BaseModel::Kancd => AnyModel::Kancd(Kancd::new(
            KancdDims {
                n_students: ds.n_students(),
                n_items: ds.n_items(),
                n_knowledge: ds.n_knowledge(),
                latent_dim: cfg.resolved_latent_dim(ds.n_knowledge()),
                hidden1: cfg.hidden1,
                hidden2: cfg.hidden2,
            },
            cfg.mf_type,
            seed,
        )?),
    };
    info!("training {} on {} records", model.kind(), tr.len());
    let history = fit(model.as_model_mut(), &tr, &va, &cfg.schedule.train_config())?;

    let provenance = json!({
        "command": "train",
        "model": a.model,
        "data_sha256": checkpoint::file_digest(&data)?,
        "config": cfg,
    });
    create_dir(&a.out)?;
    write_splits(&a.out, ds.subject(), [("train", &tr), ("valid", &va), ("test", &te)])?;
    checkpoint::save(
        &model,
        CheckpointMeta {
            subject: ds.subject().to_string(),
            seed,
            config: provenance.clone(),
            vocabulary: ds.vocabulary(),
            q_matrix: ds.q().clone(),
        },
        a.out.join("model.json"),
    )?;
    write_json(&a.out.join("history.json"), &json!({ "provenance": provenance, "history": history }))?;
    write_json(&a.out.join("config.json"), &provenance)?;
    print_test_report(model.as_model(), &te)
}

pub fn transfer(ctx: &Context, a: &TransferArgs) -> Result<()> {
    let source_path = ctx.input(&a.source);
    let data = ctx.input(&a.data);
    let mut ov = overrides(a)?;
    if a.train.no_stratify {
        ov["stratify_by_student"] = json!(false);
    }
    if a.freeze_embeddings {
        ov["freeze_embeddings"] = json!(true);
    }
    let cfg: TransferRunConfig = resolve(a.config.as_deref().map(|p| ctx.input(p)).as_deref(), ov)?;

    let source_digest = checkpoint::file_digest(&source_path)?;
    let (source_model, source_meta) = checkpoint::load(&source_path)?;
    let source = source_model.as_source().ok_or_else(|| {
        Error::Checkpoint(format!("{} holds a transfer model, not a pretrained base model", source_path.display()))
    })?;
    let expected = expected_kind(a.model);
    if source.kind() != expected {
        return Err(Error::KindMismatch {
            expected: expected.to_string(),
            found: source.kind().to_string(),
        });
    }

    let ds = load_dataset(&data)?;
    let (tr, va, te) = split(&ds, &cfg.schedule.split_spec())?;
    let tcfg = TransferConfig {
        head1: cfg.head1,
        head2: cfg.head2,
        dropout: cfg.dropout,
        freeze_embeddings: cfg.freeze_embeddings,
        train: cfg.schedule.train_config(),
    };
    let mut model = TransferModel::build(source, Some(expected), source_digest.clone(), &ds, &tcfg)?;
    info!("fine-tuning {} on {} target records", model.kind(), tr.len());
    let history = fine_tune(&mut model, &tr, &va, &tcfg.train)?;

    let provenance = json!({
        "command": "transfer",
        "model": a.model,
        "source_subject": source_meta.subject,
        "source_sha256": source_digest,
        "data_sha256": checkpoint::file_digest(&data)?,
        "config": cfg,
    });
    let aligned = align_target(&model, &ds)?;
    create_dir(&a.out)?;
    write_splits(&a.out, ds.subject(), [("train", &tr), ("valid", &va), ("test", &te)])?;
    let te = if te.is_empty() { te } else { align_target(&model, &te)? };
    let model = AnyModel::Transfer(model);
    checkpoint::save(
        &model,
        CheckpointMeta {
            subject: ds.subject().to_string(),
            seed: cfg.schedule.seed,
            config: provenance.clone(),
            vocabulary: aligned.vocabulary(),
            q_matrix: aligned.q().clone(),
        },
        a.out.join("model.json"),
    )?;
    write_json(&a.out.join("history.json"), &json!({ "provenance": provenance, "history": history }))?;
    write_json(&a.out.join("config.json"), &provenance)?;
    print_test_report(model.as_model(), &te)
}

pub fn eval(ctx: &Context, a: &EvalArgs) -> Result<()> {
    let ckpt = ctx.input(&a.checkpoint);
    let (model, meta) = checkpoint::load(&ckpt)?;
    let mut reports: Vec<MetricsReport> = Vec::with_capacity(a.data.len());
    let mut inputs = Vec::with_capacity(a.data.len());
    for path in &a.data {
        let path = ctx.input(path);
        let ds = load_for_checkpoint(&path, &meta)?;
        reports.push(evaluate(model.as_model(), &ds)?);
        inputs.push(checkpoint::file_digest(&path)?);
    }
    print!("{}", format_table(&reports));
    if let Some(out) = &a.out {
        write_json(
            out,
            &json!({
                "kind": model.kind(),
                "checkpoint_sha256": checkpoint::file_digest(&ckpt)?,
                "data_sha256": inputs,
                "reports": reports,
            }),
        )?;
    }
    Ok(())
}

pub fn diagnose(ctx: &Context, a: &DiagnoseArgs) -> Result<()> {
    let (model, meta) = checkpoint::load(ctx.input(&a.checkpoint))?;
    let s = meta
        .vocabulary
        .students
        .iter()
        .position(|id| *id == a.student)
        .ok_or_else(|| Error::UnknownId {
            kind: "student",
            id: a.student.clone(),
        })?;
    let hs = model.as_model().diagnose(s)?;
    let proficiency: Vec<Value> = meta
        .vocabulary
        .knowledge
        .iter()
        .zip(&hs)
        .filter(|(k, _)| !k.starts_with(PAD_PREFIX))
        .map(|(k, v)| json!({ "knowledge": k, "proficiency": v }))
        .collect();
    let doc = json!({
        "subject": meta.subject,
        "kind": model.kind(),
        "student": a.student,
        "proficiency": proficiency,
    });
    if let Some(out) = &a.out {
        write_json(out, &doc)?;
    }
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

pub fn scatter(ctx: &Context, a: &ScatterArgs) -> Result<()> {
    let (model, meta) = checkpoint::load(ctx.input(&a.checkpoint))?;
    let ds = load_for_checkpoint(&ctx.input(&a.data), &meta)?;
    let ex = export_scatter(model.as_model(), &ds, &a.student, &a.out)?;
    println!(
        "{}",
        json!({ "student": a.student, "rows": ex.rows.len(), "correct": ex.n_correct(), "accuracy": ex.accuracy })
    );
    Ok(())
}

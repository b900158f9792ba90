mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use xdiag::Error;

use args::{Cli, Command};
use commands::Context;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;
const EXIT_CHECKPOINT: u8 = 5;

fn classify(err: &Error) -> (&'static str, u8) {
    match err {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ("missing_file", EXIT_USAGE),
        Error::Config(_) => ("config", EXIT_USAGE),
        Error::Divergence { .. } | Error::NonFiniteGradient { .. } => ("divergence", EXIT_DIVERGENCE),
        Error::KindMismatch { .. } => ("kind_mismatch", EXIT_CHECKPOINT),
        Error::Checkpoint(_) => ("checkpoint", EXIT_CHECKPOINT),
        Error::Schema { .. } | Error::Row { .. } | Error::Csv(_) | Error::Json(_) => ("schema", EXIT_DATA),
        Error::UnknownId { .. } => ("unknown_id", EXIT_DATA),
        _ => ("data", EXIT_DATA),
    }
}

fn fail(kind: &str, code: u8, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "code": code, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            return fail("usage", EXIT_USAGE, first);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let ctx = Context {
        data_dir: cli.data_dir.clone(),
    };
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Transfer(a) => commands::transfer(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Diagnose(a) => commands::diagnose(&ctx, a),
        Command::Scatter(a) => commands::scatter(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            fail(kind, code, &e.to_string())
        }
    }
}

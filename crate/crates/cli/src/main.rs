//! `tofbeam`: simulate detector events, reconstruct beam profiles, and
//! evaluate fiber coupling and stack optics.
//!
//! Results go to stdout as JSON; failures go to stderr as
//! `{"error": {"kind", "message"}}`. Exit status is 0 on success, 2 for
//! usage or validation errors and 3 for numerical failures.
//! `TOFBEAM_THREADS` caps the worker pool.

mod analyze;
mod config;
mod couple;
mod simulate;
mod stack;
mod svg;

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::UsageError;

#[derive(Debug, Parser)]
#[command(name = "tofbeam", version, about = "Time-of-flight beam profiling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw detection events for a beam and detector, write them as CSV.
    Simulate(simulate::SimulateArgs),
    /// Histogram, comb lock, column profile, mode fit and tail power.
    Analyze(analyze::AnalyzeArgs),
    /// Power captured by a circular active area, tolerances, loss grids.
    Couple(couple::CoupleArgs),
    /// Reflectance, transmittance and per-layer absorption of a stack.
    Stack(stack::StackArgs),
}

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("TOFBEAM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| config::usage(format!("TOFBEAM_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| config::usage(format!("thread pool: {e}")))
}

fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tofbeam_core::Error>() {
            let code = if e.is_validation() { EXIT_USAGE } else { EXIT_NUMERICAL };
            return (e.kind(), code);
        }
        if cause.is::<UsageError>() {
            return ("usage", EXIT_USAGE);
        }
        if cause.is::<std::io::Error>() {
            return ("io", EXIT_USAGE);
        }
        if cause.is::<serde_json::Error>() {
            return ("json", EXIT_USAGE);
        }
    }
    ("internal", EXIT_NUMERICAL)
}

fn report(kind: &str, message: String, code: u8) -> ExitCode {
    let body = json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn emit(value: &serde_json::Value) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Simulate(args) => emit(&simulate::run(args)?),
        Command::Analyze(args) => emit(&analyze::run(args)?),
        Command::Couple(args) => match couple::run(args)? {
            couple::Output::Json(v) => emit(&v),
            couple::Output::Text(t) => {
                std::io::stdout().lock().write_all(t.as_bytes())?;
                Ok(())
            }
        },
        Command::Stack(args) => emit(&stack::run(args)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report("usage", e.render().to_string(), EXIT_USAGE),
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = classify(&err);
            report(kind, format!("{err:#}"), code)
        }
    }
}

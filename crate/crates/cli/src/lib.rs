//! Experiment driver: configuration files in, reproducible run directories out.

// Guards such as `!(x > 0.0)` are written negated on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use commands::{copy_config, execute, ResumePoint, RunError};
use config::{ExperimentConfig, Kind};
use output::{now_unix, prepare_run_dir, Manifest, Status};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "kfl", version, about = "Fisher-KPP front asymptotics laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Traveling wave, its tail constant k and decay rate.
    Wave(RunArgs),
    /// Self-similar operator identities and the adjoint slope formula.
    SpectralCheck(RunArgs),
    /// Residual scaling of the approximate solution.
    Vapp(RunArgs),
    /// Front simulation with level tracking.
    Simulate(RunArgs),
    /// Linear moving-boundary probe and its mass convergence rate.
    Probe(RunArgs),
    /// Expansion fit of a simulate run's trace.
    Fit(RunArgs),
    /// Comparison of a simulate run's snapshots with the approximate solution.
    Compare(RunArgs),
    /// Aggregate of several run directories.
    Report(RunArgs),
    /// Continues a simulate run from a checkpoint.
    Resume(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint file to continue from (also accepted as `--from`).
    #[arg(long, alias = "from")]
    pub resume: Option<PathBuf>,
}

fn config_error(message: impl std::fmt::Display) -> i32 {
    eprintln!("config error: {message}");
    EXIT_CONFIG
}

/// Checks that referenced run directories hold manifests before anything is written.
fn check_inputs(config: &ExperimentConfig) -> Result<(), String> {
    let check = |dir: &Path| Manifest::load(dir).map(|_| ()).map_err(|e| format!("{}: {e}", dir.display()));
    match config.kind() {
        Kind::Fit | Kind::Compare => check(config.source.as_deref().expect("validated")),
        Kind::Report => config.runs.iter().try_for_each(|r| check(r)),
        _ => Ok(()),
    }
}

pub fn run(cli: Cli) -> i32 {
    let (kind, args) = match cli.command {
        Command::Wave(a) => (Kind::Wave, a),
        Command::SpectralCheck(a) => (Kind::SpectralCheck, a),
        Command::Vapp(a) => (Kind::Vapp, a),
        Command::Simulate(a) => (Kind::Simulate, a),
        Command::Probe(a) => (Kind::Probe, a),
        Command::Fit(a) => (Kind::Fit, a),
        Command::Compare(a) => (Kind::Compare, a),
        Command::Report(a) => (Kind::Report, a),
        Command::Resume(a) => {
            if a.resume.is_none() {
                return config_error("resume needs --resume <checkpoint>");
            }
            (Kind::Simulate, a)
        }
    };
    if args.resume.is_some() && kind != Kind::Simulate {
        return config_error(format!("--resume applies to simulate runs, not {}", kind.name()));
    }
    let resume = match &args.resume {
        Some(path) => match ResumePoint::load(path) {
            Ok(point) => Some(point),
            Err(e) => return config_error(e),
        },
        None => None,
    };
    let config_path = match (&args.config, &resume) {
        (Some(p), _) => p.clone(),
        (None, Some((_, run_dir))) => run_dir.join(output::CONFIG_COPY),
        (None, None) => return config_error("--config <path> is required"),
    };
    let config = match ExperimentConfig::load(&config_path).and_then(|c| c.with_kind(kind)) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    if let Err(e) = config.validate() {
        return config_error(e);
    }
    if let Err(e) = check_inputs(&config) {
        return config_error(e);
    }
    if let Some((point, _)) = &resume {
        if point.checkpoint.tag != config.numerics_hash() {
            return config_error("checkpoint was written under different numerics (tag mismatch)");
        }
    }

    let hash = config.hash();
    let dir = match (&args.out, &resume) {
        (Some(o), _) => o.clone(),
        (None, Some((_, run_dir))) => run_dir.clone(),
        (None, None) => PathBuf::from("runs").join(format!("{}-{}", kind.name(), &hash[..12])),
    };
    let resuming_in_place = resume.as_ref().is_some_and(|(_, run_dir)| same_dir(run_dir, &dir));
    if !resuming_in_place {
        if let Err(e) = prepare_run_dir(&dir) {
            return config_error(e);
        }
    }
    let mut manifest = Manifest::new(kind.name(), hash, config.numerics_hash());
    if let Err(e) = manifest.save(&dir).and_then(|_| copy_config(&config, &dir)) {
        eprintln!("runtime error: {e}");
        return EXIT_RUNTIME;
    }

    let outcome = execute(&config, &dir, &mut manifest, resume.map(|(p, _)| p));
    manifest.finished_unix = Some(now_unix());
    let code = match &outcome {
        Ok(()) => {
            manifest.status = Status::Complete;
            EXIT_OK
        }
        Err(e) => {
            manifest.status = Status::Failed;
            manifest.error = Some(e.to_string());
            match e {
                RunError::Config(_) => EXIT_CONFIG,
                RunError::Runtime(_) => EXIT_RUNTIME,
            }
        }
    };
    if let Err(e) = manifest.inventory(&dir).and_then(|_| manifest.save(&dir)) {
        eprintln!("runtime error: cannot write manifest: {e}");
        return EXIT_RUNTIME;
    }
    match outcome {
        Ok(()) => {
            // A closed stdout (for example a pipe into `head`) must not turn success into a panic.
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&manifest.headline).unwrap_or_default());
            let _ = writeln!(out, "run directory: {}", dir.display());
        }
        Err(e) => {
            eprintln!("{} failed: {e}", kind.name());
            if let Some(c) = &manifest.checkpoint {
                eprintln!("latest checkpoint: {}", dir.join(c).display());
            }
        }
    }
    code
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

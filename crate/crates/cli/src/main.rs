//! Command-line front end: decompose sequences, inspect loss terms,
//! benchmark the all-pairs loss, and evaluate predictions.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage/input error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use lsplit_cli::commands;
use lsplit_cli::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "lsplit",
    version,
    about = "Intrinsic image decomposition for fixed-viewpoint, varying-illumination sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Configuration file (key = value lines; defaults apply otherwise).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for anything randomized (overrides the config key).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; accepted for interface stability, evaluation is
    /// currently single-threaded.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one sequence into reflectance, shadings, and colors.
    Decompose {
        /// Directory of co-registered frames (PNG/JPEG).
        seq_dir: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Evaluate the energy terms for a stored decomposition.
    Losses {
        seq_dir: PathBuf,
        /// Directory holding reflectance.lsplit, shading.lsplit, illum.txt.
        decomp_dir: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Time brute-force vs closed-form all-pairs evaluation.
    Bench {
        /// Frame counts, e.g. --m 4,64
        #[arg(long, value_delimiter = ',', required = true)]
        m: Vec<usize>,
        /// Square image side.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Score reflectance predictions against pairwise judgments (JSON).
    #[command(name = "eval-iiw")]
    EvalIiw {
        pred_dir: PathBuf,
        annot_dir: PathBuf,
        /// Where auxiliary outputs are written.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Score shading predictions against smooth/non-smooth label maps.
    #[command(name = "eval-saw")]
    EvalSaw {
        pred_dir: PathBuf,
        annot_dir: PathBuf,
        /// Where PR curves are written.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Score reflectance+shading predictions against dense ground truth.
    #[command(name = "eval-mit")]
    EvalMit {
        pred_dir: PathBuf,
        annot_dir: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn resolve_config(common: &CommonOpts) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads {
        if threads == 0 {
            anyhow::bail!("--threads must be at least 1");
        }
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Decompose {
            seq_dir,
            out,
            common,
        } => {
            let cfg = resolve_config(&common)?;
            commands::decompose::run(&seq_dir, &out, &cfg)
        }
        Command::Losses {
            seq_dir,
            decomp_dir,
            common,
        } => {
            let cfg = resolve_config(&common)?;
            commands::losses::run(&seq_dir, &decomp_dir, &cfg)
        }
        Command::Bench { m, size, common } => {
            let cfg = resolve_config(&common)?;
            commands::bench::run(&m, size, cfg.seed)
        }
        Command::EvalIiw {
            pred_dir,
            annot_dir,
            out: _,
            common,
        } => {
            let cfg = resolve_config(&common)?;
            commands::eval::run_iiw(&pred_dir, &annot_dir, &cfg)
        }
        Command::EvalSaw {
            pred_dir,
            annot_dir,
            out,
            common,
        } => {
            let cfg = resolve_config(&common)?;
            commands::eval::run_saw(&pred_dir, &annot_dir, &out, &cfg)
        }
        Command::EvalMit {
            pred_dir,
            annot_dir,
            out: _,
            common,
        } => {
            let cfg = resolve_config(&common)?;
            commands::eval::run_mit(&pred_dir, &annot_dir, &cfg)
        }
    }
}

/// 1 for internal faults (a failed line search signals a gradient bug,
/// a precomp mismatch a plumbing bug); 2 for anything traceable to the
/// inputs or the invocation.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core_err) = cause.downcast_ref::<lsplit_core::Error>() {
            return match core_err {
                lsplit_core::Error::LineSearchFailed { .. }
                | lsplit_core::Error::PrecompMismatch(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

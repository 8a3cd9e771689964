//! `maxlow`: runs one verification experiment from a JSON config and writes
//! CSV tables plus `summary.json`.
//!
//! Exit codes: 0 when every pass flag holds, 1 when some flag fails, 2 on
//! configuration or solver errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use maxlow_core::experiments::{self, write_outputs, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "maxlow", version, about = "Low-frequency Maxwell verification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-grid residual and radiation study of the whole-space solution.
    SolveWholeSpace(Common),
    /// Convergence of radiating solutions to the static limit as omega shrinks.
    LowfreqSweep(Common),
    /// Convergence of absorbing solutions as the damping vanishes.
    LimabsSweep(Common),
    /// Neumann series against the direct resolvent below the smallest singular value.
    NeumannCheck(Common),
    /// Kernel and harmonic-field dimensions and their material invariance.
    Spectrum(Common),
    /// Round trips of the electro- and magnetostatic solvers.
    Static(Common),
    /// Checks the three construction steps of the harmonic basis sets.
    VerifyB1(Common),
    /// Ratio probes for the Poincare, Maxwell and a-priori estimates.
    EstimateProbe(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; keys it omits take the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: `output.dir` of the config, else `maxlow-out/<experiment>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Also write `.sfld` dumps of computed fields.
    #[arg(long)]
    dump_fields: bool,
    /// Print the resolved config and exit without running.
    #[arg(long)]
    print_config: bool,
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Command::SolveWholeSpace(c) => (ExperimentKind::WholeSpaceSolve, c),
            Command::LowfreqSweep(c) => (ExperimentKind::LowfreqSweep, c),
            Command::LimabsSweep(c) => (ExperimentKind::LimabsSweep, c),
            Command::NeumannCheck(c) => (ExperimentKind::NeumannCheck, c),
            Command::Spectrum(c) => (ExperimentKind::Spectrum, c),
            Command::Static(c) => (ExperimentKind::StaticSolve, c),
            Command::VerifyB1(c) => (ExperimentKind::VerifyB1, c),
            Command::EstimateProbe(c) => (ExperimentKind::EstimateProbe, c),
        }
    }
}

fn load(kind: ExperimentKind, args: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::from_json(&text, Some(kind)).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ExperimentConfig::defaults(kind),
    };
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.dump_fields {
        cfg.output.dump_fields = true;
    }
    Ok(cfg)
}

fn out_dir(kind: ExperimentKind, args: &Common, cfg: &ExperimentConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| Path::new("maxlow-out").join(kind.name()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (kind, args) = Cli::parse().command.split();

    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    // A config that cannot be read still gets a summary, built on the defaults.
    let loaded = load(kind, &args);
    let mut cfg = match &loaded {
        Ok(c) => c.clone(),
        Err(_) => ExperimentConfig::defaults(kind),
    };
    let dir = out_dir(kind, &args, &cfg);
    cfg.output.dir = Some(dir.clone());

    if args.print_config {
        return match loaded.and_then(|_| Ok(serde_json::to_string_pretty(&cfg)?)) {
            Ok(s) => {
                println!("{s}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        };
    }

    let outcome = match &loaded {
        Ok(_) => experiments::run(&cfg),
        Err(e) => Err(maxlow_core::Error::Config(format!("{e:#}"))),
    };
    let summary = match write_outputs(&dir, &cfg, &outcome) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: writing outputs to {}: {e}", dir.display());
            return ExitCode::from(2);
        }
    };

    match outcome {
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Ok(r) => {
            for (name, ok) in &r.flags {
                println!("{:<28} {}", name, if *ok { "pass" } else { "FAIL" });
            }
            for (name, v) in &r.slopes {
                println!("{:<28} {v:.4e}", name);
            }
            for n in &r.notes {
                log::info!("{n}");
            }
            println!("wrote {} file(s) and summary.json to {}", summary.files.len(), dir.display());
            if summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}

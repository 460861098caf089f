use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpsl::harness::{self, emit_report, ExperimentConfig, ExperimentKind, UpcycleCheck};
use dpsl::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_OTHER: u8 = 1;

/// Dirichlet-prior shaping experiments.
#[derive(Parser)]
#[command(name = "dpsl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Shape learnable simplex points towards per-source priors.
    ShapeToy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a simulated MoE router under a chosen regularizer.
    RouterSim {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare upcycled experts against their dense source.
    UpcycleCheck {
        #[arg(long, default_value_t = 1)]
        granularity: usize,
        #[arg(long, default_value_t = 4)]
        experts: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
    },
    /// Write a CSV grid of Beta PDF and CDF values.
    SpecfunTable {
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::MissingPrior(_) | Error::Partition(_) => EXIT_CONFIG,
        Error::Numeric(_) | Error::NoConvergence { .. } => EXIT_NUMERIC,
        _ => EXIT_OTHER,
    }
}

fn run_experiment(
    kind: ExperimentKind,
    config: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
) -> dpsl::Result<()> {
    let mut cfg = ExperimentConfig::from_file(&config)?;
    if cfg.kind != kind {
        return Err(Error::Config(format!(
            "{} describes a `{}` experiment",
            config.display(),
            cfg.kind
        )));
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let report = harness::run(&cfg)?;
    let manifest = emit_report(&report, &out)?;
    for path in manifest.paths() {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ShapeToy { config, out, seed } => {
            run_experiment(ExperimentKind::ShapeToy, config, out, seed)
        }
        Command::RouterSim { config, out } => {
            run_experiment(ExperimentKind::RouterSim, config, out, None)
        }
        Command::UpcycleCheck {
            granularity,
            experts,
            sigma,
        } => UpcycleCheck::new(experts, granularity, sigma)
            .max_deviation()
            .map(|dev| {
                println!("max_abs_diff {dev:.6e}");
            }),
        Command::SpecfunTable { out } => harness::write_specfun_table(&out).map(|rows| {
            println!("{rows} rows written to {}", out.display());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

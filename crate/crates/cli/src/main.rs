//! `conu` command-line driver.
//!
//! Exit status: 0 ok, 2 input or schema error, 3 statistical precondition
//! violated, 4 internal invariant breach.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use conu::ErrorClass;

use crate::settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "conu", version, about = "Conformal uncertainty for sampled generations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest a record file and report admissibility.
    Validate {
        #[arg(long, env = "CONU_INPUT")]
        input: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Per-record uncertainty scores, correctness labels and AUROC per method.
    Score {
        #[arg(long, env = "CONU_INPUT")]
        input: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Split the input and write one calibration artifact per alpha.
    Calibrate {
        #[arg(long, env = "CONU_INPUT")]
        input: PathBuf,
        /// Leave the sorted nonconformity scores out of the artifacts.
        #[arg(long)]
        omit_scores: bool,
        #[command(flatten)]
        settings: Settings,
    },
    /// Build prediction sets for every record with a stored calibration.
    Predict {
        #[arg(long, env = "CONU_INPUT")]
        input: PathBuf,
        #[arg(long, env = "CONU_ARTIFACT")]
        artifact: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Full evaluation report. With `--artifact`, every input record is a
    /// test record; otherwise the input is split and calibrated first.
    Evaluate {
        #[arg(long, env = "CONU_INPUT")]
        input: PathBuf,
        #[arg(long, env = "CONU_ARTIFACT")]
        artifact: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Generate a synthetic dataset and sweep it.
    Simulate {
        #[command(flatten)]
        generator: GeneratorArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        settings: Settings,
    },
    /// Repeated seeded splits over alpha and split-fraction grids.
    Sweep {
        /// Record file; a synthetic dataset is generated when absent.
        #[arg(long, env = "CONU_INPUT")]
        input: Option<PathBuf>,
        #[command(flatten)]
        generator: GeneratorArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        settings: Settings,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MostLikelyArg {
    ModalSample,
    IndependentDraw,
}

#[derive(Debug, Clone, Args)]
struct GeneratorArgs {
    #[arg(long, default_value_t = 5500)]
    n_records: usize,
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long, default_value_t = 5)]
    n_semantics: usize,
    #[arg(long, default_value_t = 1.0)]
    concentration: f64,
    #[arg(long, default_value_t = 0.85)]
    accuracy: f64,
    #[arg(long, default_value_t = 1.0)]
    within_sim: f64,
    /// Defaults to tau - 0.1.
    #[arg(long)]
    cross_sim_max: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    plant_inadmissible: f64,
    /// Redraw records until each has an admissible generation (plants excepted).
    #[arg(long)]
    require_admissible: bool,
    #[arg(long, value_enum, default_value = "modal-sample")]
    most_likely: MostLikelyArg,
}

#[derive(Debug, Clone, Args)]
struct GridArgs {
    /// Calibration fractions to sweep (repeatable); defaults to --split-fraction.
    #[arg(long = "fraction")]
    fractions: Vec<String>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<conu::Error>() {
            return match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Statistical => 3,
                ErrorClass::Internal => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    4
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

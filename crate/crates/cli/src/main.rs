//! `icnn`: train convex models, convert between max-affine and ICNN forms,
//! run closed-loop control and the verification suites.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or I/O error.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "icnn", version, about = "Input-convex networks and convex MPC toolkit")]
pub struct Cli {
    /// Seed for every random stream the command uses.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON config for the command; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a plant or sample a dataset.
    Generate {
        /// point_mass, rc_thermal, battery, circles or abs.
        #[arg(long)]
        plant: String,
        /// Number of rollouts (or points for datasets).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Fit an ICNN or ICRNN.
    Train {
        #[arg(long, value_enum)]
        kind: ModelKind,
        #[arg(long)]
        data: PathBuf,
        /// Treat `--data` as rollouts of this plant and fit output and dynamics models.
        #[arg(long)]
        plant: Option<String>,
    },
    /// Build an ICNN from a max-affine model, or fit one with `--data` and `--k`.
    Construct {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// List the affine pieces of a one-hidden-layer ICNN.
    Enumerate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Closed-loop receding-horizon control.
    Control {
        #[arg(long)]
        plant: String,
        /// Learned model file, or `oracle` for the plant's own equations.
        #[arg(long)]
        model: String,
        #[arg(long, value_enum)]
        objective: ObjectiveKind,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        episode: Option<usize>,
        /// Also run random shooting with this many candidates.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Run a verification suite; exits 1 when it fails.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// End-to-end experiments emitting the result tables.
    Experiment {
        #[arg(long, value_enum)]
        name: ExperimentName,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Icnn,
    Icrnn,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Energy,
    Tou,
    Reward,
    Quadratic,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Convexity,
    Gradients,
    Theorem1,
    Theorem2,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    Building,
    Battery,
    Circles,
}

pub enum Outcome {
    Success,
    VerificationFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(&cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

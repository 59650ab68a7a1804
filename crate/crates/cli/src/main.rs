mod commands;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use fogsim::application::AppError;
use fogsim::placement::PlacementError;
use fogsim::scenarios::ScenarioError;
use fogsim::topology::{DistributionKind, TopologyError};

/// Discrete-event simulator for fog, edge and IoT deployments.
#[derive(Debug, Parser)]
#[command(name = "fogsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write report.json, report.csv and timing.json.
    Run(RunArgs),
    /// Run a grid of configs x placements x headsets and write sweep.csv.
    Sweep(SweepArgs),
    /// Check topology and application files.
    Validate(ValidateArgs),
    /// List the built-in case studies.
    ListScenarios,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Distribution {
    Deterministic,
    Exponential,
}

impl From<Distribution> for DistributionKind {
    fn from(d: Distribution) -> Self {
        match d {
            Distribution::Deterministic => DistributionKind::Deterministic,
            Distribution::Exponential => DistributionKind::Exponential,
        }
    }
}

/// Knobs shared by `run` and `sweep`.
#[derive(Debug, Args)]
struct SimArgs {
    /// Simulated duration; defaults to the case study's (3 h EEG, 1000 s surveillance, 60 s custom).
    #[arg(long)]
    duration_ms: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Sensor inter-arrival distribution of the built-in case studies.
    #[arg(long, value_enum, default_value_t = Distribution::Deterministic)]
    distribution: Distribution,
    /// Period of the periodic edges of the built-in case studies.
    #[arg(long)]
    period_ms: Option<f64>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["scenario", "topology"])))]
struct RunArgs {
    /// Built-in case study: eeg or surveillance.
    #[arg(long, conflicts_with = "app")]
    scenario: Option<String>,
    #[arg(long, default_value_t = 1)]
    config: u8,
    #[arg(long, default_value = "A")]
    headset: String,
    /// Placement policy: cloud or edgeward.
    #[arg(long, default_value = "edgeward")]
    placement: String,
    /// Topology JSON for a custom run (requires --app).
    #[arg(long, requires = "app")]
    topology: Option<PathBuf>,
    /// Application JSON for a custom run (requires --topology).
    #[arg(long, requires = "topology")]
    app: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: String,
    /// Inclusive range `a..b`, a single config, or a comma list.
    #[arg(long, default_value = "1..5")]
    configs: String,
    #[arg(long, value_delimiter = ',', default_value = "cloud,edgeward")]
    placements: Vec<String>,
    /// Ignored by the surveillance case study.
    #[arg(long, value_delimiter = ',', default_value = "A,B")]
    headsets: Vec<String>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value = "sweep-out")]
    out: PathBuf,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long, required_unless_present = "app")]
    topology: Option<PathBuf>,
    #[arg(long)]
    app: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FOGSIM_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => commands::run(args),
        Command::Sweep(args) => sweep::sweep(args),
        Command::Validate(args) => commands::validate(args),
        Command::ListScenarios => commands::list_scenarios(),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 bad flags or inputs, 3 invalid topology/application, 4 placement
/// failure, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<commands::UsageError>() {
            return 2;
        }
        if cause.is::<TopologyError>() || cause.is::<AppError>() {
            return 3;
        }
        if cause.is::<PlacementError>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<ScenarioError>() {
            return match e {
                ScenarioError::InvalidConfig(_)
                | ScenarioError::InvalidDuration(_)
                | ScenarioError::UnknownScenario(_)
                | ScenarioError::UnknownHeadset(_) => 2,
                ScenarioError::Topology(_) | ScenarioError::Application(_) => 3,
                ScenarioError::Placement(PlacementError::UnknownPolicy(_)) => 2,
                ScenarioError::Placement(_) | ScenarioError::InvalidPlacement { .. } => 4,
                ScenarioError::Simulation(_) => 1,
            };
        }
    }
    1
}

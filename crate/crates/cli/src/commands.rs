use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use fogsim::application::AppError;
use fogsim::constants::{DEFAULT_PERIOD_MS, MAX_CONFIG};
use fogsim::placement::PlacementConstraints;
use fogsim::scenarios::{simulate, Scenario, ScenarioOptions};
use fogsim::topology::TopologyError;
use fogsim::{parse_application_json, parse_topology_json, MetricsReport, ScenarioSpec, SimConfig, SimTime};

use crate::{RunArgs, SimArgs, ValidateArgs};

/// Simulated time of a custom run when `--duration-ms` is absent.
const CUSTOM_DURATION_MS: f64 = 60_000.0;

/// A command-line mistake found after parsing: unreadable file, bad range.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())).into())
}

/// Builds the spec of one built-in case-study cell.
pub fn case_study_spec(
    scenario: &str,
    config: u8,
    headset: &str,
    placement: &str,
    sim: &SimArgs,
) -> Result<ScenarioSpec> {
    let options = ScenarioOptions {
        distribution: sim.distribution.into(),
        period_ms: sim.period_ms.unwrap_or(DEFAULT_PERIOD_MS),
    };
    let mut spec = ScenarioSpec::new(scenario.parse()?, config, headset.parse()?, placement)
        .with_seed(sim.seed)
        .with_options(options);
    if let Some(ms) = sim.duration_ms {
        spec = spec.with_duration_ms(ms);
    }
    Ok(spec)
}

pub fn sim_config(seed: u64, duration_ms: f64) -> Result<SimConfig> {
    let duration = SimTime::from_ms_f64(duration_ms)
        .filter(|d| *d > SimTime::ZERO)
        .ok_or_else(|| UsageError(format!("--duration-ms must be positive, got {duration_ms}")))?;
    Ok(SimConfig::new(seed, duration))
}

/// Runs a built spec, returning the report and the wall time in ms.
pub fn run_spec(spec: &ScenarioSpec) -> Result<(MetricsReport, f64)> {
    let config = sim_config(spec.seed, spec.duration_ms)?;
    let scenario = spec.build()?;
    timed(|| simulate(&scenario, &spec.placement, config).map_err(Into::into))
}

fn timed(f: impl FnOnce() -> Result<MetricsReport>) -> Result<(MetricsReport, f64)> {
    let start = Instant::now();
    let report = f()?;
    Ok((report, start.elapsed().as_secs_f64() * 1e3))
}

/// Writes report.json, report.csv and timing.json into `dir`.
pub fn write_report(dir: &Path, label: &str, report: &MetricsReport, wall_ms: f64) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    write("report.json", report.to_json())?;
    write("report.csv", report.to_csv())?;
    let timing = serde_json::json!({ "label": label, "wall_ms": wall_ms });
    write("timing.json", format!("{:#}\n", timing))
}

pub fn summary(label: &str, report: &MetricsReport, wall_ms: f64) -> String {
    let delay = report
        .primary_loop_delay_ms()
        .map_or_else(|| "n/a".to_string(), |d| format!("{d:.3} ms"));
    format!(
        "{label}: loop delay {delay}, network usage {:.1} byte*ms, energy {:.1} J (wall {wall_ms:.0} ms)",
        report.network.usage_byte_ms, report.energy.total_j
    )
}

pub fn run(args: RunArgs) -> Result<ExitCode> {
    let (label, report, wall_ms) = match (&args.scenario, &args.topology, &args.app) {
        (Some(name), _, _) => {
            let spec = case_study_spec(name, args.config, &args.headset, &args.placement, &args.sim)?;
            let (report, wall) = run_spec(&spec)?;
            (spec.label(), report, wall)
        }
        (None, Some(topology), Some(app)) => {
            let scenario = load_custom(topology, app)?;
            let config = sim_config(args.sim.seed, args.sim.duration_ms.unwrap_or(CUSTOM_DURATION_MS))?;
            let (report, wall) = timed(|| simulate(&scenario, &args.placement, config).map_err(Into::into))?;
            (format!("{}-{}", scenario.name, args.placement), report, wall)
        }
        _ => unreachable!("clap requires --scenario or --topology with --app"),
    };
    write_report(&args.out, &label, &report, wall_ms)?;
    println!("{}", summary(&label, &report, wall_ms));
    Ok(ExitCode::SUCCESS)
}

/// A scenario from files; pins come from the application.
fn load_custom(topology: &Path, app: &Path) -> Result<Scenario> {
    let topo = parse_topology_json(&read_file(topology)?).with_context(|| format!("in {}", topology.display()))?;
    let app = parse_application_json(&read_file(app)?).with_context(|| format!("in {}", app.display()))?;
    Ok(Scenario {
        name: app.name().to_string(),
        constraints: PlacementConstraints::from_app(&app),
        topology: topo,
        app,
    })
}

pub fn validate(args: ValidateArgs) -> Result<ExitCode> {
    let mut problems = Vec::new();
    if let Some(path) = &args.topology {
        match parse_topology_json(&read_file(path)?) {
            Ok(_) => {}
            Err(TopologyError::Invalid(violations)) => {
                problems.extend(violations.iter().map(|v| format!("{}: {v}", path.display())))
            }
            Err(e) => problems.push(format!("{}: {e}", path.display())),
        }
    }
    if let Some(path) = &args.app {
        match parse_application_json(&read_file(path)?) {
            Ok(_) => {}
            Err(AppError::Invalid(violations)) => {
                problems.extend(violations.iter().map(|v| format!("{}: {v}", path.display())))
            }
            Err(e) => problems.push(format!("{}: {e}", path.display())),
        }
    }
    if problems.is_empty() {
        println!("OK");
        return Ok(ExitCode::SUCCESS);
    }
    for p in &problems {
        println!("{p}");
    }
    Ok(ExitCode::from(3))
}

pub fn list_scenarios() -> Result<ExitCode> {
    println!("eeg           configs 1..={MAX_CONFIG}, headsets A|B, default duration 3 h");
    println!("surveillance  configs 1..={MAX_CONFIG}, default duration 1000 s");
    Ok(ExitCode::SUCCESS)
}

/// Directory of one sweep cell below `out`.
pub fn cell_dir(out: &Path, label: &str) -> PathBuf {
    out.join(label)
}

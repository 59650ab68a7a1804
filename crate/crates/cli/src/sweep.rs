use std::fs;
use std::process::ExitCode;

use anyhow::{Context, Result};
use fogsim::constants::MAX_CONFIG;
use fogsim::placement::PolicyRegistry;
use fogsim::{Headset, MetricsReport, ScenarioKind};
use rayon::prelude::*;

use crate::commands::{case_study_spec, cell_dir, run_spec, summary, write_report, UsageError};
use crate::SweepArgs;

const HEADER: [&str; 11] = [
    "scenario",
    "config",
    "variant",
    "placement",
    "loop_delay_ms",
    "network_usage",
    "energy_cloud_j",
    "energy_gateways_j",
    "energy_edge_j",
    "wall_ms",
    "status",
];

/// Variant column for case studies without headsets.
const NO_VARIANT: &str = "-";

#[derive(Debug, Clone)]
struct Cell {
    config: u8,
    variant: String,
    placement: String,
}

struct Outcome {
    cell: Cell,
    label: String,
    result: Result<(MetricsReport, f64)>,
}

/// Parses `a..b` (inclusive), a single config or a comma list.
pub fn parse_configs(text: &str) -> Result<Vec<u8>, UsageError> {
    let bad = || {
        UsageError(format!(
            "--configs `{text}`: expected a..b, N or a comma list within 1..={MAX_CONFIG}"
        ))
    };
    let num = |s: &str| s.trim().parse::<u8>().map_err(|_| bad());
    let configs: Vec<u8> = match text.split_once("..") {
        Some((a, b)) => (num(a)?..=num(b)?).collect(),
        None => text.split(',').map(num).collect::<Result<_, _>>()?,
    };
    if configs.is_empty() || configs.iter().any(|c| !(1..=MAX_CONFIG).contains(c)) {
        return Err(bad());
    }
    let mut configs = configs;
    configs.sort_unstable();
    configs.dedup();
    Ok(configs)
}

fn grid(args: &SweepArgs) -> Result<(ScenarioKind, Vec<Cell>)> {
    let kind: ScenarioKind = args.scenario.parse()?;
    let configs = parse_configs(&args.configs)?;
    let registry = PolicyRegistry::default();
    let mut placements = args.placements.clone();
    for p in &placements {
        registry.get(p)?;
    }
    placements.sort();
    placements.dedup();
    let mut variants = match kind {
        ScenarioKind::Eeg => args
            .headsets
            .iter()
            .map(|h| h.parse::<Headset>().map(|h| h.to_string()))
            .collect::<Result<Vec<_>, _>>()?,
        ScenarioKind::Surveillance => vec![NO_VARIANT.to_string()],
    };
    variants.sort();
    variants.dedup();
    let mut cells = Vec::new();
    for &config in &configs {
        for variant in &variants {
            for placement in &placements {
                cells.push(Cell {
                    config,
                    variant: variant.clone(),
                    placement: placement.clone(),
                });
            }
        }
    }
    Ok((kind, cells))
}

pub fn sweep(args: SweepArgs) -> Result<ExitCode> {
    let (kind, cells) = grid(&args)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .context("building worker pool")?;
    let run_cell = |cell: &Cell| -> Outcome {
        let headset = if cell.variant == NO_VARIANT { "A" } else { &cell.variant };
        let spec = case_study_spec(&args.scenario, cell.config, headset, &cell.placement, &args.sim);
        let label = spec
            .as_ref()
            .map_or_else(|_| format!("{kind}-c{}", cell.config), |s| s.label());
        log::info!("running {label}");
        Outcome {
            cell: cell.clone(),
            label,
            result: spec.and_then(|s| run_spec(&s)),
        }
    };
    let outcomes: Vec<Outcome> = pool.install(|| cells.par_iter().map(run_cell).collect());

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    let mut failed = 0;
    for o in &outcomes {
        let c = &o.cell;
        let mut row = vec![
            kind.to_string(),
            c.config.to_string(),
            c.variant.clone(),
            c.placement.clone(),
        ];
        match &o.result {
            Ok((report, wall_ms)) => {
                write_report(&cell_dir(&args.out, &o.label), &o.label, report, *wall_ms)?;
                println!("{}", summary(&o.label, report, *wall_ms));
                let tiers = report.energy_tiers();
                row.extend([
                    report
                        .primary_loop_delay_ms()
                        .map(|d| d.to_string())
                        .unwrap_or_default(),
                    report.network.usage_byte_ms.to_string(),
                    tiers.cloud_j.to_string(),
                    tiers.gateways_j.to_string(),
                    tiers.edge_j.to_string(),
                    format!("{wall_ms:.3}"),
                    "ok".to_string(),
                ]);
            }
            Err(e) => {
                failed += 1;
                eprintln!("{}: failed: {e:#}", o.label);
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(format!("failed: {e:#}"));
            }
        }
        w.write_record(&row)?;
    }
    let path = args.out.join("sweep.csv");
    fs::write(&path, w.into_inner()?).with_context(|| format!("writing {}", path.display()))?;
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", outcomes.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_ranges() {
        assert_eq!(parse_configs("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_configs("3").unwrap(), vec![3]);
        assert_eq!(parse_configs("4,2,2").unwrap(), vec![2, 4]);
        for bad in ["0..2", "1..6", "x", "", "3..1"] {
            assert!(parse_configs(bad).is_err(), "{bad}");
        }
    }
}

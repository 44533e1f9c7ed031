use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use flame_core::Defense;
use flame_harness::{run_experiment, write_csv, ExperimentError, Scenario, ScenarioError};

use crate::Failure;

#[derive(clap::Args)]
pub struct Args {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Where to write the per-round metrics.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario defense.
    #[arg(long)]
    defense: Option<Defense>,
}

pub fn run(args: Args) -> Result<(), Failure> {
    let mut scenario = Scenario::load(&args.scenario).map_err(|e| Failure::Input(e.to_string()))?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(defense) = args.defense {
        scenario.defense = defense;
    }
    let rows = run_experiment(&scenario).map_err(|e| match e {
        ExperimentError::Scenario(e @ ScenarioError::Invalid(_)) => Failure::Input(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    })?;
    let file = File::create(&args.out).map_err(|e| Failure::Runtime(format!("{}: {e}", args.out.display())))?;
    write_csv(BufWriter::new(file), &rows).map_err(|e| Failure::Runtime(format!("{}: {e}", args.out.display())))?;
    if let Some(last) = rows.last() {
        eprintln!("round {}: MA {:.4}, BA {:.4}", last.round, last.ma, last.ba);
    }
    Ok(())
}

use std::fs;
use std::path::{Path, PathBuf};

use flame_core::{run_round, CascadeReport, Defense, ModelVector, RoundConfig};
use serde::Serialize;

use crate::Failure;

#[derive(clap::Args)]
pub struct Args {
    /// Current global model (FLSG).
    #[arg(long)]
    global: PathBuf,
    /// Local model files, or directories whose files are all read in name order.
    #[arg(long, required = true, num_args = 1..)]
    models: Vec<PathBuf>,
    /// Where to write the aggregated model.
    #[arg(long)]
    out: PathBuf,
    /// JSON report with labels, median norm and cascade statistics.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Cascade stage count.
    #[arg(short = 'k', long, default_value_t = flame_core::config::DEFAULT_STAGES)]
    stages: usize,
    /// Noise range relative to the median update norm.
    #[arg(long, default_value_t = flame_core::config::DEFAULT_NOISE_RANGE)]
    lambda: f64,
    /// Noise generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the cosine distance matrix as CSV.
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
    #[arg(long, default_value = "flame")]
    defense: Defense,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Report {
    clients: Vec<String>,
    defense: String,
    labels: Vec<u8>,
    accepted_count: usize,
    all_noise_fallback: bool,
    median_norm: Option<f64>,
    cascade: Option<CascadeJson>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct CascadeJson {
    stages: usize,
    pass_count: usize,
    vector_feeds_per_pass: Vec<usize>,
    total_memory_reloads: usize,
    dot_products_computed: usize,
}

impl CascadeJson {
    fn new(stages: usize, r: CascadeReport) -> Self {
        Self {
            stages,
            pass_count: r.pass_count,
            vector_feeds_per_pass: r.vector_feeds_per_pass,
            total_memory_reloads: r.total_memory_reloads,
            dot_products_computed: r.dot_products_computed,
        }
    }
}

fn read_model(path: &Path) -> Result<ModelVector, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    ModelVector::from_bytes(&bytes).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn model_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut paths = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let entries = fs::read_dir(input).map_err(|e| Failure::Input(format!("{}: {e}", input.display())))?;
            let mut files = entries
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::Input(format!("{}: {e}", input.display())))?;
            files.retain(|p| p.is_file());
            files.sort();
            paths.extend(files);
        } else {
            paths.push(input.clone());
        }
    }
    if paths.is_empty() {
        return Err(Failure::Input("no model files given".into()));
    }
    Ok(paths)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

pub fn run(args: Args) -> Result<(), Failure> {
    let global = read_model(&args.global)?;
    let paths = model_paths(&args.models)?;
    let locals = paths.iter().map(|p| read_model(p)).collect::<Result<Vec<_>, _>>()?;

    let config = RoundConfig::new(locals.len(), global.len())
        .with_stages(args.stages)
        .with_noise_range(args.lambda)
        .with_seed(args.seed);
    config.validate().map_err(|e| Failure::Input(e.to_string()))?;
    if let Some((path, m)) = paths.iter().zip(&locals).find(|(_, m)| m.len() != global.len()) {
        return Err(Failure::Input(format!(
            "{}: {} parameters, the global model has {}",
            path.display(),
            m.len(),
            global.len()
        )));
    }

    let outcome = run_round(&global, &locals, &config, args.defense).map_err(|e| Failure::Runtime(e.to_string()))?;
    write(&args.out, &outcome.model.to_bytes())?;

    if let (Some(path), Some(matrix)) = (&args.dump_matrix, &outcome.distances) {
        let mut csv = Vec::new();
        matrix.write_csv(&mut csv).expect("writing to memory");
        write(path, &csv)?;
    }
    if let Some(path) = &args.report {
        let report = Report {
            clients: paths.iter().map(|p| p.display().to_string()).collect(),
            defense: args.defense.to_string(),
            labels: outcome.labels.labels().to_vec(),
            accepted_count: outcome.labels.accepted_count(),
            all_noise_fallback: outcome.all_noise_fallback,
            median_norm: outcome.scale.map(|s| s.median_norm),
            cascade: outcome.cascade.map(|c| CascadeJson::new(args.stages, c)),
        };
        let json = serde_json::to_vec_pretty(&report).expect("report serializes");
        write(path, &json)?;
    }
    Ok(())
}

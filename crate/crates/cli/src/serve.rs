use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use flame_core::Defense;
use flame_service::{Server, ServiceConfig};

use crate::Failure;

#[derive(clap::Args)]
pub struct Args {
    /// Scheduler configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `listen`.
    #[arg(long)]
    listen: Option<SocketAddr>,
    /// Overrides `quorum`.
    #[arg(long)]
    quorum: Option<usize>,
    /// Exit after this many rounds instead of serving forever.
    #[arg(long)]
    rounds: Option<usize>,
    /// Overrides `stages`.
    #[arg(short = 'k', long)]
    stages: Option<usize>,
    /// Overrides `lambda`.
    #[arg(long)]
    lambda: Option<f64>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `defense`.
    #[arg(long)]
    defense: Option<Defense>,
}

fn configure(args: &Args) -> Result<ServiceConfig, Failure> {
    let mut config = ServiceConfig::load(&args.config).map_err(|e| Failure::Input(e.to_string()))?;
    if let Some(listen) = args.listen {
        config.listen = listen;
    }
    if let Some(quorum) = args.quorum {
        if quorum == 0 {
            return Err(Failure::Input("quorum must be at least 1".into()));
        }
        config.quorum = quorum;
    }
    if let Some(stages) = args.stages {
        if stages == 0 {
            return Err(Failure::Input("stages must be at least 1".into()));
        }
        config.stages = stages;
    }
    if let Some(lambda) = args.lambda {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Failure::Input(format!("invalid lambda {lambda}")));
        }
        config.noise_range = lambda;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(defense) = args.defense {
        config.defense = defense;
    }
    Ok(config)
}

pub fn run(args: Args) -> Result<(), Failure> {
    let config = configure(&args)?;
    let listen = config.listen;
    let server = Server::bind(config).map_err(|e| Failure::Runtime(format!("cannot listen on {listen}: {e}")))?;
    let addr = server.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("listening on {addr}");
    let _ = io::stdout().flush();
    server
        .run(args.rounds, Arc::new(AtomicBool::new(false)))
        .map_err(|e| Failure::Runtime(e.to_string()))
}

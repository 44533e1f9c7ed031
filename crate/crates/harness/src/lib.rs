//! Federated-learning simulation for exercising the aggregation defense.
//!
//! Benign clients train a small classifier on Gaussian blobs. Malicious
//! clients (always fewer than half) mix triggered, relabelled samples into
//! their data and boost their updates. Each round is aggregated with the
//! defended pipeline or plain FedAvg, either in process or through the
//! attested scheduler on localhost, and the global model is scored for main
//! accuracy (MA) and backdoor accuracy (BA).

pub mod classifier;
pub mod client;
pub mod experiment;
pub mod metrics;
pub mod scenario;
pub mod task;

pub use classifier::{ModelKind, TrainConfig};
pub use client::{AttackConfig, ClientSim, Role};
pub use experiment::{run_experiment, ExperimentError, Setup};
pub use metrics::{write_csv, RoundMetrics};
pub use scenario::{Scenario, ScenarioError, Transport};
pub use task::{Dataset, SyntheticTask};

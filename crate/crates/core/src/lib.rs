//! Backdoor-resilient aggregation for federated learning.
//!
//! The aggregation round is decomposed into processing elements that mirror a
//! hardware dataflow pipeline:
//!
//! 1. [`preprocess`]: differential vectors against the global model plus
//!    their L2 norms, in one streaming pass.
//! 2. [`cosine`]: pairwise cosine distances through a cascade of stages that
//!    each latch one differential vector, with reload accounting when the
//!    stage count is smaller than the number of clients.
//! 3. [`hdbscan`]: a majority-only HDBSCAN that accepts the single cluster of
//!    at least `n/2 + 1` clients and marks everyone else as noise.
//! 4. [`clip`]: median-norm clipping factors.
//! 5. [`aggregate`]: clipped averaging of accepted updates followed by
//!    Gaussian noise drawn from a seeded MT19937 generator ([`noise`]).
//!
//! [`pipeline`] wires the elements together for one round.

pub mod aggregate;
pub mod clip;
pub mod config;
pub mod cosine;
pub mod error;
pub mod hdbscan;
pub mod model;
pub mod noise;
pub mod pipeline;
pub mod preprocess;

pub use aggregate::{aggregate, aggregate_wide, federated_average, NoiseScale};
pub use clip::{compute_scales, ScaleResult};
pub use config::RoundConfig;
pub use cosine::{cascade_distances, naive_distances, CascadeReport, DistanceMatrix};
pub use error::{ConfigError, FormatError, ModelError, PipelineError};
pub use hdbscan::{cluster_and_label, ClusterLabels, ClusterOutcome};
pub use model::{DifferentialVector, L2Norms, ModelVector};
pub use noise::{Mt19937, NoiseSource};
pub use pipeline::{run_round, Defense, RoundOutcome};
pub use preprocess::{preprocess, preprocess_tagged, Preprocessed};

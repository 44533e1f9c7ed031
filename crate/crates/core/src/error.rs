use thiserror::Error;

/// Violations of the [`ModelVector`](crate::ModelVector) invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("model must contain at least one parameter")]
    Empty,
    #[error("parameter {index} is not finite")]
    NonFinite { index: usize },
}

/// Decoding failures for the `FLSG` model image.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic: expected \"FLSG\"")]
    BadMagic,
    #[error("truncated header: {0} bytes")]
    Truncated(usize),
    #[error("unsupported format version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype {0:#04x}")]
    UnsupportedDtype(u8),
    #[error("header declares {declared} parameters but payload holds {payload_bytes} bytes")]
    LengthMismatch { declared: u32, payload_bytes: usize },
    #[error("model declares zero parameters")]
    Empty,
    #[error("parameter {index} is not finite")]
    NonFiniteValue { index: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("client count must be at least 1")]
    NoClients,
    #[error("parameter count must be at least 1")]
    NoParameters,
    #[error("cascade stage count must be at least 1")]
    StageCountZero,
    #[error("noise range must be finite and non-negative, got {0}")]
    InvalidNoiseRange(f64),
}

/// Errors raised by the aggregation processing elements.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("no client models supplied")]
    NoClients,
    #[error("client {client}: expected {expected} parameters, found {found}")]
    DimensionMismatch {
        client: usize,
        expected: usize,
        found: usize,
    },
    #[error("client indices must be a permutation of 0..{clients}; got {index}")]
    InvalidClientIndex { index: usize, clients: usize },
    #[error("{what}: expected {expected} clients, found {found}")]
    ClientCountMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("cascade stage count must be at least 1")]
    StageCountZero,
    #[error("malformed distance matrix: {0}")]
    MalformedMatrix(&'static str),
    #[error("minimum cluster size {min_cluster_size} admits more than one cluster among {clients} clients")]
    MinClusterSizeTooSmall {
        min_cluster_size: usize,
        clients: usize,
    },
    #[error("no accepted models to aggregate")]
    NoAcceptedModels,
    #[error("aggregated parameter {coordinate} is not finite")]
    NonFiniteResult { coordinate: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

use flame_core::{FormatError, PipelineError};
use thiserror::Error;

use crate::frame::FrameError;

/// Protocol error codes carried in `ERROR` frames (u16, little-endian).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum ErrorCode {
    ProtocolOrderViolation = 1,
    AuthFailure = 2,
    DuplicateSubmission = 3,
    DimensionMismatch = 4,
    UnknownRound = 5,
    InsufficientModels = 6,
    MalformedMessage = 7,
    Internal = 8,
}

impl ErrorCode {
    pub fn from_u16(code: u16) -> Option<Self> {
        use ErrorCode::*;
        Some(match code {
            1 => ProtocolOrderViolation,
            2 => AuthFailure,
            3 => DuplicateSubmission,
            4 => DimensionMismatch,
            5 => UnknownRound,
            6 => InsufficientModels,
            7 => MalformedMessage,
            8 => Internal,
            _ => return None,
        })
    }

    /// Whether the server closes the connection after reporting this error.
    pub fn is_fatal(self) -> bool {
        matches!(
            self,
            ErrorCode::ProtocolOrderViolation | ErrorCode::AuthFailure | ErrorCode::MalformedMessage
        )
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("message not valid in the current session state")]
    ProtocolOrderViolation,
    #[error("authentication failed")]
    AuthFailure,
    #[error("client {client} already submitted a model for round {round}")]
    DuplicateSubmission { client: u32, round: u64 },
    #[error("model has {found} parameters, round expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("round {requested} is not open (current round {current})")]
    UnknownRound { requested: u64, current: u64 },
    #[error("{stored} models stored, quorum is {quorum}")]
    InsufficientModels { stored: usize, quorum: usize },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("model image: {0}")]
    Model(#[from] FormatError),
    #[error("pipeline: {0}")]
    Pipeline(#[from] PipelineError),
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("server reported error code {0}")]
    Remote(u16),
    #[error("attestation rejected: {0}")]
    Attestation(#[from] crate::attest::AttestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    /// Wire code sent to the peer for this error.
    pub fn code(&self) -> ErrorCode {
        match self {
            ServiceError::ProtocolOrderViolation => ErrorCode::ProtocolOrderViolation,
            ServiceError::AuthFailure => ErrorCode::AuthFailure,
            ServiceError::DuplicateSubmission { .. } => ErrorCode::DuplicateSubmission,
            ServiceError::DimensionMismatch { .. } => ErrorCode::DimensionMismatch,
            ServiceError::UnknownRound { .. } => ErrorCode::UnknownRound,
            ServiceError::InsufficientModels { .. } => ErrorCode::InsufficientModels,
            ServiceError::Malformed(_) | ServiceError::Model(_) | ServiceError::Frame(_) => {
                ErrorCode::MalformedMessage
            }
            ServiceError::Remote(code) => {
                ErrorCode::from_u16(*code).unwrap_or(ErrorCode::Internal)
            }
            ServiceError::Pipeline(_) | ServiceError::Attestation(_) | ServiceError::Io(_) => {
                ErrorCode::Internal
            }
        }
    }
}

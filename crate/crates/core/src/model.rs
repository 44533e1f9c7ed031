//! Model parameter vectors and the `FLSG` binary image used to exchange them.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size  | field                        |
//! |--------|-------|------------------------------|
//! | 0      | 4     | magic `b"FLSG"`              |
//! | 4      | 1     | version, `0x01`              |
//! | 5      | 1     | dtype, `0x01` = f32          |
//! | 6      | 4     | parameter count `p` (u32)    |
//! | 10     | 4 * p | IEEE-754 binary32 parameters |

use crate::error::{FormatError, ModelError};

pub const MAGIC: [u8; 4] = *b"FLSG";
pub const FORMAT_VERSION: u8 = 0x01;
pub const DTYPE_F32: u8 = 0x01;
pub const HEADER_LEN: usize = 10;

/// A flat, ordered vector of finite `f32` model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVector {
    params: Vec<f32>,
}

impl ModelVector {
    pub fn new(params: Vec<f32>) -> Result<Self, ModelError> {
        if params.is_empty() {
            return Err(ModelError::Empty);
        }
        if let Some(index) = params.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { index });
        }
        Ok(Self { params })
    }

    /// All-zero model with `len` parameters.
    ///
    /// # Panics
    ///
    /// Panics if `len` is zero.
    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "model must contain at least one parameter");
        Self {
            params: vec![0.0; len],
        }
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    /// Always false for a constructed model.
    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn into_params(self) -> Vec<f32> {
        self.params
    }

    /// Encodes the model as an `FLSG` image.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.params.len());
        out.extend_from_slice(&MAGIC);
        out.push(FORMAT_VERSION);
        out.push(DTYPE_F32);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes an `FLSG` image, validating every header field and parameter.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::Truncated(bytes.len()));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(bytes[4]));
        }
        if bytes[5] != DTYPE_F32 {
            return Err(FormatError::UnsupportedDtype(bytes[5]));
        }
        let declared = u32::from_le_bytes(bytes[6..10].try_into().expect("4-byte slice"));
        let payload = &bytes[HEADER_LEN..];
        if declared as usize * 4 != payload.len() {
            return Err(FormatError::LengthMismatch {
                declared,
                payload_bytes: payload.len(),
            });
        }
        if declared == 0 {
            return Err(FormatError::Empty);
        }
        let params: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        if let Some(index) = params.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFiniteValue { index });
        }
        Ok(Self { params })
    }
}

impl TryFrom<Vec<f32>> for ModelVector {
    type Error = ModelError;

    fn try_from(params: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(params)
    }
}

/// `local - global` for one client, kept in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialVector {
    pub client: usize,
    pub values: Vec<f32>,
}

impl DifferentialVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-client L2 norms of the differential vectors, index-aligned with clients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct L2Norms(pub Vec<f64>);

impl L2Norms {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for L2Norms {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

/// Dot product of two `f32` slices, widened to `f64` and accumulated in
/// ascending index order.
///
/// Every dot product and squared norm in the pipeline goes through this
/// function so that different schedules produce bit-identical results.
#[inline]
pub fn dot64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

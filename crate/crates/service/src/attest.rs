//! Mock attestation: the enclave proves possession of the device key by
//! MACing its measurement together with the client's nonce.

use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const NONCE_LEN: usize = 16;
pub const QUOTE_LEN: usize = NONCE_LEN + 32 + 32;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AttestError {
    #[error("quote is {0} bytes, expected {QUOTE_LEN}")]
    BadLength(usize),
    #[error("quote answers a different nonce")]
    NonceMismatch,
    #[error("measurement does not match the reference value")]
    MeasurementMismatch,
    #[error("quote MAC does not verify")]
    BadMac,
}

/// 32-byte digest of the pipeline build.
pub type Measurement = [u8; 32];

/// Pre-shared key of the mock device.
#[derive(Clone, PartialEq, Eq)]
pub struct DeviceKey(pub [u8; 32]);

impl std::fmt::Debug for DeviceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("DeviceKey(..)")
    }
}

impl DeviceKey {
    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.0).expect("HMAC accepts any key length")
    }
}

/// SHA-256 of a build artifact, usable as a measurement.
pub fn measure(artifact: &[u8]) -> Measurement {
    Sha256::digest(artifact).into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationQuote {
    pub nonce: [u8; NONCE_LEN],
    pub measurement: Measurement,
    pub mac: [u8; 32],
}

impl AttestationQuote {
    /// MAC over `measurement ‖ nonce` under the device key.
    pub fn issue(key: &DeviceKey, measurement: &Measurement, nonce: &[u8; NONCE_LEN]) -> Self {
        let mut mac = key.mac();
        mac.update(measurement);
        mac.update(nonce);
        Self {
            nonce: *nonce,
            measurement: *measurement,
            mac: mac.finalize().into_bytes().into(),
        }
    }

    /// Client-side check against the nonce it sent and its reference measurement.
    pub fn verify(
        &self,
        key: &DeviceKey,
        expected: &Measurement,
        nonce: &[u8; NONCE_LEN],
    ) -> Result<(), AttestError> {
        if &self.nonce != nonce {
            return Err(AttestError::NonceMismatch);
        }
        if &self.measurement != expected {
            return Err(AttestError::MeasurementMismatch);
        }
        let mut mac = key.mac();
        mac.update(&self.measurement);
        mac.update(&self.nonce);
        mac.verify_slice(&self.mac).map_err(|_| AttestError::BadMac)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        [&self.nonce[..], &self.measurement[..], &self.mac[..]].concat()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AttestError> {
        if bytes.len() != QUOTE_LEN {
            return Err(AttestError::BadLength(bytes.len()));
        }
        Ok(Self {
            nonce: bytes[..16].try_into().expect("16 bytes"),
            measurement: bytes[16..48].try_into().expect("32 bytes"),
            mac: bytes[48..].try_into().expect("32 bytes"),
        })
    }
}

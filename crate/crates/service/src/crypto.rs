//! Session key agreement and the directional AEAD channel.
//!
//! Nonces are `direction ‖ 0 0 0 ‖ counter (u64 LE)` and are never sent on
//! the wire: each side tracks the counters, so a replayed, reordered or
//! dropped message fails authentication.

use chacha20poly1305::aead::rand_core::RngCore;
use chacha20poly1305::aead::{Aead, KeyInit, OsRng, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use sha2::Sha256;
use x25519_dalek::{PublicKey, StaticSecret};

use crate::attest::{Measurement, NONCE_LEN};
use crate::error::ServiceError;

pub const CLIENT_TO_SERVER: u8 = 0x01;
pub const SERVER_TO_CLIENT: u8 = 0x02;
/// Direction byte for entries of the model store.
pub const STORE: u8 = 0x03;

const KDF_SALT: &[u8] = b"FLG1 session v1";

pub fn random_bytes<const N: usize>() -> [u8; N] {
    let mut out = [0u8; N];
    OsRng.fill_bytes(&mut out);
    out
}

/// Fresh X25519 key pair from the OS generator.
pub fn generate_keypair() -> (StaticSecret, PublicKey) {
    let secret = StaticSecret::random_from_rng(OsRng);
    let public = PublicKey::from(&secret);
    (secret, public)
}

/// Everything both sides saw before the session key exists.
#[derive(Debug, Clone, Copy)]
pub struct Transcript<'a> {
    pub nonce: &'a [u8; NONCE_LEN],
    pub measurement: &'a Measurement,
    pub client_public: &'a [u8; 32],
    pub server_public: &'a [u8; 32],
    pub client_id: u32,
}

impl Transcript<'_> {
    fn info(&self) -> Vec<u8> {
        [
            &b"FLG1"[..],
            self.nonce,
            self.measurement,
            self.client_public,
            self.server_public,
            &self.client_id.to_le_bytes(),
        ]
        .concat()
    }
}

/// HKDF-SHA256 over the X25519 shared secret, bound to the transcript.
pub fn derive_session_secret(own: &StaticSecret, peer: &PublicKey, transcript: &Transcript) -> [u8; 32] {
    let shared = own.diffie_hellman(peer);
    let mut out = [0u8; 32];
    Hkdf::<Sha256>::new(Some(KDF_SALT), shared.as_bytes())
        .expand(&transcript.info(), &mut out)
        .expect("32 bytes is a valid HKDF output length");
    out
}

pub fn aead_nonce(direction: u8, counter: u64) -> [u8; 12] {
    let mut nonce = [0u8; 12];
    nonce[0] = direction;
    nonce[4..].copy_from_slice(&counter.to_le_bytes());
    nonce
}

/// Sending half of a session.
pub struct Sealer {
    cipher: ChaCha20Poly1305,
    direction: u8,
    counter: u64,
}

/// Receiving half of a session.
pub struct Opener {
    cipher: ChaCha20Poly1305,
    direction: u8,
    counter: u64,
}

impl Sealer {
    pub fn new(key: &[u8; 32], direction: u8) -> Self {
        Self {
            cipher: ChaCha20Poly1305::new(Key::from_slice(key)),
            direction,
            counter: 0,
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn seal(&mut self, aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
        let nonce = aead_nonce(self.direction, self.counter);
        self.counter = self.counter.checked_add(1).expect("nonce counter exhausted");
        self.cipher
            .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad })
            .expect("ChaCha20-Poly1305 encryption is infallible for in-memory buffers")
    }
}

impl Opener {
    pub fn new(key: &[u8; 32], direction: u8) -> Self {
        Self {
            cipher: ChaCha20Poly1305::new(Key::from_slice(key)),
            direction,
            counter: 0,
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Decrypts the next message; the counter only advances on success.
    pub fn open(&mut self, aad: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>, ServiceError> {
        let nonce = aead_nonce(self.direction, self.counter);
        let plain = self
            .cipher
            .decrypt(Nonce::from_slice(&nonce), Payload { msg: ciphertext, aad })
            .map_err(|_| ServiceError::AuthFailure)?;
        self.counter += 1;
        Ok(plain)
    }
}

/// Per-client state once key agreement has finished.
pub struct SessionContext {
    pub client_id: u32,
    pub sealer: Sealer,
    pub opener: Opener,
}

impl SessionContext {
    pub fn for_server(client_id: u32, secret: &[u8; 32]) -> Self {
        Self {
            client_id,
            sealer: Sealer::new(secret, SERVER_TO_CLIENT),
            opener: Opener::new(secret, CLIENT_TO_SERVER),
        }
    }

    pub fn for_client(client_id: u32, secret: &[u8; 32]) -> Self {
        Self {
            client_id,
            sealer: Sealer::new(secret, CLIENT_TO_SERVER),
            opener: Opener::new(secret, SERVER_TO_CLIENT),
        }
    }
}

/// Associated data for a round-bound message: type byte then round id.
pub fn round_aad(kind: crate::frame::MessageType, round: u64) -> [u8; 9] {
    let mut aad = [0u8; 9];
    aad[0] = kind as u8;
    aad[1..].copy_from_slice(&round.to_le_bytes());
    aad
}

//! Round-scoped model store. Entries are kept only as ciphertext under a
//! unified round key that is generated fresh for every round.

use std::collections::BTreeMap;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use flame_core::ModelVector;

use crate::crypto::{aead_nonce, random_bytes, STORE};
use crate::error::ServiceError;

pub struct ModelStore {
    round: u64,
    params: usize,
    cipher: ChaCha20Poly1305,
    entries: BTreeMap<u32, Vec<u8>>,
}

impl std::fmt::Debug for ModelStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelStore")
            .field("round", &self.round)
            .field("params", &self.params)
            .field("entries", &self.entries.len())
            .finish_non_exhaustive()
    }
}

impl ModelStore {
    /// Empty store for `round` holding models of `params` parameters.
    pub fn new(round: u64, params: usize) -> Self {
        Self::with_key(round, params, &random_bytes::<32>())
    }

    pub fn with_key(round: u64, params: usize, key: &[u8; 32]) -> Self {
        Self {
            round,
            params,
            cipher: ChaCha20Poly1305::new(Key::from_slice(key)),
            entries: BTreeMap::new(),
        }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The stored ciphertexts keyed by client.
    pub fn ciphertexts(&self) -> &BTreeMap<u32, Vec<u8>> {
        &self.entries
    }

    fn aad(&self, client: u32) -> [u8; 12] {
        let mut aad = [0u8; 12];
        aad[..8].copy_from_slice(&self.round.to_le_bytes());
        aad[8..].copy_from_slice(&client.to_le_bytes());
        aad
    }

    /// Re-encrypts `model` under the round key.
    pub fn insert(&mut self, client: u32, model: &ModelVector) -> Result<usize, ServiceError> {
        if model.len() != self.params {
            return Err(ServiceError::DimensionMismatch {
                expected: self.params,
                found: model.len(),
            });
        }
        if self.entries.contains_key(&client) {
            return Err(ServiceError::DuplicateSubmission {
                client,
                round: self.round,
            });
        }
        // one entry per client under a per-round key, so the client id is a unique nonce
        let nonce = aead_nonce(STORE, u64::from(client));
        let ciphertext = self
            .cipher
            .encrypt(
                Nonce::from_slice(&nonce),
                Payload {
                    msg: &model.to_bytes(),
                    aad: &self.aad(client),
                },
            )
            .expect("in-memory encryption");
        self.entries.insert(client, ciphertext);
        Ok(self.entries.len())
    }

    /// Decrypts every entry, ordered by client id.
    pub fn decrypt_all(&self) -> Result<Vec<(u32, ModelVector)>, ServiceError> {
        self.entries
            .iter()
            .map(|(&client, ciphertext)| {
                let nonce = aead_nonce(STORE, u64::from(client));
                let plain = self
                    .cipher
                    .decrypt(
                        Nonce::from_slice(&nonce),
                        Payload {
                            msg: ciphertext,
                            aad: &self.aad(client),
                        },
                    )
                    .map_err(|_| ServiceError::AuthFailure)?;
                Ok((client, ModelVector::from_bytes(&plain)?))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(v: &[f32]) -> ModelVector {
        ModelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn insert_then_decrypt_sorted() {
        let mut store = ModelStore::new(4, 2);
        assert_eq!(store.insert(5, &model(&[5.0, 5.0])).unwrap(), 1);
        assert_eq!(store.insert(1, &model(&[1.0, 1.0])).unwrap(), 2);
        let out = store.decrypt_all().unwrap();
        assert_eq!(out, vec![(1, model(&[1.0, 1.0])), (5, model(&[5.0, 5.0]))]);
    }

    #[test]
    fn duplicate_and_dimension_errors() {
        let mut store = ModelStore::new(0, 2);
        store.insert(0, &model(&[1.0, 2.0])).unwrap();
        assert!(matches!(
            store.insert(0, &model(&[1.0, 2.0])),
            Err(ServiceError::DuplicateSubmission { client: 0, round: 0 })
        ));
        assert!(matches!(
            store.insert(1, &model(&[1.0])),
            Err(ServiceError::DimensionMismatch { expected: 2, found: 1 })
        ));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn entries_are_ciphertext_only() {
        let mut store = ModelStore::new(0, 64);
        let m = model(&[0.125; 64]);
        store.insert(3, &m).unwrap();
        let plain = m.to_bytes();
        let stored = &store.ciphertexts()[&3];
        assert_eq!(stored.len(), plain.len() + 16);
        assert!(!stored.windows(4).any(|w| w == b"FLSG"));
        assert!(!stored.windows(8).any(|w| w == &plain[10..18]));
    }

    #[test]
    fn tampered_entry_fails_to_decrypt() {
        let mut store = ModelStore::new(0, 1);
        store.insert(0, &model(&[1.0])).unwrap();
        store.entries.get_mut(&0).unwrap()[0] ^= 1;
        assert!(matches!(store.decrypt_all(), Err(ServiceError::AuthFailure)));
    }

    #[test]
    fn rounds_use_different_keys() {
        let m = model(&[1.0, 2.0, 3.0]);
        let mut a = ModelStore::new(0, 3);
        let mut b = ModelStore::new(0, 3);
        a.insert(0, &m).unwrap();
        b.insert(0, &m).unwrap();
        assert_ne!(a.ciphertexts()[&0], b.ciphertexts()[&0]);
    }
}

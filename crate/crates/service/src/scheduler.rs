//! Round orchestration and the per-connection protocol state machine.
//!
//! [`ServerSession`] consumes decoded frames and pushes replies into an
//! [`Outbox`]; it never touches a socket, so the protocol can be driven
//! directly in tests.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use flame_core::{run_round, ModelVector, RoundConfig};
use tracing::{debug, info, warn};
use x25519_dalek::PublicKey;

use crate::attest::{AttestationQuote, NONCE_LEN};
use crate::config::ServiceConfig;
use crate::crypto::{derive_session_secret, generate_keypair, round_aad, Opener, SessionContext, Sealer, Transcript};
use crate::error::ServiceError;
use crate::frame::{Frame, MessageType};
use crate::store::ModelStore;

/// Outgoing frames of one connection. Encrypted frames are sealed and queued
/// under one lock so counters match the order frames hit the wire.
pub struct Outbox {
    inner: Mutex<OutboxInner>,
}

struct OutboxInner {
    sealer: Option<Sealer>,
    tx: Sender<Frame>,
}

impl Outbox {
    pub fn new() -> (Arc<Self>, Receiver<Frame>) {
        let (tx, rx) = channel();
        (
            Arc::new(Self {
                inner: Mutex::new(OutboxInner { sealer: None, tx }),
            }),
            rx,
        )
    }

    fn lock(&self) -> MutexGuard<'_, OutboxInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Queues a plaintext frame. A closed connection is ignored.
    pub fn send(&self, frame: Frame) {
        let _ = self.lock().tx.send(frame);
    }

    fn install(&self, sealer: Sealer) {
        self.lock().sealer = Some(sealer);
    }

    fn send_global(&self, round: u64, model: &ModelVector) {
        let mut inner = self.lock();
        let inner = &mut *inner;
        let Some(sealer) = inner.sealer.as_mut() else {
            return;
        };
        let mut payload = round.to_le_bytes().to_vec();
        payload.extend(sealer.seal(&round_aad(MessageType::GlobalModel, round), &model.to_bytes()));
        let _ = inner.tx.send(Frame::new(MessageType::GlobalModel, payload));
    }
}

/// Summary of one completed round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    /// Submitting clients in ascending id order; `labels[i]` belongs to `clients[i]`.
    pub clients: Vec<u32>,
    pub labels: Vec<u8>,
    pub all_noise_fallback: bool,
    pub median_norm: Option<f64>,
    /// The model broadcast for the next round.
    pub model: ModelVector,
    /// Set when the pipeline failed; the previous global model is kept.
    pub error: Option<String>,
}

struct RoundState {
    round: u64,
    global: ModelVector,
    store: ModelStore,
}

pub struct Scheduler {
    config: ServiceConfig,
    state: Mutex<RoundState>,
    sessions: Mutex<BTreeMap<u32, Arc<Outbox>>>,
    next_client: AtomicU32,
    history: Mutex<Vec<RoundRecord>>,
    round_done: Condvar,
}

impl Scheduler {
    pub fn new(config: ServiceConfig) -> Self {
        let params = config.initial_model.len();
        Self {
            state: Mutex::new(RoundState {
                round: 0,
                global: config.initial_model.clone(),
                store: ModelStore::new(0, params),
            }),
            config,
            sessions: Mutex::new(BTreeMap::new()),
            next_client: AtomicU32::new(0),
            history: Mutex::new(Vec::new()),
            round_done: Condvar::new(),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn state(&self) -> MutexGuard<'_, RoundState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn sessions(&self) -> MutexGuard<'_, BTreeMap<u32, Arc<Outbox>>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn history_lock(&self) -> MutexGuard<'_, Vec<RoundRecord>> {
        self.history.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Current round id and global model.
    pub fn current(&self) -> (u64, ModelVector) {
        let state = self.state();
        (state.round, state.global.clone())
    }

    /// Read access to the store of the open round.
    pub fn with_store<R>(&self, f: impl FnOnce(&ModelStore) -> R) -> R {
        f(&self.state().store)
    }

    pub fn history(&self) -> Vec<RoundRecord> {
        self.history_lock().clone()
    }

    pub fn rounds_completed(&self) -> usize {
        self.history_lock().len()
    }

    /// Blocks until at least `rounds` rounds have completed or `timeout` passes.
    pub fn wait_for_rounds(&self, rounds: usize, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut history = self.history_lock();
        while history.len() < rounds {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return false;
            }
            history = self
                .round_done
                .wait_timeout(history, left)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        true
    }

    /// Stores a decrypted submission. Returns the store size and whether the
    /// quorum is now met.
    pub fn submit(&self, client: u32, round: u64, model: &ModelVector) -> Result<(usize, bool), ServiceError> {
        let mut state = self.state();
        if round != state.round {
            return Err(ServiceError::UnknownRound {
                requested: round,
                current: state.round,
            });
        }
        let stored = state.store.insert(client, model)?;
        debug!(client, round, stored, "model stored");
        Ok((stored, stored >= self.config.quorum))
    }

    /// Aggregates the open round, advances to the next one and broadcasts
    /// the new global model to every established session.
    pub fn run_round(&self) -> Result<RoundRecord, ServiceError> {
        let mut state = self.state();
        let stored = state.store.len();
        if stored == 0 || stored < self.config.quorum {
            return Err(ServiceError::InsufficientModels {
                stored,
                quorum: self.config.quorum,
            });
        }
        let round = state.round;
        let params = state.global.len();
        let store = std::mem::replace(&mut state.store, ModelStore::new(round + 1, params));
        let decrypted = store.decrypt_all();
        drop(store);

        let result = decrypted.and_then(|models| {
            let (clients, locals): (Vec<u32>, Vec<ModelVector>) = models.into_iter().unzip();
            let config = RoundConfig::new(locals.len(), params)
                .with_stages(self.config.stages)
                .with_noise_range(self.config.noise_range)
                .with_noise_scale(self.config.noise_scale)
                .with_seed(self.config.round_seed(round));
            let outcome = run_round(&state.global, &locals, &config, self.config.defense)?;
            Ok((clients, outcome))
        });

        let record = match result {
            Ok((clients, outcome)) => RoundRecord {
                round,
                clients,
                labels: outcome.labels.labels().to_vec(),
                all_noise_fallback: outcome.all_noise_fallback,
                median_norm: outcome.scale.map(|s| s.median_norm),
                model: outcome.model,
                error: None,
            },
            Err(e) => {
                warn!(round, error = %e, "round failed; keeping the previous global model");
                RoundRecord {
                    round,
                    clients: Vec::new(),
                    labels: Vec::new(),
                    all_noise_fallback: false,
                    median_norm: None,
                    model: state.global.clone(),
                    error: Some(e.to_string()),
                }
            }
        };

        state.global = record.model.clone();
        state.round = round + 1;
        // recorded before the push so a client holding the new model can find it
        self.history_lock().push(record.clone());
        self.round_done.notify_all();
        for outbox in self.sessions().values() {
            outbox.send_global(state.round, &state.global);
        }
        info!(
            round,
            accepted = record.labels.iter().filter(|&&l| l == 1).count(),
            submitted = stored,
            "round aggregated"
        );
        drop(state);
        Ok(record)
    }

    fn unregister(&self, client: u32) {
        self.sessions().remove(&client);
    }
}

enum Phase {
    AwaitAttest,
    AwaitKeyExchange { nonce: [u8; NONCE_LEN] },
    Established { client_id: u32, opener: Opener },
}

/// Server side of one client connection.
pub struct ServerSession {
    scheduler: Arc<Scheduler>,
    outbox: Arc<Outbox>,
    phase: Phase,
}

impl ServerSession {
    pub fn new(scheduler: Arc<Scheduler>, outbox: Arc<Outbox>) -> Self {
        Self {
            scheduler,
            outbox,
            phase: Phase::AwaitAttest,
        }
    }

    pub fn client_id(&self) -> Option<u32> {
        match self.phase {
            Phase::Established { client_id, .. } => Some(client_id),
            _ => None,
        }
    }

    pub fn outbox(&self) -> &Arc<Outbox> {
        &self.outbox
    }

    /// Processes one frame from the client. Replies are queued on the outbox;
    /// errors are returned for the caller to report.
    pub fn handle(&mut self, frame: Frame) -> Result<(), ServiceError> {
        match (frame.kind, &mut self.phase) {
            (MessageType::AttestReq, Phase::AwaitAttest) => self.attest(&frame.payload),
            (MessageType::KeyxReq, Phase::AwaitKeyExchange { nonce }) => {
                let nonce = *nonce;
                self.key_exchange(nonce, &frame.payload)
            }
            (MessageType::ModelSubmit, Phase::Established { client_id, opener }) => {
                let client_id = *client_id;
                let (round, model) = open_submission(opener, &frame.payload)?;
                self.submit(client_id, round, &model)
            }
            _ => Err(ServiceError::ProtocolOrderViolation),
        }
    }

    fn attest(&mut self, payload: &[u8]) -> Result<(), ServiceError> {
        let nonce: [u8; NONCE_LEN] = payload
            .try_into()
            .map_err(|_| ServiceError::Malformed(format!("attestation nonce of {} bytes", payload.len())))?;
        let config = self.scheduler.config();
        let quote = AttestationQuote::issue(&config.device_key, &config.measurement, &nonce);
        self.outbox.send(Frame::new(MessageType::AttestResp, quote.to_bytes()));
        self.phase = Phase::AwaitKeyExchange { nonce };
        Ok(())
    }

    fn key_exchange(&mut self, nonce: [u8; NONCE_LEN], payload: &[u8]) -> Result<(), ServiceError> {
        let client_public: [u8; 32] = payload
            .try_into()
            .map_err(|_| ServiceError::Malformed(format!("public key of {} bytes", payload.len())))?;
        let (secret, public) = generate_keypair();
        let client_id = self.scheduler.next_client.fetch_add(1, Ordering::Relaxed);
        let transcript = Transcript {
            nonce: &nonce,
            measurement: &self.scheduler.config().measurement,
            client_public: &client_public,
            server_public: public.as_bytes(),
            client_id,
        };
        let shared = derive_session_secret(&secret, &PublicKey::from(client_public), &transcript);
        let SessionContext { sealer, opener, .. } = SessionContext::for_server(client_id, &shared);

        // registering and the first push happen under the round lock so a
        // concurrent broadcast cannot slip in between
        let state = self.scheduler.state();
        let mut reply = client_id.to_le_bytes().to_vec();
        reply.extend_from_slice(public.as_bytes());
        self.outbox.send(Frame::new(MessageType::KeyxResp, reply));
        self.outbox.install(sealer);
        self.scheduler.sessions().insert(client_id, Arc::clone(&self.outbox));
        self.outbox.send_global(state.round, &state.global);
        drop(state);

        info!(client_id, "session established");
        self.phase = Phase::Established { client_id, opener };
        Ok(())
    }

    fn submit(&mut self, client_id: u32, round: u64, model: &ModelVector) -> Result<(), ServiceError> {
        let (stored, ready) = self.scheduler.submit(client_id, round, model)?;
        let mut ack = round.to_le_bytes().to_vec();
        ack.extend_from_slice(&(stored as u32).to_le_bytes());
        self.outbox.send(Frame::new(MessageType::SubmitAck, ack));
        if ready {
            // the round may already have been run by a concurrent submitter
            match self.scheduler.run_round() {
                Ok(_) | Err(ServiceError::InsufficientModels { .. }) => {}
                Err(e) => warn!(error = %e, "round execution failed"),
            }
        }
        Ok(())
    }
}

impl Drop for ServerSession {
    fn drop(&mut self) {
        if let Some(client_id) = self.client_id() {
            self.scheduler.unregister(client_id);
        }
    }
}

fn open_submission(opener: &mut Opener, payload: &[u8]) -> Result<(u64, ModelVector), ServiceError> {
    if payload.len() < 8 {
        return Err(ServiceError::Malformed("submission shorter than its round id".into()));
    }
    let round = u64::from_le_bytes(payload[..8].try_into().expect("8 bytes"));
    let plain = opener.open(&round_aad(MessageType::ModelSubmit, round), &payload[8..])?;
    Ok((round, ModelVector::from_bytes(&plain)?))
}

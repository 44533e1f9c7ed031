//! Attested aggregation scheduler.
//!
//! Clients attest the (mock) enclave, agree on a session key, and submit
//! encrypted local models. The scheduler re-encrypts every submission under a
//! per-round key, runs the aggregation pipeline once the quorum is reached and
//! pushes the new global model back to every session.
//!
//! Frames on the wire are `"FLG1" ‖ type ‖ u32 LE length ‖ payload`:
//!
//! | type | name           | payload                                   |
//! |------|----------------|-------------------------------------------|
//! | 0x01 | `ATTEST_REQ`   | nonce (16)                                |
//! | 0x02 | `ATTEST_RESP`  | nonce (16) ‖ measurement (32) ‖ MAC (32)  |
//! | 0x03 | `KEYX_REQ`     | client X25519 public key (32)             |
//! | 0x04 | `KEYX_RESP`    | client id (u32 LE) ‖ server public key (32) |
//! | 0x05 | `MODEL_SUBMIT` | round (u64 LE) ‖ AEAD(FLSG model)         |
//! | 0x06 | `SUBMIT_ACK`   | round (u64 LE) ‖ models stored (u32 LE)   |
//! | 0x07 | `GLOBAL_MODEL` | round (u64 LE) ‖ AEAD(FLSG model)         |
//! | 0x7F | `ERROR`        | code (u16 LE)                             |

pub mod attest;
pub mod client;
pub mod config;
pub mod crypto;
mod error;
pub mod frame;
pub mod scheduler;
pub mod server;
pub mod store;

pub use attest::{AttestationQuote, DeviceKey, Measurement};
pub use client::{Client, ClientTrust};
pub use config::ServiceConfig;
pub use error::{ErrorCode, ServiceError};
pub use frame::{Frame, MessageType};
pub use scheduler::{Outbox, RoundRecord, Scheduler, ServerSession};
pub use server::{Server, ServerHandle};
pub use store::ModelStore;

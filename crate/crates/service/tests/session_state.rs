//! Drives the server state machine directly, without sockets.

mod common;

use std::sync::mpsc::Receiver;
use std::sync::Arc;

use flame_core::ModelVector;
use flame_service::crypto::{derive_session_secret, generate_keypair, round_aad, SessionContext, Transcript};
use flame_service::{
    AttestationQuote, ErrorCode, Frame, MessageType, Outbox, Scheduler, ServerSession, ServiceError,
};
use x25519_dalek::PublicKey;

struct Harness {
    session: ServerSession,
    replies: Receiver<Frame>,
}

impl Harness {
    fn new(scheduler: &Arc<Scheduler>) -> Self {
        let (outbox, replies) = Outbox::new();
        Self {
            session: ServerSession::new(Arc::clone(scheduler), outbox),
            replies,
        }
    }

    fn reply(&self) -> Frame {
        self.replies.try_recv().expect("a queued reply")
    }

    /// Attest and exchange keys; returns the client's session and the first pushed model.
    fn establish(&mut self) -> (SessionContext, u64, ModelVector) {
        let nonce = [0x33u8; 16];
        self.session.handle(Frame::new(MessageType::AttestReq, nonce.to_vec())).unwrap();
        let resp = self.reply();
        assert_eq!(resp.kind, MessageType::AttestResp);
        let trust = common::trust();
        AttestationQuote::from_bytes(&resp.payload)
            .unwrap()
            .verify(&trust.device_key, &trust.measurement, &nonce)
            .unwrap();

        let (secret, public) = generate_keypair();
        self.session
            .handle(Frame::new(MessageType::KeyxReq, public.as_bytes().to_vec()))
            .unwrap();
        let keyx = self.reply();
        assert_eq!(keyx.kind, MessageType::KeyxResp);
        let client_id = u32::from_le_bytes(keyx.payload[..4].try_into().unwrap());
        let server_public: [u8; 32] = keyx.payload[4..].try_into().unwrap();
        let shared = derive_session_secret(
            &secret,
            &PublicKey::from(server_public),
            &Transcript {
                nonce: &nonce,
                measurement: &trust.measurement,
                client_public: public.as_bytes(),
                server_public: &server_public,
                client_id,
            },
        );
        let mut ctx = SessionContext::for_client(client_id, &shared);
        let push = self.reply();
        assert_eq!(push.kind, MessageType::GlobalModel);
        let round = u64::from_le_bytes(push.payload[..8].try_into().unwrap());
        let plain = ctx
            .opener
            .open(&round_aad(MessageType::GlobalModel, round), &push.payload[8..])
            .unwrap();
        (ctx, round, ModelVector::from_bytes(&plain).unwrap())
    }

    fn submission(ctx: &mut SessionContext, round: u64, model: &ModelVector) -> Frame {
        let mut payload = round.to_le_bytes().to_vec();
        payload.extend(ctx.sealer.seal(&round_aad(MessageType::ModelSubmit, round), &model.to_bytes()));
        Frame::new(MessageType::ModelSubmit, payload)
    }
}

fn scheduler(params: usize, quorum: usize) -> Arc<Scheduler> {
    Arc::new(Scheduler::new(common::config(ModelVector::zeros(params), quorum)))
}

#[test]
fn submit_before_key_exchange_is_rejected() {
    let s = scheduler(2, 1);
    let mut h = Harness::new(&s);
    let err = h
        .session
        .handle(Frame::new(MessageType::ModelSubmit, vec![0; 40]))
        .unwrap_err();
    assert_eq!(err.code(), ErrorCode::ProtocolOrderViolation);

    let mut h = Harness::new(&s);
    h.session.handle(Frame::new(MessageType::AttestReq, vec![0; 16])).unwrap();
    let err = h
        .session
        .handle(Frame::new(MessageType::ModelSubmit, vec![0; 40]))
        .unwrap_err();
    assert_eq!(err.code(), ErrorCode::ProtocolOrderViolation);
}

#[test]
fn key_exchange_before_attestation_is_rejected() {
    let s = scheduler(2, 1);
    let mut h = Harness::new(&s);
    let err = h.session.handle(Frame::new(MessageType::KeyxReq, vec![9; 32])).unwrap_err();
    assert!(matches!(err, ServiceError::ProtocolOrderViolation));
    assert!(h.replies.try_recv().is_err(), "nothing is sent for a rejected message");
}

#[test]
fn repeated_attestation_and_server_bound_types_are_rejected() {
    let s = scheduler(2, 1);
    let mut h = Harness::new(&s);
    h.establish();
    for kind in [MessageType::AttestReq, MessageType::KeyxReq, MessageType::GlobalModel, MessageType::Error] {
        let err = h.session.handle(Frame::new(kind, vec![0; 16])).unwrap_err();
        assert_eq!(err.code(), ErrorCode::ProtocolOrderViolation, "{kind:?}");
    }
}

#[test]
fn malformed_handshake_payloads() {
    let s = scheduler(2, 1);
    let mut h = Harness::new(&s);
    let err = h.session.handle(Frame::new(MessageType::AttestReq, vec![0; 15])).unwrap_err();
    assert_eq!(err.code(), ErrorCode::MalformedMessage);
}

#[test]
fn submissions_ack_duplicate_dimension_round() {
    let s = scheduler(3, 3);
    let mut h = Harness::new(&s);
    let (mut ctx, round, global) = h.establish();
    assert_eq!(round, 0);
    assert_eq!(global, ModelVector::zeros(3));

    let m = common::model(&[1.0, 2.0, 3.0]);
    h.session.handle(Harness::submission(&mut ctx, 0, &m)).unwrap();
    let ack = h.reply();
    assert_eq!(ack.kind, MessageType::SubmitAck);
    assert_eq!(ack.payload, [0u64.to_le_bytes().as_slice(), &1u32.to_le_bytes()].concat());
    assert_eq!(s.with_store(|st| st.len()), 1);

    let err = h.session.handle(Harness::submission(&mut ctx, 0, &m)).unwrap_err();
    assert!(matches!(err, ServiceError::DuplicateSubmission { round: 0, .. }));

    let mut h2 = Harness::new(&s);
    let (mut ctx2, _, _) = h2.establish();
    let err = h2
        .session
        .handle(Harness::submission(&mut ctx2, 0, &common::model(&[1.0, 2.0])))
        .unwrap_err();
    assert!(matches!(err, ServiceError::DimensionMismatch { expected: 3, found: 2 }));
    let err = h2.session.handle(Harness::submission(&mut ctx2, 5, &m)).unwrap_err();
    assert!(matches!(err, ServiceError::UnknownRound { requested: 5, current: 0 }));
    assert_eq!(s.with_store(|st| st.len()), 1);
}

#[test]
fn flipped_bit_fails_authentication() {
    let s = scheduler(2, 1);
    let mut h = Harness::new(&s);
    let (mut ctx, _, _) = h.establish();
    let mut frame = Harness::submission(&mut ctx, 0, &common::model(&[1.0, 1.0]));
    frame.payload[12] ^= 0x01;
    let err = h.session.handle(frame).unwrap_err();
    assert_eq!(err.code(), ErrorCode::AuthFailure);
    assert!(err.code().is_fatal());
    assert_eq!(s.with_store(|st| st.len()), 0);
}

#[test]
fn round_without_submissions_is_insufficient() {
    let s = scheduler(2, 2);
    assert!(matches!(s.run_round(), Err(ServiceError::InsufficientModels { stored: 0, .. })));
    let mut h = Harness::new(&s);
    let (mut ctx, _, _) = h.establish();
    h.session.handle(Harness::submission(&mut ctx, 0, &common::model(&[1.0, 1.0]))).unwrap();
    assert!(matches!(s.run_round(), Err(ServiceError::InsufficientModels { stored: 1, quorum: 2 })));
}

#[test]
fn quorum_runs_the_round_and_pushes_the_result() {
    let mut cfg = common::config(ModelVector::zeros(4), 3);
    cfg.noise_range = 0.0;
    let s = Arc::new(Scheduler::new(cfg));
    let m = common::model(&[0.5, -1.5, 2.0, 8.0]);
    let mut sessions: Vec<(Harness, SessionContext)> = (0..3)
        .map(|_| {
            let mut h = Harness::new(&s);
            let (ctx, _, _) = h.establish();
            (h, ctx)
        })
        .collect();
    // identical submissions with λ = 0 form a fixed point
    for (h, ctx) in sessions.iter_mut() {
        h.session.handle(Harness::submission(ctx, 0, &m)).unwrap();
        assert_eq!(h.reply().kind, MessageType::SubmitAck);
    }
    assert_eq!(s.rounds_completed(), 1);
    assert_eq!(s.current(), (1, m.clone()));
    for (h, ctx) in sessions.iter_mut() {
        let push = h.reply();
        assert_eq!(push.kind, MessageType::GlobalModel);
        assert_eq!(u64::from_le_bytes(push.payload[..8].try_into().unwrap()), 1);
        let plain = ctx
            .opener
            .open(&round_aad(MessageType::GlobalModel, 1), &push.payload[8..])
            .unwrap();
        assert_eq!(ModelVector::from_bytes(&plain).unwrap(), m);
    }
    let record = &s.history()[0];
    assert_eq!(record.labels, vec![1, 1, 1]);
    assert_eq!(record.clients, vec![0, 1, 2]);
}

#[test]
fn store_holds_only_ciphertext() {
    let s = scheduler(16, 5);
    let mut h = Harness::new(&s);
    let (mut ctx, _, _) = h.establish();
    let m = common::model(&[3.25; 16]);
    h.session.handle(Harness::submission(&mut ctx, 0, &m)).unwrap();
    let plain = m.to_bytes();
    s.with_store(|st| {
        for ct in st.ciphertexts().values() {
            assert!(!ct.windows(4).any(|w| w == b"FLSG"));
            assert!(!ct.windows(8).any(|w| w == &plain[10..18]));
        }
    });
}

//! Client side of the protocol.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use flame_core::ModelVector;
use x25519_dalek::PublicKey;

use crate::attest::{AttestationQuote, DeviceKey, Measurement, NONCE_LEN};
use crate::crypto::{derive_session_secret, generate_keypair, random_bytes, round_aad, SessionContext, Transcript};
use crate::error::ServiceError;
use crate::frame::{read_frame, write_frame, Frame, MessageType};

/// What a client must know in advance to trust the service.
#[derive(Debug, Clone)]
pub struct ClientTrust {
    pub device_key: DeviceKey,
    pub measurement: Measurement,
}

pub struct Client<S: Read + Write = TcpStream> {
    stream: S,
    session: SessionContext,
    globals: VecDeque<(u64, ModelVector)>,
}

impl Client<TcpStream> {
    pub fn connect(addr: impl ToSocketAddrs, trust: &ClientTrust) -> Result<Self, ServiceError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_secs(120)))?;
        Self::handshake(stream, trust)
    }
}

fn expect(frame: Frame, kind: MessageType) -> Result<Vec<u8>, ServiceError> {
    if frame.kind == kind {
        return Ok(frame.payload);
    }
    if frame.kind == MessageType::Error && frame.payload.len() == 2 {
        return Err(ServiceError::Remote(u16::from_le_bytes([frame.payload[0], frame.payload[1]])));
    }
    Err(ServiceError::ProtocolOrderViolation)
}

impl<S: Read + Write> Client<S> {
    /// Attests the service, agrees on a session key and registers.
    pub fn handshake(mut stream: S, trust: &ClientTrust) -> Result<Self, ServiceError> {
        let nonce: [u8; NONCE_LEN] = random_bytes();
        write_frame(&mut stream, &Frame::new(MessageType::AttestReq, nonce.to_vec()))?;
        let quote = AttestationQuote::from_bytes(&expect(read_frame(&mut stream)?, MessageType::AttestResp)?)?;
        quote.verify(&trust.device_key, &trust.measurement, &nonce)?;

        let (secret, public) = generate_keypair();
        write_frame(&mut stream, &Frame::new(MessageType::KeyxReq, public.as_bytes().to_vec()))?;
        let reply = expect(read_frame(&mut stream)?, MessageType::KeyxResp)?;
        if reply.len() != 36 {
            return Err(ServiceError::Malformed(format!("key exchange reply of {} bytes", reply.len())));
        }
        let client_id = u32::from_le_bytes(reply[..4].try_into().expect("4 bytes"));
        let server_public: [u8; 32] = reply[4..].try_into().expect("32 bytes");
        let transcript = Transcript {
            nonce: &nonce,
            measurement: &trust.measurement,
            client_public: public.as_bytes(),
            server_public: &server_public,
            client_id,
        };
        let shared = derive_session_secret(&secret, &PublicKey::from(server_public), &transcript);
        Ok(Self {
            stream,
            session: SessionContext::for_client(client_id, &shared),
            globals: VecDeque::new(),
        })
    }

    /// Id assigned by the service; orders this client within each round.
    pub fn id(&self) -> u32 {
        self.session.client_id
    }

    /// The next global model pushed by the service, with the round it opens.
    pub fn next_global(&mut self) -> Result<(u64, ModelVector), ServiceError> {
        if let Some(g) = self.globals.pop_front() {
            return Ok(g);
        }
        loop {
            let frame = read_frame(&mut self.stream)?;
            if frame.kind == MessageType::GlobalModel {
                return self.open_global(&frame.payload);
            }
            expect(frame, MessageType::GlobalModel)?;
        }
    }

    fn open_global(&mut self, payload: &[u8]) -> Result<(u64, ModelVector), ServiceError> {
        if payload.len() < 8 {
            return Err(ServiceError::Malformed("global model shorter than its round id".into()));
        }
        let round = u64::from_le_bytes(payload[..8].try_into().expect("8 bytes"));
        let plain = self
            .session
            .opener
            .open(&round_aad(MessageType::GlobalModel, round), &payload[8..])?;
        Ok((round, ModelVector::from_bytes(&plain)?))
    }

    /// Encrypts a submission frame without sending it.
    pub fn seal_submission(&mut self, round: u64, model: &ModelVector) -> Frame {
        let mut payload = round.to_le_bytes().to_vec();
        payload.extend(
            self.session
                .sealer
                .seal(&round_aad(MessageType::ModelSubmit, round), &model.to_bytes()),
        );
        Frame::new(MessageType::ModelSubmit, payload)
    }

    /// Submits `model` for `round`; returns the number of models the service
    /// now holds for that round.
    pub fn submit(&mut self, round: u64, model: &ModelVector) -> Result<usize, ServiceError> {
        let frame = self.seal_submission(round, model);
        self.send_raw(&frame)?;
        self.await_ack()
    }

    /// Reads until the acknowledgment of the last submission, queueing any
    /// global models that arrive first.
    pub fn await_ack(&mut self) -> Result<usize, ServiceError> {
        loop {
            let frame = read_frame(&mut self.stream)?;
            if frame.kind == MessageType::GlobalModel {
                let g = self.open_global(&frame.payload)?;
                self.globals.push_back(g);
                continue;
            }
            let ack = expect(frame, MessageType::SubmitAck)?;
            if ack.len() != 12 {
                return Err(ServiceError::Malformed(format!("ack of {} bytes", ack.len())));
            }
            return Ok(u32::from_le_bytes(ack[8..].try_into().expect("4 bytes")) as usize);
        }
    }

    pub fn send_raw(&mut self, frame: &Frame) -> Result<(), ServiceError> {
        Ok(write_frame(&mut self.stream, frame)?)
    }

    pub fn recv_raw(&mut self) -> Result<Frame, ServiceError> {
        Ok(read_frame(&mut self.stream)?)
    }

    pub fn stream(&self) -> &S {
        &self.stream
    }
}

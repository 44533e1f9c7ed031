//! Length-prefixed frames: `"FLG1"`, a type byte, a u32 LE payload length,
//! then the payload.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const FRAME_MAGIC: [u8; 4] = *b"FLG1";
pub const FRAME_HEADER_LEN: usize = 9;
pub const MAX_PAYLOAD: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    AttestReq = 0x01,
    AttestResp = 0x02,
    KeyxReq = 0x03,
    KeyxResp = 0x04,
    ModelSubmit = 0x05,
    SubmitAck = 0x06,
    GlobalModel = 0x07,
    Error = 0x7F,
}

impl MessageType {
    pub fn from_byte(b: u8) -> Option<Self> {
        use MessageType::*;
        Some(match b {
            0x01 => AttestReq,
            0x02 => AttestResp,
            0x03 => KeyxReq,
            0x04 => KeyxResp,
            0x05 => ModelSubmit,
            0x06 => SubmitAck,
            0x07 => GlobalModel,
            0x7F => Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("payload of {0} bytes exceeds the frame limit")]
    TooLarge(usize),
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: MessageType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: MessageType, payload: Vec<u8>) -> Self {
        Self { kind, payload }
    }

    pub fn error(code: crate::ErrorCode) -> Self {
        Self::new(MessageType::Error, (code as u16).to_le_bytes().to_vec())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&FRAME_MAGIC);
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame<W: Write>(out: &mut W, frame: &Frame) -> Result<(), FrameError> {
    if frame.payload.len() > MAX_PAYLOAD {
        return Err(FrameError::TooLarge(frame.payload.len()));
    }
    out.write_all(&frame.encode())?;
    out.flush()?;
    Ok(())
}

/// Reads one frame. A clean EOF before the first header byte is [`FrameError::Closed`].
pub fn read_frame<R: Read>(input: &mut R) -> Result<Frame, FrameError> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    let mut filled = 0;
    while filled < header.len() {
        match input.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Err(FrameError::Closed),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let magic: [u8; 4] = header[..4].try_into().expect("4 bytes");
    if magic != FRAME_MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    let kind = MessageType::from_byte(header[4]).ok_or(FrameError::UnknownType(header[4]))?;
    let len = u32::from_le_bytes(header[5..9].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::TooLarge(len));
    }
    let mut payload = vec![0u8; len];
    input.read_exact(&mut payload)?;
    Ok(Frame { kind, payload })
}

//! Framed messages between the FL server and its clients.
//!
//! ```text
//! +------------------+-----------+-------------------------+
//! | u32 LE length    | u8 type   | payload (length bytes)  |
//! +------------------+-----------+-------------------------+
//! ```
//!
//! The length counts payload bytes only. Strings inside payloads are a
//! `u32` byte length followed by UTF-8; parameters use the codec layout and
//! always come last.

use std::io::{Read, Write};

use super::codec::{encode_params_into, Reader};
use super::RoundUpdate;
use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Upper bound on a single frame's payload.
pub const MAX_FRAME: u32 = 256 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Register = 1,
    ModelBroadcast = 2,
    Update = 3,
    Done = 4,
    Error = 5,
}

impl MessageType {
    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            1 => Self::Register,
            2 => Self::ModelBroadcast,
            3 => Self::Update,
            4 => Self::Done,
            5 => Self::Error,
            other => return Err(Error::Protocol(format!("unknown message type {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Client hello: identity, training-row count and encoded column layout.
    Register {
        client_id: String,
        sample_count: u64,
        layout: Vec<String>,
    },
    ModelBroadcast {
        round: u32,
        params: ModelParams,
    },
    Update(RoundUpdate),
    Done {
        rounds: u32,
        params: ModelParams,
    },
    Error {
        message: String,
    },
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Message {
    pub fn message_type(&self) -> MessageType {
        match self {
            Message::Register { .. } => MessageType::Register,
            Message::ModelBroadcast { .. } => MessageType::ModelBroadcast,
            Message::Update(_) => MessageType::Update,
            Message::Done { .. } => MessageType::Done,
            Message::Error { .. } => MessageType::Error,
        }
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Message::Register {
                client_id,
                sample_count,
                layout,
            } => {
                put_str(&mut out, client_id);
                out.extend_from_slice(&sample_count.to_le_bytes());
                out.extend_from_slice(&(layout.len() as u32).to_le_bytes());
                for c in layout {
                    put_str(&mut out, c);
                }
            }
            Message::ModelBroadcast { round, params } => {
                out.extend_from_slice(&round.to_le_bytes());
                encode_params_into(params, &mut out);
            }
            Message::Update(u) => {
                put_str(&mut out, &u.client_id);
                out.extend_from_slice(&u.round.to_le_bytes());
                out.extend_from_slice(&u.sample_count.to_le_bytes());
                out.extend_from_slice(&u.train_loss.to_le_bytes());
                encode_params_into(&u.params, &mut out);
            }
            Message::Done { rounds, params } => {
                out.extend_from_slice(&rounds.to_le_bytes());
                encode_params_into(params, &mut out);
            }
            Message::Error { message } => put_str(&mut out, message),
        }
        out
    }

    pub fn decode_payload(kind: MessageType, payload: &[u8]) -> Result<Self> {
        let mut r = Reader::new(payload);
        let msg = match kind {
            MessageType::Register => {
                let client_id = r.string()?;
                let sample_count = r.u64()?;
                let n = r.u32()? as usize;
                if n > r.remaining() / 4 {
                    return Err(Error::Codec(format!(
                        "layout of {n} columns exceeds payload"
                    )));
                }
                let layout = (0..n).map(|_| r.string()).collect::<Result<_>>()?;
                Message::Register {
                    client_id,
                    sample_count,
                    layout,
                }
            }
            MessageType::ModelBroadcast => Message::ModelBroadcast {
                round: r.u32()?,
                params: r.params()?,
            },
            MessageType::Update => Message::Update(RoundUpdate {
                client_id: r.string()?,
                round: r.u32()?,
                sample_count: r.u64()?,
                train_loss: r.f64()?,
                params: r.params()?,
            }),
            MessageType::Done => Message::Done {
                rounds: r.u32()?,
                params: r.params()?,
            },
            MessageType::Error => Message::Error {
                message: r.string()?,
            },
        };
        if r.remaining() != 0 {
            return Err(Error::Codec(format!(
                "{} trailing bytes in {kind:?} payload",
                r.rest().len()
            )));
        }
        Ok(msg)
    }

    /// Full frame: length prefix, type byte, payload.
    pub fn to_frame(&self) -> Vec<u8> {
        let payload = self.encode_payload();
        let mut frame = Vec::with_capacity(5 + payload.len());
        frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        frame.push(self.message_type() as u8);
        frame.extend_from_slice(&payload);
        frame
    }
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<()> {
    w.write_all(&msg.to_frame())?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. A clean EOF before the first header byte maps to
/// `Ok(None)`.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>> {
    let mut header = [0u8; 5];
    let mut got = 0;
    while got < header.len() {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(Error::Protocol(
                    "connection closed inside a frame header".into(),
                ))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(header[..4].try_into().unwrap());
    if len > MAX_FRAME {
        return Err(Error::Protocol(format!(
            "frame of {len} bytes exceeds limit"
        )));
    }
    let kind = MessageType::from_u8(header[4])?;
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)
        .map_err(|e| Error::Protocol(format!("connection lost inside a {kind:?} frame: {e}")))?;
    Message::decode_payload(kind, &payload).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Activation};

    fn params() -> ModelParams {
        init_params(&[3, 4, 1], &[Activation::Relu, Activation::Sigmoid], 5).unwrap()
    }

    #[test]
    fn frames_round_trip() {
        let msgs = vec![
            Message::Register {
                client_id: "small".into(),
                sample_count: 700,
                layout: vec!["a".into(), "b#present".into()],
            },
            Message::ModelBroadcast {
                round: 3,
                params: params(),
            },
            Message::Update(RoundUpdate {
                client_id: "large".into(),
                round: 3,
                params: params(),
                sample_count: 5600,
                train_loss: 0.25,
            }),
            Message::Done {
                rounds: 4,
                params: params(),
            },
            Message::Error {
                message: "nope".into(),
            },
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_message(&mut buf, m).unwrap();
        }
        let mut cur = std::io::Cursor::new(buf);
        for m in &msgs {
            assert_eq!(read_message(&mut cur).unwrap().as_ref(), Some(m));
        }
        assert_eq!(read_message(&mut cur).unwrap(), None);
    }

    #[test]
    fn length_prefix_counts_payload() {
        let m = Message::Error {
            message: "abc".into(),
        };
        let f = m.to_frame();
        assert_eq!(&f[..4], &7u32.to_le_bytes());
        assert_eq!(f[4], MessageType::Error as u8);
        assert_eq!(f.len(), 5 + 7);
    }

    #[test]
    fn truncated_frame_is_protocol_error() {
        let f = Message::ModelBroadcast {
            round: 0,
            params: params(),
        }
        .to_frame();
        let mut cur = std::io::Cursor::new(&f[..f.len() - 3]);
        assert!(matches!(read_message(&mut cur), Err(Error::Protocol(_))));
        let mut cur = std::io::Cursor::new(&f[..2]);
        assert!(matches!(read_message(&mut cur), Err(Error::Protocol(_))));
    }

    #[test]
    fn unknown_type_rejected() {
        let mut f = Message::Error {
            message: String::new(),
        }
        .to_frame();
        f[4] = 42;
        assert!(read_message(&mut std::io::Cursor::new(f)).is_err());
    }
}

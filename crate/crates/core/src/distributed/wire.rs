//! Wire frames exchanged between tasks.
//!
//! ```text
//! "TFLW"            4 bytes magic
//! version           u32 LE (= 1)
//! type              u8 (1 gradient, 2 parameter broadcast, 3 control)
//! payload length    u64 LE
//! payload
//! crc32             u32 LE over every preceding byte
//! ```

use crate::codec::{append_crc, verify_crc, ByteReader, ByteWriter};
use crate::error::{DistributedErrorCode, Error, Result};
use crate::numerics::NamedTensors;
use crate::run_config::TaskRole;

pub const WIRE_MAGIC: &[u8; 4] = b"TFLW";
pub const WIRE_VERSION: u32 = 1;
/// Bytes before the payload.
pub const FRAME_HEADER_LEN: usize = 17;
/// Upper bound on accepted payloads.
pub const MAX_PAYLOAD_LEN: u64 = 1 << 32;

const TYPE_GRADIENT: u8 = 1;
const TYPE_PARAMS: u8 = 2;
const TYPE_CONTROL: u8 = 3;

/// Gradients a worker computed against the parameters of `basis_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMessage {
    pub worker_id: u32,
    pub basis_step: u64,
    /// Training loss of the batch, forwarded to the master's hooks.
    pub loss: f64,
    pub gradients: NamedTensors,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    /// First message on every connection.
    Hello { role: TaskRole, id: u32 },
    /// Worker asks for the current parameters.
    Pull,
    /// Stop training and leave.
    Stop,
    /// Master lets the server continue after an update.
    Continue,
    /// Sync-mode rejection: re-pull, the server is at `current_step`.
    Stale { current_step: u64 },
    /// Server tells the master an update was applied.
    Applied { global_step: u64, loss: f64 },
    /// Worker has used up its step budget.
    Done,
    Error { code: DistributedErrorCode, message: String },
    /// Server has shut down cleanly.
    Finished,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Gradient(GradientMessage),
    Params { global_step: u64, params: NamedTensors },
    Control(Control),
}

fn role_byte(role: TaskRole) -> u8 {
    match role {
        TaskRole::Master => 0,
        TaskRole::Worker => 1,
        TaskRole::Ps => 2,
    }
}

fn code_byte(code: DistributedErrorCode) -> u8 {
    match code {
        DistributedErrorCode::Transport => 0,
        DistributedErrorCode::SyncTimeout => 1,
        DistributedErrorCode::Worker => 2,
        DistributedErrorCode::Protocol => 3,
    }
}

fn encode_control(w: &mut ByteWriter, c: &Control) -> Result<()> {
    match c {
        Control::Hello { role, id } => {
            w.u8(0);
            w.u8(role_byte(*role));
            w.u32(*id);
        }
        Control::Pull => w.u8(1),
        Control::Stop => w.u8(2),
        Control::Continue => w.u8(3),
        Control::Stale { current_step } => {
            w.u8(4);
            w.u64(*current_step);
        }
        Control::Applied { global_step, loss } => {
            w.u8(5);
            w.u64(*global_step);
            w.f64(*loss);
        }
        Control::Done => w.u8(6),
        Control::Error { code, message } => {
            w.u8(7);
            w.u8(code_byte(*code));
            let mut end = message.len().min(4096);
            while !message.is_char_boundary(end) {
                end -= 1;
            }
            w.str16(&message[..end])?;
        }
        Control::Finished => w.u8(8),
    }
    Ok(())
}

fn decode_control(r: &mut ByteReader<'_>) -> Result<Control> {
    let at = r.offset();
    Ok(match r.u8("control tag")? {
        0 => {
            let role = match r.u8("role")? {
                0 => TaskRole::Master,
                1 => TaskRole::Worker,
                2 => TaskRole::Ps,
                b => return Err(r.err(format!("unknown role {b}"))),
            };
            Control::Hello {
                role,
                id: r.u32("task id")?,
            }
        }
        1 => Control::Pull,
        2 => Control::Stop,
        3 => Control::Continue,
        4 => Control::Stale {
            current_step: r.u64("current step")?,
        },
        5 => Control::Applied {
            global_step: r.u64("global step")?,
            loss: r.f64("loss")?,
        },
        6 => Control::Done,
        7 => {
            let code = match r.u8("error code")? {
                0 => DistributedErrorCode::Transport,
                1 => DistributedErrorCode::SyncTimeout,
                2 => DistributedErrorCode::Worker,
                3 => DistributedErrorCode::Protocol,
                b => return Err(r.err(format!("unknown error code {b}"))),
            };
            Control::Error {
                code,
                message: r.str16("error message")?,
            }
        }
        8 => Control::Finished,
        t => {
            return Err(Error::Format {
                offset: at,
                reason: format!("unknown control tag {t}"),
            })
        }
    })
}

pub fn encode_message(msg: &WireMessage) -> Result<Vec<u8>> {
    let mut payload = ByteWriter::new();
    let kind = match msg {
        WireMessage::Gradient(g) => {
            payload.u32(g.worker_id);
            payload.u64(g.basis_step);
            payload.f64(g.loss);
            payload.tensors(&g.gradients)?;
            TYPE_GRADIENT
        }
        WireMessage::Params { global_step, params } => {
            payload.u64(*global_step);
            payload.tensors(params)?;
            TYPE_PARAMS
        }
        WireMessage::Control(c) => {
            encode_control(&mut payload, c)?;
            TYPE_CONTROL
        }
    };
    let mut w = ByteWriter::new();
    w.bytes(WIRE_MAGIC);
    w.u32(WIRE_VERSION);
    w.u8(kind);
    w.u64(payload.len() as u64);
    w.bytes(payload.as_slice());
    append_crc(&mut w);
    Ok(w.into_inner())
}

/// Validated frame header: message type and payload length.
pub fn decode_header(bytes: &[u8]) -> Result<(u8, u64)> {
    let mut r = ByteReader::new(bytes, 0);
    if r.take(4, "magic")? != WIRE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, not a wire frame".into(),
        });
    }
    let version = r.u32("version")?;
    if version != WIRE_VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported wire version {version}"),
        });
    }
    let kind = r.u8("message type")?;
    if !(TYPE_GRADIENT..=TYPE_CONTROL).contains(&kind) {
        return Err(Error::Format {
            offset: 8,
            reason: format!("unknown message type {kind}"),
        });
    }
    let len = r.u64("payload length")?;
    if len > MAX_PAYLOAD_LEN {
        return Err(Error::Format {
            offset: 9,
            reason: format!("payload length {len} exceeds {MAX_PAYLOAD_LEN}"),
        });
    }
    Ok((kind, len))
}

pub fn decode_message(bytes: &[u8]) -> Result<WireMessage> {
    let (kind, len) = decode_header(bytes)?;
    let end = FRAME_HEADER_LEN as u64 + len;
    if (bytes.len() as u64) < end + 4 {
        return Err(Error::Format {
            offset: bytes.len(),
            reason: format!("truncated frame: {} of {} bytes", bytes.len(), end + 4),
        });
    }
    if bytes.len() as u64 > end + 4 {
        return Err(Error::Format {
            offset: (end + 4) as usize,
            reason: "trailing bytes after frame".into(),
        });
    }
    verify_crc(bytes)?;
    let mut r = ByteReader::new(&bytes[FRAME_HEADER_LEN..end as usize], FRAME_HEADER_LEN);
    let msg = match kind {
        TYPE_GRADIENT => WireMessage::Gradient(GradientMessage {
            worker_id: r.u32("worker id")?,
            basis_step: r.u64("basis step")?,
            loss: r.f64("loss")?,
            gradients: r.tensors()?,
        }),
        TYPE_PARAMS => WireMessage::Params {
            global_step: r.u64("global step")?,
            params: r.tensors()?,
        },
        _ => WireMessage::Control(decode_control(&mut r)?),
    };
    r.finish("payload")?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn grad_msg() -> WireMessage {
        WireMessage::Gradient(GradientMessage {
            worker_id: 1,
            basis_step: 7,
            loss: 0.25,
            gradients: NamedTensors::from([(
                "w".to_string(),
                Tensor::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap(),
            )]),
        })
    }

    #[test]
    fn round_trips() {
        let msgs = [
            grad_msg(),
            WireMessage::Params {
                global_step: 3,
                params: NamedTensors::new(),
            },
            WireMessage::Control(Control::Hello {
                role: TaskRole::Worker,
                id: 2,
            }),
            WireMessage::Control(Control::Applied {
                global_step: 9,
                loss: 1.5,
            }),
            WireMessage::Control(Control::Error {
                code: DistributedErrorCode::SyncTimeout,
                message: "late".into(),
            }),
        ];
        for m in msgs {
            assert_eq!(decode_message(&encode_message(&m).unwrap()).unwrap(), m);
        }
    }

    #[test]
    fn empty_gradient_map_is_minimal_frame() {
        let m = WireMessage::Gradient(GradientMessage {
            worker_id: 0,
            basis_step: 0,
            loss: 0.0,
            gradients: NamedTensors::new(),
        });
        let bytes = encode_message(&m).unwrap();
        assert_eq!(bytes.len(), FRAME_HEADER_LEN + 4 + 8 + 8 + 4 + 4);
        assert_eq!(&bytes[..4], WIRE_MAGIC);
        assert_eq!(bytes[8], 1);
        assert_eq!(decode_message(&bytes).unwrap(), m);
    }

    #[test]
    fn flipped_payload_byte_is_crc_error() {
        let mut bytes = encode_message(&grad_msg()).unwrap();
        bytes[FRAME_HEADER_LEN + 20] ^= 0x01;
        assert!(matches!(decode_message(&bytes), Err(Error::Crc { .. })));
    }

    #[test]
    fn truncation_and_unknown_type() {
        let bytes = encode_message(&grad_msg()).unwrap();
        assert!(matches!(decode_message(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(decode_message(&bad), Err(Error::Format { offset: 8, .. })));
    }
}

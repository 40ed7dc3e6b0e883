//! Master/worker wire format.
//!
//! Every message travels in one frame:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `54 45 4D 50` (`"TEMP"`)          |
//! | 4      | 1    | version, `0x01`                         |
//! | 5      | 1    | message type                            |
//! | 6      | 8    | payload length, `u64` little-endian     |
//! | 14     | n    | payload                                 |
//!
//! Payloads (all integers and floats little-endian):
//!
//! | type   | message      | payload                                                        |
//! |--------|--------------|----------------------------------------------------------------|
//! | `0x01` | `HELLO`      | `worker_id: u32`                                               |
//! | `0x02` | `CONFIG`     | `n_layers: u32, mode: u8`                                      |
//! | `0x10` | `STORE_PAIR` | `layer_id: u32, shard_id: u32, a: matrix, b: matrix`           |
//! | `0x11` | `MULT_FWD`   | `layer_id: u32, shard_id: u32`                                 |
//! | `0x12` | `MULT_BWD`   | `layer_id: u32, shard_id: u32, d: matrix`                      |
//! | `0x20` | `RESULT`     | `request_tag: u64, count: u8, count x matrix`                  |
//! | `0x7F` | `ERROR`      | `code: u16, text: UTF-8 (rest of payload)`                     |
//!
//! A matrix is `rows: u32, cols: u32` followed by `rows * cols` `f64` values in
//! row-major order.
//!
//! A worker answers each `STORE_PAIR`, `MULT_FWD` and `MULT_BWD` in arrival
//! order, with either a `RESULT` or an `ERROR`. The `request_tag` of a
//! `RESULT` is the 0-based index of the request it answers among those three
//! request types on the connection. A `STORE_PAIR` is acknowledged by a
//! `RESULT` carrying no matrices.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::tensor::Matrix;

pub const MAGIC: [u8; 4] = *b"TEMP";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 14;

pub const TYPE_HELLO: u8 = 0x01;
pub const TYPE_CONFIG: u8 = 0x02;
pub const TYPE_STORE_PAIR: u8 = 0x10;
pub const TYPE_MULT_FWD: u8 = 0x11;
pub const TYPE_MULT_BWD: u8 = 0x12;
pub const TYPE_RESULT: u8 = 0x20;
pub const TYPE_ERROR: u8 = 0x7F;

/// Upper bound on accepted payloads, to refuse absurd length prefixes.
pub const MAX_PAYLOAD: u64 = 1 << 32;

/// `ERROR` codes sent by workers.
pub mod error_code {
    pub const SHAPE_MISMATCH: u16 = 1;
    pub const CACHE_MISS: u16 = 2;
    pub const UNEXPECTED_MESSAGE: u16 = 3;
    pub const MALFORMED: u16 = 4;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mode {
    Inference,
    Training,
    Other(u8),
}

impl Mode {
    pub fn to_byte(&self) -> u8 {
        match self {
            Mode::Inference => 0,
            Mode::Training => 1,
            Mode::Other(b) => *b,
        }
    }

    pub fn from_byte(b: u8) -> Self {
        match b {
            0 => Mode::Inference,
            1 => Mode::Training,
            other => Mode::Other(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        worker_id: u32,
    },
    Config {
        n_layers: u32,
        mode: Mode,
    },
    StorePair {
        layer_id: u32,
        shard_id: u32,
        a_enc: Matrix,
        b_enc: Matrix,
    },
    MultFwd {
        layer_id: u32,
        shard_id: u32,
    },
    MultBwd {
        layer_id: u32,
        shard_id: u32,
        d_enc: Matrix,
    },
    Result {
        request_tag: u64,
        matrices: Vec<Matrix>,
    },
    Error {
        code: u16,
        text: String,
    },
}

impl Message {
    pub fn type_byte(&self) -> u8 {
        match self {
            Message::Hello { .. } => TYPE_HELLO,
            Message::Config { .. } => TYPE_CONFIG,
            Message::StorePair { .. } => TYPE_STORE_PAIR,
            Message::MultFwd { .. } => TYPE_MULT_FWD,
            Message::MultBwd { .. } => TYPE_MULT_BWD,
            Message::Result { .. } => TYPE_RESULT,
            Message::Error { .. } => TYPE_ERROR,
        }
    }

    /// Matrices carried by the message.
    pub fn matrices(&self) -> Vec<&Matrix> {
        match self {
            Message::StorePair { a_enc, b_enc, .. } => vec![a_enc, b_enc],
            Message::MultBwd { d_enc, .. } => vec![d_enc],
            Message::Result { matrices, .. } => matrices.iter().collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("truncated: needed {needed} bytes, had {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("payload length {0} exceeds limit")]
    Oversized(u64),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("error text is not valid UTF-8")]
    InvalidUtf8,
}

fn put_matrix(buf: &mut Vec<u8>, m: &Matrix) {
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn payload(msg: &Message) -> Vec<u8> {
    let mut buf = Vec::new();
    match msg {
        Message::Hello { worker_id } => buf.extend_from_slice(&worker_id.to_le_bytes()),
        Message::Config { n_layers, mode } => {
            buf.extend_from_slice(&n_layers.to_le_bytes());
            buf.push(mode.to_byte());
        }
        Message::StorePair {
            layer_id,
            shard_id,
            a_enc,
            b_enc,
        } => {
            buf.extend_from_slice(&layer_id.to_le_bytes());
            buf.extend_from_slice(&shard_id.to_le_bytes());
            put_matrix(&mut buf, a_enc);
            put_matrix(&mut buf, b_enc);
        }
        Message::MultFwd { layer_id, shard_id } => {
            buf.extend_from_slice(&layer_id.to_le_bytes());
            buf.extend_from_slice(&shard_id.to_le_bytes());
        }
        Message::MultBwd {
            layer_id,
            shard_id,
            d_enc,
        } => {
            buf.extend_from_slice(&layer_id.to_le_bytes());
            buf.extend_from_slice(&shard_id.to_le_bytes());
            put_matrix(&mut buf, d_enc);
        }
        Message::Result {
            request_tag,
            matrices,
        } => {
            buf.extend_from_slice(&request_tag.to_le_bytes());
            buf.push(matrices.len() as u8);
            for m in matrices {
                put_matrix(&mut buf, m);
            }
        }
        Message::Error { code, text } => {
            buf.extend_from_slice(&code.to_le_bytes());
            buf.extend_from_slice(text.as_bytes());
        }
    }
    buf
}

/// Encodes one frame. Panics if a `RESULT` carries more than 255 matrices.
pub fn encode(msg: &Message) -> Vec<u8> {
    if let Message::Result { matrices, .. } = msg {
        assert!(matrices.len() <= u8::MAX as usize, "too many matrices in RESULT");
    }
    let body = payload(msg);
    let mut frame = Vec::with_capacity(HEADER_LEN + body.len());
    frame.extend_from_slice(&MAGIC);
    frame.push(VERSION);
    frame.push(msg.type_byte());
    frame.extend_from_slice(&(body.len() as u64).to_le_bytes());
    frame.extend_from_slice(&body);
    frame
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(DecodeError::Truncated {
                needed: n as u64,
                available: available as u64,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self) -> Result<Matrix, DecodeError> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let count = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| DecodeError::InvalidMatrix(format!("{rows}x{cols} overflows")))?;
        let bytes = self.take(count)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::new(rows, cols, data).map_err(|e| DecodeError::InvalidMatrix(e.to_string()))
    }

    fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }
}

/// Parses the 14-byte header. Returns the message type and payload length.
pub fn decode_header(header: &[u8; HEADER_LEN]) -> Result<(u8, u64), DecodeError> {
    let magic: [u8; 4] = header[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    if header[4] != VERSION {
        return Err(DecodeError::BadVersion(header[4]));
    }
    let msg_type = header[5];
    if !matches!(
        msg_type,
        TYPE_HELLO
            | TYPE_CONFIG
            | TYPE_STORE_PAIR
            | TYPE_MULT_FWD
            | TYPE_MULT_BWD
            | TYPE_RESULT
            | TYPE_ERROR
    ) {
        return Err(DecodeError::UnknownType(msg_type));
    }
    let len = u64::from_le_bytes(header[6..14].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(DecodeError::Oversized(len));
    }
    Ok((msg_type, len))
}

/// Decodes a payload of the given type. The payload must be consumed exactly.
pub fn decode_payload(msg_type: u8, body: &[u8]) -> Result<Message, DecodeError> {
    let mut c = Cursor { buf: body, pos: 0 };
    let msg = match msg_type {
        TYPE_HELLO => Message::Hello { worker_id: c.u32()? },
        TYPE_CONFIG => Message::Config {
            n_layers: c.u32()?,
            mode: Mode::from_byte(c.u8()?),
        },
        TYPE_STORE_PAIR => Message::StorePair {
            layer_id: c.u32()?,
            shard_id: c.u32()?,
            a_enc: c.matrix()?,
            b_enc: c.matrix()?,
        },
        TYPE_MULT_FWD => Message::MultFwd {
            layer_id: c.u32()?,
            shard_id: c.u32()?,
        },
        TYPE_MULT_BWD => Message::MultBwd {
            layer_id: c.u32()?,
            shard_id: c.u32()?,
            d_enc: c.matrix()?,
        },
        TYPE_RESULT => {
            let request_tag = c.u64()?;
            let count = c.u8()? as usize;
            let matrices = (0..count).map(|_| c.matrix()).collect::<Result<_, _>>()?;
            Message::Result {
                request_tag,
                matrices,
            }
        }
        TYPE_ERROR => Message::Error {
            code: c.u16()?,
            text: String::from_utf8(c.rest().to_vec()).map_err(|_| DecodeError::InvalidUtf8)?,
        },
        other => return Err(DecodeError::UnknownType(other)),
    };
    if c.pos != body.len() {
        return Err(DecodeError::TrailingBytes(body.len() - c.pos));
    }
    Ok(msg)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(DecodeError::TrailingBytes(bytes.len() - used));
    }
    Ok(msg)
}

/// Decodes the first frame of `bytes`, returning it and the bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Message, usize), DecodeError> {
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::Truncated {
            needed: HEADER_LEN as u64,
            available: bytes.len() as u64,
        });
    }
    let (msg_type, len) = decode_header(bytes[..HEADER_LEN].try_into().unwrap())?;
    let available = (bytes.len() - HEADER_LEN) as u64;
    if len > available {
        return Err(DecodeError::Truncated {
            needed: len,
            available,
        });
    }
    let end = HEADER_LEN + len as usize;
    Ok((decode_payload(msg_type, &bytes[HEADER_LEN..end])?, end))
}

/// Errors reading a frame from a stream.
#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream before any
/// header byte.
pub fn read_message<R: Read>(reader: &mut R) -> Result<Option<Message>, ReadError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match reader.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => {
                return Err(DecodeError::Truncated {
                    needed: HEADER_LEN as u64,
                    available: filled as u64,
                }
                .into())
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (msg_type, len) = decode_header(&header)?;
    let mut body = vec![0u8; len as usize];
    reader.read_exact(&mut body).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ReadError::Decode(DecodeError::Truncated {
                needed: len,
                available: 0,
            })
        } else {
            ReadError::Io(e)
        }
    })?;
    Ok(Some(decode_payload(msg_type, &body)?))
}

pub fn write_message<W: Write>(writer: &mut W, msg: &Message) -> io::Result<()> {
    writer.write_all(&encode(msg))?;
    writer.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn hello_layout() {
        let frame = encode(&Message::Hello { worker_id: 7 });
        assert_eq!(frame.len(), 18);
        assert_eq!(&frame[..4], b"TEMP");
        assert_eq!(frame[4], 0x01);
        assert_eq!(frame[5], 0x01);
        assert_eq!(&frame[6..14], &4u64.to_le_bytes());
        assert_eq!(&frame[14..], &7u32.to_le_bytes());
    }

    #[test]
    fn store_pair_roundtrip() {
        let mut rng = Rng::new(1);
        let msg = Message::StorePair {
            layer_id: 3,
            shard_id: 1,
            a_enc: Matrix::random_normal(3, 2, &mut rng),
            b_enc: Matrix::random_normal(3, 2, &mut rng),
        };
        assert_eq!(decode(&encode(&msg)).unwrap(), msg);
    }

    #[test]
    fn matrix_layout_is_row_major_le() {
        let msg = Message::MultBwd {
            layer_id: 0,
            shard_id: 0,
            d_enc: Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]),
        };
        let frame = encode(&msg);
        let body = &frame[HEADER_LEN + 8..];
        assert_eq!(&body[..4], &2u32.to_le_bytes());
        assert_eq!(&body[4..8], &2u32.to_le_bytes());
        assert_eq!(&body[8..16], &1.0f64.to_le_bytes());
        assert_eq!(&body[16..24], &2.0f64.to_le_bytes());
        assert_eq!(&body[32..40], &4.0f64.to_le_bytes());
    }

    #[test]
    fn malformed_frames() {
        let good = encode(&Message::Hello { worker_id: 7 });

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert_eq!(decode(&bad), Err(DecodeError::BadMagic(*b"XXXX")));

        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(decode(&bad), Err(DecodeError::BadVersion(2)));

        let mut bad = good.clone();
        bad[5] = 0x55;
        assert_eq!(decode(&bad), Err(DecodeError::UnknownType(0x55)));

        assert!(matches!(
            decode(&good[..good.len() - 1]),
            Err(DecodeError::Truncated { .. })
        ));
        assert!(matches!(decode(&good[..5]), Err(DecodeError::Truncated { .. })));

        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(decode(&bad), Err(DecodeError::TrailingBytes(1)));

        // Payload longer than its message needs.
        let mut bad = good.clone();
        bad[6..14].copy_from_slice(&5u64.to_le_bytes());
        bad.push(0);
        assert_eq!(decode(&bad), Err(DecodeError::TrailingBytes(1)));

        let mut bad = encode(&Message::Error {
            code: 1,
            text: "ok".into(),
        });
        let n = bad.len();
        bad[n - 1] = 0xFF;
        assert_eq!(decode(&bad), Err(DecodeError::InvalidUtf8));
    }

    #[test]
    fn non_finite_matrix_rejected() {
        let mut frame = encode(&Message::MultBwd {
            layer_id: 0,
            shard_id: 0,
            d_enc: Matrix::from_rows(&[[1.0]]),
        });
        let n = frame.len();
        frame[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode(&frame), Err(DecodeError::InvalidMatrix(_))));
    }

    #[test]
    fn back_to_back_frames_on_a_stream() {
        let a = Message::MultFwd {
            layer_id: 1,
            shard_id: 2,
        };
        let b = Message::Error {
            code: 9,
            text: "nope".into(),
        };
        let mut stream = encode(&a);
        stream.extend(encode(&b));
        let mut reader = &stream[..];
        assert_eq!(read_message(&mut reader).unwrap(), Some(a));
        assert_eq!(read_message(&mut reader).unwrap(), Some(b));
        assert_eq!(read_message(&mut reader).unwrap(), None);
    }
}

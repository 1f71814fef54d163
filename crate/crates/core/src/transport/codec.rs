//! Framed binary encoding of [`Message`].
//!
//! ```text
//! +------+------+---------+-----+--------------+-----------+
//! | 0x4D | 0x57 | version | tag | body_len u32 | body ...  |
//! +------+------+---------+-----+--------------+-----------+
//! ```
//!
//! All integers are little-endian. Byte strings carry a `u32` length prefix,
//! lists a `u32` count prefix, optional values a `u8` presence flag and
//! floats are IEEE-754 binary64.

use std::io::{self, Read};

use thiserror::Error;

pub const MAGIC: [u8; 2] = [0x4D, 0x57];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 8;
/// Largest body accepted by [`encode`].
pub const MAX_BODY_LEN: usize = u32::MAX as usize - HEADER_LEN;

/// Messages exchanged between master and workers.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        proto_version: u8,
    },
    /// Registration acknowledgement plus the per-epoch worker init blob.
    InitData {
        worker_id: u64,
        heartbeat_s: f64,
        blob: Vec<u8>,
    },
    AssignTask {
        task_id: u64,
        parent: Option<u64>,
        payload: Vec<u8>,
    },
    TaskDone {
        task_id: u64,
        result: Vec<u8>,
        children: Vec<Vec<u8>>,
    },
    Heartbeat {
        worker_id: u64,
        time_s: f64,
    },
    Suspend,
    Resume,
    Shutdown,
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Hello { .. } => 1,
            Message::InitData { .. } => 2,
            Message::AssignTask { .. } => 3,
            Message::TaskDone { .. } => 4,
            Message::Heartbeat { .. } => 5,
            Message::Suspend => 6,
            Message::Resume => 7,
            Message::Shutdown => 8,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("message body of {0} bytes exceeds the frame limit")]
    BodyTooLong(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("truncated frame: needed {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("invalid presence flag {0}")]
    InvalidFlag(u8),
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

struct BodyWriter(Vec<u8>);

impl BodyWriter {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, v: &[u8]) -> Result<(), EncodeError> {
        let len = u32::try_from(v.len()).map_err(|_| EncodeError::BodyTooLong(v.len()))?;
        self.u32(len);
        self.0.extend_from_slice(v);
        Ok(())
    }
}

/// Encodes one message as a complete frame.
pub fn encode(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    let mut w = BodyWriter(Vec::new());
    match msg {
        Message::Hello { proto_version } => w.u8(*proto_version),
        Message::InitData {
            worker_id,
            heartbeat_s,
            blob,
        } => {
            w.u64(*worker_id);
            w.f64(*heartbeat_s);
            w.bytes(blob)?;
        }
        Message::AssignTask {
            task_id,
            parent,
            payload,
        } => {
            w.u64(*task_id);
            match parent {
                Some(p) => {
                    w.u8(1);
                    w.u64(*p);
                }
                None => w.u8(0),
            }
            w.bytes(payload)?;
        }
        Message::TaskDone {
            task_id,
            result,
            children,
        } => {
            w.u64(*task_id);
            w.bytes(result)?;
            let count =
                u32::try_from(children.len()).map_err(|_| EncodeError::BodyTooLong(usize::MAX))?;
            w.u32(count);
            for child in children {
                w.bytes(child)?;
            }
        }
        Message::Heartbeat { worker_id, time_s } => {
            w.u64(*worker_id);
            w.f64(*time_s);
        }
        Message::Suspend | Message::Resume | Message::Shutdown => {}
    }
    frame(msg.tag(), w.0)
}

fn frame(tag: u8, body: Vec<u8>) -> Result<Vec<u8>, EncodeError> {
    check_body_len(body.len())?;
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(tag);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn check_body_len(len: usize) -> Result<(), EncodeError> {
    if len > MAX_BODY_LEN {
        Err(EncodeError::BodyTooLong(len))
    } else {
        Ok(())
    }
}

struct BodyReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> BodyReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let have = self.buf.len() - self.pos;
        if n > have {
            return Err(DecodeError::Truncated { needed: n, have });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let len = self.u32()? as usize;
        Ok(self.take(len)?.to_vec())
    }
}

/// Parses and validates a frame header, returning `(tag, body_len)`.
pub fn decode_header(header: &[u8; HEADER_LEN]) -> Result<(u8, usize), DecodeError> {
    if header[..2] != MAGIC {
        return Err(DecodeError::BadMagic([header[0], header[1]]));
    }
    if header[2] != VERSION {
        return Err(DecodeError::BadVersion(header[2]));
    }
    let tag = header[3];
    if !(1..=8).contains(&tag) {
        return Err(DecodeError::UnknownTag(tag));
    }
    let len = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    Ok((tag, len))
}

/// Decodes exactly one complete frame.
pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(DecodeError::TrailingBytes(bytes.len() - used));
    }
    Ok(msg)
}

/// Decodes the frame at the start of `bytes`, returning the message and
/// the number of bytes it occupied.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Message, usize), DecodeError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 2 && bytes[..2] != MAGIC {
            return Err(DecodeError::BadMagic([bytes[0], bytes[1]]));
        }
        return Err(DecodeError::Truncated {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let header: [u8; HEADER_LEN] = bytes[..HEADER_LEN].try_into().unwrap();
    let (tag, len) = decode_header(&header)?;
    let have = bytes.len() - HEADER_LEN;
    if len > have {
        return Err(DecodeError::Truncated { needed: len, have });
    }
    let msg = decode_body(tag, &bytes[HEADER_LEN..HEADER_LEN + len])?;
    Ok((msg, HEADER_LEN + len))
}

fn decode_body(tag: u8, body: &[u8]) -> Result<Message, DecodeError> {
    let mut r = BodyReader { buf: body, pos: 0 };
    let msg = match tag {
        1 => Message::Hello {
            proto_version: r.u8()?,
        },
        2 => Message::InitData {
            worker_id: r.u64()?,
            heartbeat_s: r.f64()?,
            blob: r.bytes()?,
        },
        3 => {
            let task_id = r.u64()?;
            let parent = match r.u8()? {
                0 => None,
                1 => Some(r.u64()?),
                other => return Err(DecodeError::InvalidFlag(other)),
            };
            Message::AssignTask {
                task_id,
                parent,
                payload: r.bytes()?,
            }
        }
        4 => {
            let task_id = r.u64()?;
            let result = r.bytes()?;
            let count = r.u32()? as usize;
            // each child needs at least its 4-byte length prefix
            let have = body.len() - r.pos;
            if count.saturating_mul(4) > have {
                return Err(DecodeError::Truncated {
                    needed: count * 4,
                    have,
                });
            }
            let children = (0..count).map(|_| r.bytes()).collect::<Result<_, _>>()?;
            Message::TaskDone {
                task_id,
                result,
                children,
            }
        }
        5 => Message::Heartbeat {
            worker_id: r.u64()?,
            time_s: r.f64()?,
        },
        6 => Message::Suspend,
        7 => Message::Resume,
        8 => Message::Shutdown,
        other => return Err(DecodeError::UnknownTag(other)),
    };
    if r.pos != body.len() {
        return Err(DecodeError::TrailingBytes(body.len() - r.pos));
    }
    Ok(msg)
}

/// Reads one frame from a blocking stream.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Message, FrameError> {
    let mut header = [0u8; HEADER_LEN];
    reader.read_exact(&mut header)?;
    let (tag, len) = decode_header(&header)?;
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body)?;
    Ok(decode_body(tag, &body)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shutdown_is_eight_bytes() {
        assert_eq!(
            encode(&Message::Shutdown).unwrap(),
            vec![0x4D, 0x57, 0x01, 0x08, 0x00, 0x00, 0x00, 0x00]
        );
    }

    #[test]
    fn heartbeat_layout() {
        let m = Message::Heartbeat {
            worker_id: 7,
            time_s: 1.5,
        };
        let f = encode(&m).unwrap();
        assert_eq!(f[3], 5);
        assert_eq!(&f[4..8], &16u32.to_le_bytes());
        assert_eq!(&f[8..16], &7u64.to_le_bytes());
        assert_eq!(&f[16..24], &1.5f64.to_le_bytes());
        assert_eq!(decode(&f).unwrap(), m);
    }

    #[test]
    fn assign_body_len_arithmetic() {
        let bare = encode(&Message::AssignTask {
            task_id: 3,
            parent: None,
            payload: vec![],
        })
        .unwrap();
        assert_eq!(&bare[4..8], &(8u32 + 1 + 4).to_le_bytes());
        let with_parent = encode(&Message::AssignTask {
            task_id: 3,
            parent: Some(1),
            payload: vec![],
        })
        .unwrap();
        assert_eq!(&with_parent[4..8], &(8u32 + 1 + 8 + 4).to_le_bytes());
    }

    #[test]
    fn corrupted_magic() {
        let mut f = encode(&Message::Resume).unwrap();
        f[0] ^= 0xFF;
        assert!(matches!(decode(&f), Err(DecodeError::BadMagic(_))));
    }

    #[test]
    fn distinct_errors() {
        let mut f = encode(&Message::Suspend).unwrap();
        f[2] = 2;
        assert_eq!(decode(&f), Err(DecodeError::BadVersion(2)));
        f[2] = 1;
        f[3] = 9;
        assert_eq!(decode(&f), Err(DecodeError::UnknownTag(9)));
        f[3] = 0;
        assert_eq!(decode(&f), Err(DecodeError::UnknownTag(0)));

        let mut f = encode(&Message::Heartbeat {
            worker_id: 1,
            time_s: 0.0,
        })
        .unwrap();
        f[4] = 40;
        assert!(matches!(decode(&f), Err(DecodeError::Truncated { .. })));

        let mut f = encode(&Message::Shutdown).unwrap();
        f.push(0);
        assert_eq!(decode(&f), Err(DecodeError::TrailingBytes(1)));

        // body longer than its fields
        let mut f = encode(&Message::Hello { proto_version: 1 }).unwrap();
        f[4] = 2;
        f.push(0);
        assert_eq!(decode(&f), Err(DecodeError::TrailingBytes(1)));
    }

    #[test]
    fn bad_presence_flag() {
        let mut f = encode(&Message::AssignTask {
            task_id: 0,
            parent: None,
            payload: vec![1],
        })
        .unwrap();
        f[16] = 2;
        assert_eq!(decode(&f), Err(DecodeError::InvalidFlag(2)));
    }

    #[test]
    fn oversized_body_rejected() {
        assert!(check_body_len(MAX_BODY_LEN).is_ok());
        assert_eq!(
            check_body_len(MAX_BODY_LEN + 1),
            Err(EncodeError::BodyTooLong(MAX_BODY_LEN + 1))
        );
    }

    #[test]
    fn stream_reader() {
        let msgs = [
            Message::Hello { proto_version: 1 },
            Message::TaskDone {
                task_id: 4,
                result: vec![1, 2],
                children: vec![vec![], vec![3]],
            },
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            buf.extend(encode(m).unwrap());
        }
        let mut cur = io::Cursor::new(buf);
        for m in &msgs {
            assert_eq!(&read_frame(&mut cur).unwrap(), m);
        }
        assert!(matches!(read_frame(&mut cur), Err(FrameError::Io(_))));
    }

    pub(crate) fn arb_message() -> impl Strategy<Value = Message> {
        let bytes = || proptest::collection::vec(any::<u8>(), 0..64);
        prop_oneof![
            any::<u8>().prop_map(|proto_version| Message::Hello { proto_version }),
            (any::<u64>(), any::<f64>(), bytes()).prop_map(|(worker_id, heartbeat_s, blob)| {
                Message::InitData {
                    worker_id,
                    heartbeat_s,
                    blob,
                }
            }),
            (any::<u64>(), any::<Option<u64>>(), bytes()).prop_map(|(task_id, parent, payload)| {
                Message::AssignTask {
                    task_id,
                    parent,
                    payload,
                }
            }),
            (
                any::<u64>(),
                bytes(),
                proptest::collection::vec(bytes(), 0..6)
            )
                .prop_map(|(task_id, result, children)| Message::TaskDone {
                    task_id,
                    result,
                    children,
                }),
            (any::<u64>(), any::<f64>())
                .prop_map(|(worker_id, time_s)| Message::Heartbeat { worker_id, time_s }),
            Just(Message::Suspend),
            Just(Message::Resume),
            Just(Message::Shutdown),
        ]
    }

    // NaN payloads break PartialEq, so compare frames instead of values.
    proptest! {
        #[test]
        fn concatenated_frames_self_delimit(msgs in proptest::collection::vec(arb_message(), 0..8)) {
            let mut buf = Vec::new();
            for m in &msgs {
                buf.extend(encode(m).unwrap());
            }
            let mut rest = &buf[..];
            let mut decoded = Vec::new();
            while !rest.is_empty() {
                let (m, used) = decode_prefix(rest).unwrap();
                decoded.push(encode(&m).unwrap());
                rest = &rest[used..];
            }
            let original: Vec<_> = msgs.iter().map(|m| encode(m).unwrap()).collect();
            prop_assert_eq!(decoded, original);
        }

        #[test]
        fn decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode(&bytes);
        }
    }
}

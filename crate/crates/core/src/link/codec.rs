//! Wire format: magic `4D 4C`, type byte, topic length byte, topic,
//! big-endian u16 payload length, payload.

use thiserror::Error;

pub const MAGIC: [u8; 2] = [0x4D, 0x4C];
pub const MAX_TOPIC_LEN: usize = u8::MAX as usize;
pub const MAX_PAYLOAD_LEN: usize = u16::MAX as usize;
pub const HEADER_LEN: usize = 4;
pub const MAX_FRAME_LEN: usize = HEADER_LEN + MAX_TOPIC_LEN + 2 + MAX_PAYLOAD_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Connect = 0x01,
    Connack = 0x02,
    Publish = 0x03,
    Subscribe = 0x08,
    Suback = 0x09,
    Ping = 0x0C,
    Pong = 0x0D,
    Disconnect = 0x0E,
}

impl FrameType {
    pub const ALL: [FrameType; 8] = [
        FrameType::Connect,
        FrameType::Connack,
        FrameType::Publish,
        FrameType::Subscribe,
        FrameType::Suback,
        FrameType::Ping,
        FrameType::Pong,
        FrameType::Disconnect,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == b)
    }

    /// Frame types that never carry a topic.
    pub fn topicless(self) -> bool {
        matches!(self, FrameType::Ping | FrameType::Pong | FrameType::Disconnect | FrameType::Connack)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameType,
    pub topic: String,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameType, topic: impl Into<String>, payload: impl Into<Vec<u8>>) -> Self {
        Self {
            kind,
            topic: topic.into(),
            payload: payload.into(),
        }
    }

    pub fn control(kind: FrameType) -> Self {
        Self::new(kind, "", Vec::new())
    }

    pub fn publish(topic: impl Into<String>, payload: impl Into<Vec<u8>>) -> Self {
        Self::new(FrameType::Publish, topic, payload)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.topic.len() > MAX_TOPIC_LEN || self.payload.len() > MAX_PAYLOAD_LEN {
            return Err(CodecError::FrameTooLarge);
        }
        if self.kind.topicless() && !self.topic.is_empty() {
            return Err(CodecError::UnexpectedTopic(self.kind as u8));
        }
        Ok(())
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.topic.len() + 2 + self.payload.len()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("need more data")]
    NeedMoreData,
    #[error("bad magic, skipped {skip} bytes")]
    BadMagic { skip: usize },
    #[error("unknown frame type 0x{0:02X}")]
    UnknownType(u8),
    #[error("frame too large")]
    FrameTooLarge,
    #[error("frame type 0x{0:02X} must not carry a topic")]
    UnexpectedTopic(u8),
    #[error("topic is not valid UTF-8")]
    InvalidTopic,
}

pub fn encode(frame: &Frame) -> Result<Vec<u8>, CodecError> {
    frame.validate()?;
    let mut out = Vec::with_capacity(frame.wire_len());
    out.extend_from_slice(&MAGIC);
    out.push(frame.kind as u8);
    out.push(frame.topic.len() as u8);
    out.extend_from_slice(frame.topic.as_bytes());
    out.extend_from_slice(&(frame.payload.len() as u16).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    Ok(out)
}

/// Offset of the next possible frame start after position 0, or the
/// buffer length when none is present. A lone trailing `4D` counts as a
/// possible start.
fn next_magic(buf: &[u8]) -> usize {
    (1..buf.len())
        .find(|&i| buf[i] == MAGIC[0] && buf.get(i + 1).is_none_or(|&b| b == MAGIC[1]))
        .unwrap_or(buf.len())
}

/// Decodes one frame from the front of `buf`, returning it with the number
/// of bytes consumed. On `BadMagic` the caller should drop `skip` bytes; on
/// `UnknownType`, `UnexpectedTopic` or `InvalidTopic` the frame header is
/// untrusted and [`Decoder`] skips past the magic.
pub fn decode(buf: &[u8]) -> Result<(Frame, usize), CodecError> {
    if buf.is_empty() {
        return Err(CodecError::NeedMoreData);
    }
    if buf[0] != MAGIC[0] || (buf.len() > 1 && buf[1] != MAGIC[1]) {
        return Err(CodecError::BadMagic { skip: next_magic(buf) });
    }
    if buf.len() < HEADER_LEN {
        return Err(CodecError::NeedMoreData);
    }
    let kind = FrameType::from_byte(buf[2]).ok_or(CodecError::UnknownType(buf[2]))?;
    let topic_len = buf[3] as usize;
    if kind.topicless() && topic_len != 0 {
        return Err(CodecError::UnexpectedTopic(buf[2]));
    }
    let len_at = HEADER_LEN + topic_len;
    if buf.len() < len_at + 2 {
        return Err(CodecError::NeedMoreData);
    }
    let payload_len = u16::from_be_bytes([buf[len_at], buf[len_at + 1]]) as usize;
    let end = len_at + 2 + payload_len;
    if buf.len() < end {
        return Err(CodecError::NeedMoreData);
    }
    let topic = std::str::from_utf8(&buf[HEADER_LEN..len_at])
        .map_err(|_| CodecError::InvalidTopic)?
        .to_owned();
    Ok((
        Frame {
            kind,
            topic,
            payload: buf[len_at + 2..end].to_vec(),
        },
        end,
    ))
}

/// Streaming decoder: feed bytes as they arrive and pull frames out.
#[derive(Debug, Default)]
pub struct Decoder {
    buf: Vec<u8>,
    skipped: u64,
}

impl Decoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Total bytes discarded while resynchronizing.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Next frame or error. `Err(NeedMoreData)` means the buffer holds no
    /// complete frame; every other error has already been skipped past, so
    /// calling again makes progress.
    pub fn next_frame(&mut self) -> Result<Frame, CodecError> {
        match decode(&self.buf) {
            Ok((frame, used)) => {
                self.buf.drain(..used);
                Ok(frame)
            }
            Err(CodecError::BadMagic { skip }) => {
                self.discard(skip);
                Err(CodecError::BadMagic { skip })
            }
            Err(CodecError::NeedMoreData) => Err(CodecError::NeedMoreData),
            Err(e) => {
                let skip = next_magic(&self.buf);
                self.discard(skip);
                Err(e)
            }
        }
    }

    fn discard(&mut self, n: usize) {
        self.buf.drain(..n);
        self.skipped += n as u64;
    }

    /// Drains every complete frame, dropping errors.
    pub fn frames(&mut self) -> Vec<Frame> {
        let mut out = Vec::new();
        loop {
            match self.next_frame() {
                Ok(f) => out.push(f),
                Err(CodecError::NeedMoreData) => return out,
                Err(e) => log::debug!("link decode: {e}"),
            }
        }
    }
}

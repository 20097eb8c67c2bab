//! Wire format.
//!
//! Every frame is
//!
//! ```text
//! "OKRA" | version u16 | kind u8 | body_len u64 | body | SHA-256(everything before it)
//! ```
//!
//! with all integers little-endian. Bodies by kind:
//!
//! * submit / append: `pid_len u8 | pid | n_rows u64 | width u64 | has_labels u8 |
//!   n_rows*width complex entries as (re f64, im f64) | n_rows i32 labels if present`
//! * withdraw: `pid_len u8 | pid`
//! * ack: `byte_count u64 | status_len u8 | status`
//! * error: `code u16 | msg_len u32 | msg`
//!
//! Nothing in any frame carries the plaintext feature count.

use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

pub const MAGIC: &[u8; 4] = b"OKRA";
pub const PROTOCOL_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 15;
pub const DIGEST_LEN: usize = 32;
pub const DEFAULT_MAX_BODY: u64 = 8 << 30;
pub const MAX_PARTY_ID_LEN: usize = 64;

const READ_CHUNK: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum FrameKind {
    Submit = 1,
    Append = 2,
    Withdraw = 3,
    Ack = 4,
    Error = 5,
}

impl FrameKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => FrameKind::Submit,
            2 => FrameKind::Append,
            3 => FrameKind::Withdraw,
            4 => FrameKind::Ack,
            5 => FrameKind::Error,
            _ => return None,
        })
    }

    /// Whether frames of this kind carry encoded rows.
    pub fn is_data(self) -> bool {
        matches!(self, FrameKind::Submit | FrameKind::Append)
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported protocol version {0}")]
    VersionMismatch(u16),
    #[error("unknown frame kind {0}")]
    UnknownKind(u8),
    #[error("body of {len} bytes exceeds limit of {limit}")]
    BodyTooLarge { len: u64, limit: u64 },
    #[error("digest mismatch")]
    DigestMismatch,
    #[error("stream ended mid-frame")]
    Truncated,
    #[error("stream closed")]
    Closed,
    #[error("malformed body: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Error codes carried in error frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u16)]
pub enum ErrorCode {
    BadFrame = 1,
    DigestMismatch = 2,
    VersionMismatch = 3,
    BodyTooLarge = 4,
    UnknownParty = 5,
    DuplicateSubmission = 6,
    WidthMismatch = 7,
    TooFewRows = 8,
    NotAccepting = 9,
    Timeout = 10,
    Internal = 11,
    UnexpectedKind = 12,
    SessionAborted = 13,
    ImaginaryLeak = 14,
}

impl ErrorCode {
    pub fn from_u16(v: u16) -> Option<Self> {
        use ErrorCode::*;
        [
            BadFrame,
            DigestMismatch,
            VersionMismatch,
            BodyTooLarge,
            UnknownParty,
            DuplicateSubmission,
            WidthMismatch,
            TooFewRows,
            NotAccepting,
            Timeout,
            Internal,
            UnexpectedKind,
            SessionAborted,
            ImaginaryLeak,
        ]
        .into_iter()
        .find(|c| *c as u16 == v)
    }
}

impl From<&ProtocolError> for ErrorCode {
    fn from(e: &ProtocolError) -> Self {
        match e {
            ProtocolError::VersionMismatch(_) => ErrorCode::VersionMismatch,
            ProtocolError::BodyTooLarge { .. } => ErrorCode::BodyTooLarge,
            ProtocolError::DigestMismatch => ErrorCode::DigestMismatch,
            ProtocolError::UnknownKind(_) => ErrorCode::UnexpectedKind,
            _ => ErrorCode::BadFrame,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub body: Vec<u8>,
}

impl Frame {
    /// Size on the wire.
    pub fn wire_len(&self) -> u64 {
        (HEADER_LEN + self.body.len() + DIGEST_LEN) as u64
    }
}

fn header(kind: FrameKind, body_len: u64) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(MAGIC);
    h[4..6].copy_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    h[6] = kind as u8;
    h[7..].copy_from_slice(&body_len.to_le_bytes());
    h
}

/// Serializes one frame.
pub fn frame_message(kind: FrameKind, body: &[u8], limit: u64) -> Result<Vec<u8>, ProtocolError> {
    let len = body.len() as u64;
    if len > limit {
        return Err(ProtocolError::BodyTooLarge { len, limit });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + DIGEST_LEN);
    out.extend_from_slice(&header(kind, len));
    out.extend_from_slice(body);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn check_header(h: &[u8; HEADER_LEN], limit: u64) -> Result<(FrameKind, u64), ProtocolError> {
    if &h[..4] != MAGIC {
        return Err(ProtocolError::BadMagic);
    }
    let version = u16::from_le_bytes([h[4], h[5]]);
    if version != PROTOCOL_VERSION {
        return Err(ProtocolError::VersionMismatch(version));
    }
    let kind = FrameKind::from_u8(h[6]).ok_or(ProtocolError::UnknownKind(h[6]))?;
    let len = u64::from_le_bytes(h[7..].try_into().unwrap());
    if len > limit {
        return Err(ProtocolError::BodyTooLarge { len, limit });
    }
    Ok((kind, len))
}

/// Parses exactly one frame occupying all of `bytes`.
pub fn parse_frame(bytes: &[u8], limit: u64) -> Result<Frame, ProtocolError> {
    if bytes.len() < HEADER_LEN {
        return Err(ProtocolError::Truncated);
    }
    let (kind, len) = check_header(bytes[..HEADER_LEN].try_into().unwrap(), limit)?;
    let end = (HEADER_LEN as u64)
        .checked_add(len)
        .ok_or(ProtocolError::Truncated)?;
    let total = end
        .checked_add(DIGEST_LEN as u64)
        .ok_or(ProtocolError::Truncated)?;
    if (bytes.len() as u64) < total {
        return Err(ProtocolError::Truncated);
    }
    if bytes.len() as u64 > total {
        return Err(ProtocolError::Malformed(
            "trailing bytes after frame".into(),
        ));
    }
    let end = end as usize;
    if Sha256::digest(&bytes[..end]).as_slice() != &bytes[end..] {
        return Err(ProtocolError::DigestMismatch);
    }
    Ok(Frame {
        kind,
        body: bytes[HEADER_LEN..end].to_vec(),
    })
}

/// Reads one frame. The body buffer grows only as bytes arrive, so a large
/// declared length costs nothing until the data is actually sent.
///
/// Returns [`ProtocolError::Closed`] on a clean end of stream before any
/// header byte.
pub async fn read_frame<R: AsyncRead + Unpin>(
    r: &mut R,
    limit: u64,
) -> Result<Frame, ProtocolError> {
    let mut h = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        let n = r.read(&mut h[got..]).await?;
        if n == 0 {
            return Err(if got == 0 {
                ProtocolError::Closed
            } else {
                ProtocolError::Truncated
            });
        }
        got += n;
    }
    let (kind, len) = check_header(&h, limit)?;

    let mut hasher = Sha256::new();
    hasher.update(h);
    let mut body = Vec::new();
    let mut remaining = len;
    while remaining > 0 {
        let take = remaining.min(READ_CHUNK as u64) as usize;
        let start = body.len();
        body.resize(start + take, 0);
        let mut filled = 0;
        while filled < take {
            let n = r.read(&mut body[start + filled..start + take]).await?;
            if n == 0 {
                return Err(ProtocolError::Truncated);
            }
            filled += n;
        }
        hasher.update(&body[start..]);
        remaining -= take as u64;
    }
    let mut digest = [0u8; DIGEST_LEN];
    r.read_exact(&mut digest)
        .await
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => ProtocolError::Truncated,
            _ => ProtocolError::Io(e),
        })?;
    if hasher.finalize().as_slice() != digest {
        return Err(ProtocolError::DigestMismatch);
    }
    Ok(Frame { kind, body })
}

/// Writes one frame without copying the body; returns its wire length.
pub async fn write_frame<W: AsyncWrite + Unpin>(
    w: &mut W,
    kind: FrameKind,
    body: &[u8],
) -> std::io::Result<u64> {
    let h = header(kind, body.len() as u64);
    let mut hasher = Sha256::new();
    hasher.update(h);
    hasher.update(body);
    w.write_all(&h).await?;
    w.write_all(body).await?;
    w.write_all(&hasher.finalize()).await?;
    w.flush().await?;
    Ok((HEADER_LEN + body.len() + DIGEST_LEN) as u64)
}

/// Rows submitted or appended by a party.
#[derive(Clone, Debug, PartialEq)]
pub struct SubmissionMessage {
    pub party_id: String,
    pub n_rows: u64,
    pub width: u64,
    /// `n_rows * width` complex entries as interleaved `(re, im)`.
    pub payload: Vec<f64>,
    pub labels: Option<Vec<i32>>,
}

struct BodyReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> BodyReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| ProtocolError::Malformed("body shorter than its fields".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn party_id(&mut self) -> Result<String, ProtocolError> {
        let len = self.u8()? as usize;
        if len == 0 || len > MAX_PARTY_ID_LEN {
            return Err(ProtocolError::Malformed(format!(
                "party id length {len} not in 1..={MAX_PARTY_ID_LEN}"
            )));
        }
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| ProtocolError::Malformed("party id is not UTF-8".into()))
    }

    fn finish(self) -> Result<(), ProtocolError> {
        if self.pos != self.buf.len() {
            return Err(ProtocolError::Malformed("trailing bytes in body".into()));
        }
        Ok(())
    }
}

fn put_party_id(out: &mut Vec<u8>, pid: &str) -> Result<(), ProtocolError> {
    if pid.is_empty() || pid.len() > MAX_PARTY_ID_LEN {
        return Err(ProtocolError::Malformed(format!(
            "party id must be 1..={MAX_PARTY_ID_LEN} bytes"
        )));
    }
    out.push(pid.len() as u8);
    out.extend_from_slice(pid.as_bytes());
    Ok(())
}

impl SubmissionMessage {
    pub fn encode_body(&self) -> Result<Vec<u8>, ProtocolError> {
        let entries = self
            .n_rows
            .checked_mul(self.width)
            .and_then(|v| v.checked_mul(2));
        if entries != Some(self.payload.len() as u64) {
            return Err(ProtocolError::Malformed(
                "payload length does not match n_rows x width".into(),
            ));
        }
        if let Some(l) = &self.labels {
            if l.len() as u64 != self.n_rows {
                return Err(ProtocolError::Malformed(
                    "label count does not match n_rows".into(),
                ));
            }
        }
        let mut out = Vec::with_capacity(
            1 + self.party_id.len()
                + 17
                + 8 * self.payload.len()
                + 4 * self.labels.as_ref().map_or(0, Vec::len),
        );
        put_party_id(&mut out, &self.party_id)?;
        out.extend_from_slice(&self.n_rows.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.push(self.labels.is_some() as u8);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(l) = &self.labels {
            for v in l {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = BodyReader { buf: body, pos: 0 };
        let party_id = r.party_id()?;
        let n_rows = r.u64()?;
        let width = r.u64()?;
        let has_labels = match r.u8()? {
            0 => false,
            1 => true,
            v => {
                return Err(ProtocolError::Malformed(format!(
                    "has_labels must be 0 or 1, got {v}"
                )))
            }
        };
        if width == 0 {
            return Err(ProtocolError::Malformed("width must be positive".into()));
        }
        let payload_bytes = n_rows
            .checked_mul(width)
            .and_then(|v| v.checked_mul(16))
            .and_then(|v| usize::try_from(v).ok())
            .ok_or_else(|| ProtocolError::Malformed("n_rows x width overflows".into()))?;
        let raw = r.take(payload_bytes)?;
        let payload: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if payload.iter().any(|v| !v.is_finite()) {
            return Err(ProtocolError::Malformed(
                "payload contains non-finite values".into(),
            ));
        }
        let labels = if has_labels {
            let raw = r.take(n_rows as usize * 4)?;
            Some(
                raw.chunks_exact(4)
                    .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            )
        } else {
            None
        };
        r.finish()?;
        Ok(SubmissionMessage {
            party_id,
            n_rows,
            width,
            payload,
            labels,
        })
    }
}

pub fn encode_withdraw(party_id: &str) -> Result<Vec<u8>, ProtocolError> {
    let mut out = Vec::new();
    put_party_id(&mut out, party_id)?;
    Ok(out)
}

pub fn decode_withdraw(body: &[u8]) -> Result<String, ProtocolError> {
    let mut r = BodyReader { buf: body, pos: 0 };
    let pid = r.party_id()?;
    r.finish()?;
    Ok(pid)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AckMessage {
    /// Wire size of the frame being acknowledged.
    pub byte_count: u64,
    pub status: String,
}

impl AckMessage {
    pub fn encode_body(&self) -> Vec<u8> {
        let status = truncate_utf8(&self.status, u8::MAX as usize);
        let mut out = Vec::with_capacity(9 + status.len());
        out.extend_from_slice(&self.byte_count.to_le_bytes());
        out.push(status.len() as u8);
        out.extend_from_slice(status.as_bytes());
        out
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = BodyReader { buf: body, pos: 0 };
        let byte_count = r.u64()?;
        let len = r.u8()? as usize;
        let status = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| ProtocolError::Malformed("status is not UTF-8".into()))?;
        r.finish()?;
        Ok(AckMessage { byte_count, status })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorMessage {
    pub code: u16,
    pub message: String,
}

impl ErrorMessage {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code: code as u16,
            message: message.into(),
        }
    }

    pub fn error_code(&self) -> Option<ErrorCode> {
        ErrorCode::from_u16(self.code)
    }

    pub fn encode_body(&self) -> Vec<u8> {
        let msg = truncate_utf8(&self.message, 4096);
        let mut out = Vec::with_capacity(6 + msg.len());
        out.extend_from_slice(&self.code.to_le_bytes());
        out.extend_from_slice(&(msg.len() as u32).to_le_bytes());
        out.extend_from_slice(msg.as_bytes());
        out
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = BodyReader { buf: body, pos: 0 };
        let code = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        let len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let message = String::from_utf8_lossy(r.take(len)?).into_owned();
        r.finish()?;
        Ok(ErrorMessage { code, message })
    }
}

fn truncate_utf8(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

//! Participant side of a session: build the key locally from the shared
//! seed, encode, submit once and wait for the acknowledgement. Plaintext and
//! key material never leave the process.

use std::time::Instant;

use okra_core::encoder::EncodeError;
use okra_core::keys::{build_key, derive_plan, EncodingKey, KeyError, Seed};
use okra_core::{encode_incremental, DataMatrix, EncodedMatrix};
use okra_transport::protocol::{encode_withdraw, ProtocolError, MAX_PARTY_ID_LEN};
use okra_transport::{
    read_frame, write_frame, AckMessage, ErrorCode, ErrorMessage, FrameKind, SubmissionMessage,
};
use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;
use tracing::debug;

/// Largest reply the client will read; replies are only ack/error frames.
const MAX_REPLY: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect to {addr}: {source}")]
    Connect {
        addr: String,
        source: std::io::Error,
    },
    #[error("server rejected the request ({}): {message}", code.map_or_else(|| raw_code.to_string(), |c| format!("{c:?}")))]
    Rejected {
        code: Option<ErrorCode>,
        raw_code: u16,
        message: String,
    },
    #[error("unexpected reply: {0}")]
    UnexpectedReply(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("status request failed: {0}")]
    Http(#[from] reqwest::Error),
}

impl ClientError {
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ClientError::Rejected { code, .. } => *code,
            _ => None,
        }
    }
}

/// What a party needs to rebuild the cohort key.
#[derive(Clone, Debug)]
pub struct KeySource {
    pub seed: Seed,
    pub block_size: usize,
    pub redundancy: usize,
}

impl KeySource {
    pub fn build(&self, features: usize) -> Result<EncodingKey, KeyError> {
        build_key(
            &self.seed,
            &derive_plan(features, self.block_size, self.redundancy)?,
        )
    }
}

#[derive(Clone, Debug)]
pub struct SubmitReport {
    pub ack: AckMessage,
    pub n_rows: usize,
    pub width: usize,
    pub encode_s: f64,
    pub transmit_s: f64,
    pub bytes_sent: u64,
}

fn message(
    encoded: EncodedMatrix,
    labels: Option<&[i32]>,
) -> Result<SubmissionMessage, ClientError> {
    if let Some(l) = labels {
        if l.len() != encoded.n_rows() {
            return Err(ClientError::Invalid(format!(
                "{} labels for {} rows",
                l.len(),
                encoded.n_rows()
            )));
        }
    }
    Ok(SubmissionMessage {
        party_id: encoded.owner().to_string(),
        n_rows: encoded.n_rows() as u64,
        width: encoded.width() as u64,
        labels: labels.map(<[i32]>::to_vec),
        payload: encoded.into_interleaved(),
    })
}

fn check_party_id(pid: &str) -> Result<(), ClientError> {
    if pid.is_empty() || pid.len() > MAX_PARTY_ID_LEN {
        return Err(ClientError::Invalid(format!(
            "party id must be 1..={MAX_PARTY_ID_LEN} bytes"
        )));
    }
    Ok(())
}

/// Sends one frame on a fresh connection and waits for the reply.
pub async fn send_frame(
    addr: &str,
    kind: FrameKind,
    body: &[u8],
) -> Result<(AckMessage, u64), ClientError> {
    let mut stream = TcpStream::connect(addr)
        .await
        .map_err(|source| ClientError::Connect {
            addr: addr.to_string(),
            source,
        })?;
    stream.set_nodelay(true).ok();
    // If the server rejects early it may close before the body is written;
    // its error frame is still waiting to be read.
    let sent = write_frame(&mut stream, kind, body).await;
    if let Err(e) = &sent {
        debug!(error = %e, "write failed; reading reply");
    }
    let reply = read_frame(&mut stream, MAX_REPLY).await;
    let _ = stream.shutdown().await;
    let reply = match (reply, sent) {
        (Ok(r), _) => r,
        (Err(_), Err(e)) => return Err(ProtocolError::Io(e).into()),
        (Err(e), Ok(_)) => return Err(e.into()),
    };
    match reply.kind {
        FrameKind::Ack => {
            let ack = AckMessage::decode_body(&reply.body)?;
            Ok((
                ack,
                (okra_transport::protocol::HEADER_LEN
                    + body.len()
                    + okra_transport::protocol::DIGEST_LEN) as u64,
            ))
        }
        FrameKind::Error => {
            let e = ErrorMessage::decode_body(&reply.body)?;
            Err(ClientError::Rejected {
                code: e.error_code(),
                raw_code: e.code,
                message: e.message,
            })
        }
        k => Err(ClientError::UnexpectedReply(format!("{k:?} frame"))),
    }
}

async fn send_rows(
    addr: &str,
    kind: FrameKind,
    party_id: &str,
    data: &DataMatrix,
    key: &KeySource,
    labels: Option<&[i32]>,
) -> Result<SubmitReport, ClientError> {
    check_party_id(party_id)?;
    let t = Instant::now();
    let key = key.build(data.n_features())?;
    let encoded = encode_incremental(data, &key, party_id)?;
    drop(key);
    let encode_s = t.elapsed().as_secs_f64();
    let (n_rows, width) = (encoded.n_rows(), encoded.width());
    let body = message(encoded, labels)?.encode_body()?;

    let t = Instant::now();
    let (ack, bytes_sent) = send_frame(addr, kind, &body).await?;
    let transmit_s = t.elapsed().as_secs_f64();
    Ok(SubmitReport {
        ack,
        n_rows,
        width,
        encode_s,
        transmit_s,
        bytes_sent,
    })
}

/// Encodes `data` under the cohort key and submits it once.
pub async fn run_client(
    addr: &str,
    party_id: &str,
    data: &DataMatrix,
    key: &KeySource,
    labels: Option<&[i32]>,
) -> Result<SubmitReport, ClientError> {
    send_rows(addr, FrameKind::Submit, party_id, data, key, labels).await
}

/// Adds rows to an earlier submission of an append-enabled session.
pub async fn append(
    addr: &str,
    party_id: &str,
    data: &DataMatrix,
    key: &KeySource,
    labels: Option<&[i32]>,
) -> Result<SubmitReport, ClientError> {
    send_rows(addr, FrameKind::Append, party_id, data, key, labels).await
}

/// Removes all of a party's rows from an append-enabled session.
pub async fn withdraw(addr: &str, party_id: &str) -> Result<AckMessage, ClientError> {
    check_party_id(party_id)?;
    let body = encode_withdraw(party_id)?;
    Ok(send_frame(addr, FrameKind::Withdraw, &body).await?.0)
}

/// Fetches a JSON document from the server's HTTP status plane, e.g.
/// `fetch_status("http://127.0.0.1:8080", "/v1/session")`.
pub async fn fetch_status(base_url: &str, path: &str) -> Result<serde_json::Value, ClientError> {
    let url = format!("{}{}", base_url.trim_end_matches('/'), path);
    let resp = reqwest::get(&url).await?.error_for_status()?;
    Ok(resp.json().await?)
}

#![allow(dead_code)]

use std::net::SocketAddr;

use okra_core::keys::{build_key, derive_plan, Seed};
use okra_core::linalg::Matrix;
use okra_core::{encode, DataMatrix};
use okra_transport::protocol::ProtocolError;
use okra_transport::{
    read_frame, write_frame, AckMessage, ErrorMessage, FrameKind, SubmissionMessage,
};
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;

pub fn seed(tag: u8) -> Seed {
    Seed::new([tag; 32])
}

pub fn data(n: usize, f: usize, salt: f64) -> DataMatrix {
    DataMatrix::new(Matrix::from_fn(n, f, |i, j| {
        ((i * f + j) as f64 * 0.613 + salt).sin() * 1.5
    }))
    .unwrap()
}

pub fn submission(
    pid: &str,
    d: &DataMatrix,
    seed: &Seed,
    labels: Option<Vec<i32>>,
) -> SubmissionMessage {
    let key = build_key(seed, &derive_plan(d.n_features(), 16, 1).unwrap()).unwrap();
    let e = encode(d, &key, pid).unwrap();
    SubmissionMessage {
        party_id: pid.into(),
        n_rows: e.n_rows() as u64,
        width: e.width() as u64,
        labels,
        payload: e.into_interleaved(),
    }
}

#[derive(Debug)]
pub enum Reply {
    Ack(AckMessage),
    Error(ErrorMessage),
}

impl Reply {
    pub fn error_code(&self) -> Option<u16> {
        match self {
            Reply::Error(e) => Some(e.code),
            Reply::Ack(_) => None,
        }
    }
}

pub async fn roundtrip(
    addr: SocketAddr,
    kind: FrameKind,
    body: &[u8],
) -> Result<Reply, ProtocolError> {
    let mut s = TcpStream::connect(addr).await?;
    let _ = write_frame(&mut s, kind, body).await;
    read_reply(&mut s).await
}

pub async fn send_raw(addr: SocketAddr, bytes: &[u8]) -> Result<Reply, ProtocolError> {
    let mut s = TcpStream::connect(addr).await?;
    let _ = s.write_all(bytes).await;
    let _ = s.shutdown().await;
    read_reply(&mut s).await
}

pub async fn read_reply(s: &mut TcpStream) -> Result<Reply, ProtocolError> {
    let f = read_frame(s, 1 << 20).await?;
    match f.kind {
        FrameKind::Ack => Ok(Reply::Ack(AckMessage::decode_body(&f.body)?)),
        FrameKind::Error => Ok(Reply::Error(ErrorMessage::decode_body(&f.body)?)),
        k => panic!("server sent a {k:?} frame"),
    }
}

pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    a.max_abs_diff(b) / b.max_abs().max(f64::MIN_POSITIVE)
}

/// Plaintext Gram over rows arranged in the server's index order.
pub fn oracle_for(
    gram: &okra_core::GlobalGram,
    sources: &[(&str, &DataMatrix)],
    spec: &okra_core::KernelSpec,
) -> Matrix {
    let rows: Vec<Vec<f64>> = gram
        .index_map()
        .iter()
        .map(|r| {
            let (_, d) = sources
                .iter()
                .find(|(o, _)| *o == r.owner)
                .expect("known owner");
            d.row(r.local).to_vec()
        })
        .collect();
    okra_core::plaintext_gram(&[&DataMatrix::from_rows(&rows).unwrap()], spec).unwrap()
}

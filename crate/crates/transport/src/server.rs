//! One-shot session server.
//!
//! The server accepts one submission per expected party, waits for all of
//! them (or the timeout), assembles the global Gram matrix, runs the
//! configured training task and writes its outputs. Parties only ever
//! receive acknowledgement and error frames. With `allow_append`, the
//! session then stays up and applies append/withdraw requests as
//! incremental Gram updates.

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use okra_core::io::{write_index_map, write_matrix, IoError};
use okra_core::kernel::{assemble_global, GlobalGram, KernelError, KernelSpec};
use okra_core::ml::model_io::write_model;
use okra_core::ml::{run_pipeline, MlError, MlTask, TrainedModel};
use okra_core::EncodedMatrix;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tracing::{debug, info, warn};

use crate::http;
use crate::protocol::{
    decode_withdraw, read_frame, write_frame, AckMessage, ErrorCode, ErrorMessage, Frame,
    FrameKind, ProtocolError, SubmissionMessage, DEFAULT_MAX_BODY,
};

/// How long a rejected connection is drained before closing, so the error
/// frame is not lost to a reset.
const DRAIN_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub expected_parties: Vec<String>,
    pub kernel: KernelSpec,
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
    /// Deadline for all initial submissions; also the idle timeout of an
    /// append session.
    pub timeout: Duration,
    pub allow_append: bool,
    pub out_dir: PathBuf,
    pub ml: MlTask,
    pub max_body: u64,
    pub http_port: Option<u16>,
    /// Serve the Gram matrix over the HTTP status plane.
    pub release_gram: bool,
}

impl SessionConfig {
    pub fn new(
        expected_parties: Vec<String>,
        kernel: KernelSpec,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            expected_parties,
            kernel,
            host: "127.0.0.1".into(),
            port: 0,
            timeout: Duration::from_secs(300),
            allow_append: false,
            out_dir: out_dir.into(),
            ml: MlTask::GramOnly,
            max_body: DEFAULT_MAX_BODY,
            http_port: None,
            release_gram: false,
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: String| Err(SessionError::InvalidConfig(m));
        if self.expected_parties.is_empty() {
            return bad("at least one expected party is required".into());
        }
        for (i, p) in self.expected_parties.iter().enumerate() {
            if p.is_empty() || p.len() > crate::protocol::MAX_PARTY_ID_LEN {
                return bad(format!("party id {p:?} must be 1..=64 bytes"));
            }
            if self.expected_parties[..i].contains(p) {
                return bad(format!("duplicate party id {p:?}"));
            }
        }
        if self.timeout.is_zero() {
            return bad("timeout must be positive".into());
        }
        self.kernel
            .validate()
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("cannot bind: {0}")]
    Bind(std::io::Error),
    #[error("timed out waiting for parties: {}", missing.join(", "))]
    Timeout { missing: Vec<String> },
    #[error("session aborted: {0}")]
    Aborted(String),
    #[error("width mismatch: {0}")]
    WidthMismatch(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error("writing outputs: {0}")]
    Output(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<IoError> for SessionError {
    fn from(e: IoError) -> Self {
        SessionError::Output(e.to_string())
    }
}

impl From<std::io::Error> for SessionError {
    fn from(e: std::io::Error) -> Self {
        SessionError::Output(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Collecting,
    Computing,
    Serving,
    Finished,
    Aborted,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct PartyStats {
    pub rows: usize,
    pub bytes_received: u64,
    /// Data-bearing frames (submit or append) received under this id,
    /// including rejected ones.
    pub data_frames: u64,
    pub submitted: bool,
    pub withdrawn: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Timings {
    pub receive_s: f64,
    pub gram_s: f64,
    pub ml_s: f64,
    pub total_s: f64,
}

pub(crate) struct State {
    pub(crate) phase: Phase,
    width: Option<usize>,
    /// Encoded rows per owner, in arrival order.
    cache: Vec<EncodedMatrix>,
    labels: BTreeMap<String, Option<Vec<i32>>>,
    pub(crate) parties: BTreeMap<String, PartyStats>,
    pub(crate) gram: Option<GlobalGram>,
    outbound: BTreeMap<&'static str, u64>,
    pub(crate) report: Option<Value>,
    timings: Timings,
    ml_summary: Value,
    last_activity: Instant,
}

pub(crate) struct Shared {
    pub(crate) cfg: SessionConfig,
    pub(crate) state: Mutex<State>,
    signal: watch::Sender<Signal>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Signal {
    Collecting,
    Ready,
    Aborted { code: ErrorCode, why: String },
    /// Carries the abort reason, if any, for connections that wake late.
    Closed { aborted: Option<String> },
}

impl Shared {
    pub(crate) fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub(crate) fn missing(&self, st: &State) -> Vec<String> {
        self.cfg
            .expected_parties
            .iter()
            .filter(|p| !st.parties.get(*p).is_some_and(|s| s.submitted))
            .cloned()
            .collect()
    }
}

/// Result of a completed session.
#[derive(Debug)]
pub struct SessionOutcome {
    pub gram: GlobalGram,
    pub model: Option<TrainedModel>,
    pub report: Value,
}

/// A bound, not yet running, session.
pub struct Server {
    shared: Arc<Shared>,
    listener: TcpListener,
    http: Option<TcpListener>,
}

impl Server {
    pub async fn bind(cfg: SessionConfig) -> Result<Self, SessionError> {
        cfg.validate()?;
        let listener = TcpListener::bind((cfg.host.as_str(), cfg.port))
            .await
            .map_err(SessionError::Bind)?;
        let http = match cfg.http_port {
            Some(p) => Some(
                TcpListener::bind((cfg.host.as_str(), p))
                    .await
                    .map_err(SessionError::Bind)?,
            ),
            None => None,
        };
        let parties = cfg
            .expected_parties
            .iter()
            .map(|p| (p.clone(), PartyStats::default()))
            .collect();
        let state = State {
            phase: Phase::Collecting,
            width: None,
            cache: Vec::new(),
            labels: BTreeMap::new(),
            parties,
            gram: None,
            outbound: BTreeMap::new(),
            report: None,
            timings: Timings::default(),
            ml_summary: Value::Null,
            last_activity: Instant::now(),
        };
        let (signal, _) = watch::channel(Signal::Collecting);
        Ok(Self {
            shared: Arc::new(Shared {
                cfg,
                state: Mutex::new(state),
                signal,
            }),
            listener,
            http,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn http_addr(&self) -> Option<SocketAddr> {
        self.http.as_ref().and_then(|l| l.local_addr().ok())
    }

    /// Runs the session until it completes, fails, or `shutdown` resolves.
    pub async fn run(
        self,
        shutdown: impl Future<Output = ()>,
    ) -> Result<SessionOutcome, SessionError> {
        let Server {
            shared,
            listener,
            http,
        } = self;
        let start = Instant::now();
        let mut signal = shared.signal.subscribe();
        info!(addr = %listener.local_addr()?, parties = shared.cfg.expected_parties.len(), "session open");

        let accept = tokio::spawn(accept_loop(listener, shared.clone()));
        let http_task =
            http.map(|l| tokio::spawn(http::serve(l, shared.clone(), shared.signal.subscribe())));
        tokio::pin!(shutdown);

        let result = tokio::select! {
            s = async { signal.wait_for(|s| *s != Signal::Collecting).await.map(|s| s.clone()) } => match s {
                Ok(Signal::Ready) => Ok(()),
                Ok(Signal::Aborted { code: ErrorCode::WidthMismatch, why }) => Err(SessionError::WidthMismatch(why)),
                Ok(Signal::Aborted { why, .. }) => Err(SessionError::Aborted(why)),
                _ => Err(SessionError::Internal("session signal closed".into())),
            },
            _ = tokio::time::sleep(shared.cfg.timeout) => {
                let missing = shared.missing(&shared.lock());
                Err(SessionError::Timeout { missing })
            }
            _ = &mut shutdown => Err(SessionError::Aborted("shutdown before all parties submitted".into())),
        };
        let receive_s = start.elapsed().as_secs_f64();
        shared.lock().timings.receive_s = receive_s;

        let outcome = match result {
            Ok(()) => compute(shared.clone()).await,
            Err(e) => Err(e),
        };
        let mut aborted = None;
        let outcome = match outcome {
            Ok(o) if shared.cfg.allow_append => {
                shared.lock().phase = Phase::Serving;
                serve_updates(&shared, &mut shutdown).await;
                finish(&shared, start, "complete", None)?;
                let st = shared.lock();
                Ok(SessionOutcome {
                    gram: st.gram.clone().unwrap_or(o.gram),
                    model: o.model,
                    report: st.report.clone().unwrap_or(Value::Null),
                })
            }
            Ok(mut o) => {
                o.report = finish(&shared, start, "complete", None)?;
                Ok(o)
            }
            Err(e) => {
                let status = match &e {
                    SessionError::Timeout { .. } => "timeout",
                    SessionError::Aborted(_) | SessionError::WidthMismatch(_) => "aborted",
                    _ => "error",
                };
                {
                    let mut st = shared.lock();
                    st.phase = Phase::Aborted;
                }
                shared.signal.send_replace(Signal::Aborted {
                    code: ErrorCode::SessionAborted,
                    why: e.to_string(),
                });
                aborted = Some(e.to_string());
                // Reporting failures must not mask the session error.
                if let Err(re) = finish(&shared, start, status, Some(&e.to_string())) {
                    warn!(error = %re, "could not write report");
                }
                Err(e)
            }
        };

        shared.signal.send_replace(Signal::Closed { aborted });
        let _ = accept.await;
        if let Some(h) = http_task {
            h.abort();
        }
        outcome
    }
}

/// Binds and runs a session, stopping early on Ctrl-C.
pub async fn run_server(cfg: SessionConfig) -> Result<SessionOutcome, SessionError> {
    let server = Server::bind(cfg).await?;
    server
        .run(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Accepts until the session closes, then gives open connections a moment
/// to flush their last replies.
async fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut signal = shared.signal.subscribe();
    let mut handlers = tokio::task::JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    debug!(%peer, "connection");
                    handlers.spawn(handle_connection(stream, shared.clone()));
                }
                Err(e) => {
                    warn!(error = %e, "accept failed");
                    tokio::time::sleep(Duration::from_millis(50)).await;
                }
            },
            Some(_) = handlers.join_next(), if !handlers.is_empty() => {}
            _ = async { signal.wait_for(|s| matches!(s, Signal::Closed { .. })).await.is_ok() } => break,
        }
    }
    drop(listener);
    let _ = tokio::time::timeout(DRAIN_TIMEOUT, async {
        while handlers.join_next().await.is_some() {}
    })
    .await;
}

/// The only frames the server ever sends.
enum Outbound {
    Ack(AckMessage),
    Error(ErrorMessage),
}

async fn send(stream: &mut TcpStream, shared: &Shared, msg: Outbound) -> std::io::Result<()> {
    let (kind, name, body) = match msg {
        Outbound::Ack(a) => (FrameKind::Ack, "ack", a.encode_body()),
        Outbound::Error(e) => (FrameKind::Error, "error", e.encode_body()),
    };
    *shared.lock().outbound.entry(name).or_insert(0) += 1;
    write_frame(stream, kind, &body).await.map(|_| ())
}

async fn reject(mut stream: TcpStream, shared: &Shared, err: ErrorMessage) {
    debug!(code = err.code, message = %err.message, "rejecting");
    let _ = send(&mut stream, shared, Outbound::Error(err)).await;
    let _ = stream.shutdown().await;
    let mut sink = vec![0u8; 64 * 1024];
    let _ = tokio::time::timeout(DRAIN_TIMEOUT, async {
        while let Ok(n) = stream.read(&mut sink).await {
            if n == 0 {
                break;
            }
        }
    })
    .await;
}

async fn handle_connection(mut stream: TcpStream, shared: Arc<Shared>) {
    let mut signal = shared.signal.subscribe();
    loop {
        let frame = tokio::select! {
            f = read_frame(&mut stream, shared.cfg.max_body) => f,
            s = async { signal.wait_for(|s| matches!(s, Signal::Aborted { .. } | Signal::Closed { .. })).await.map(|s| s.clone()) } => {
                if let Ok(Signal::Aborted { why, .. } | Signal::Closed { aborted: Some(why) }) = s {
                    reject(stream, &shared, ErrorMessage::new(ErrorCode::SessionAborted, why)).await;
                }
                return;
            }
        };
        let frame = match frame {
            Ok(f) => f,
            Err(ProtocolError::Closed) => return,
            Err(ProtocolError::Io(e)) => {
                debug!(error = %e, "connection error");
                return;
            }
            Err(e) => {
                reject(
                    stream,
                    &shared,
                    ErrorMessage::new(ErrorCode::from(&e), e.to_string()),
                )
                .await;
                return;
            }
        };
        shared.lock().last_activity = Instant::now();
        match handle_frame(&shared, frame).await {
            Ok(ack) => {
                if send(&mut stream, &shared, Outbound::Ack(ack))
                    .await
                    .is_err()
                {
                    return;
                }
            }
            Err(err) => {
                reject(stream, &shared, err).await;
                return;
            }
        }
    }
}

async fn handle_frame(shared: &Arc<Shared>, frame: Frame) -> Result<AckMessage, ErrorMessage> {
    let wire_len = frame.wire_len();
    let bad = |e: ProtocolError| ErrorMessage::new(ErrorCode::BadFrame, e.to_string());
    match frame.kind {
        FrameKind::Submit => {
            let msg = SubmissionMessage::decode_body(&frame.body).map_err(bad)?;
            submit(shared, msg, wire_len)
        }
        FrameKind::Append => {
            let msg = SubmissionMessage::decode_body(&frame.body).map_err(bad)?;
            let shared = shared.clone();
            tokio::task::spawn_blocking(move || append(&shared, msg, wire_len))
                .await
                .map_err(|e| ErrorMessage::new(ErrorCode::Internal, e.to_string()))?
        }
        FrameKind::Withdraw => {
            let pid = decode_withdraw(&frame.body).map_err(bad)?;
            let shared = shared.clone();
            tokio::task::spawn_blocking(move || withdraw(&shared, &pid, wire_len))
                .await
                .map_err(|e| ErrorMessage::new(ErrorCode::Internal, e.to_string()))?
        }
        FrameKind::Ack | FrameKind::Error => Err(ErrorMessage::new(
            ErrorCode::UnexpectedKind,
            "parties may only send submit, append or withdraw",
        )),
    }
}

fn to_encoded(msg: SubmissionMessage) -> Result<(EncodedMatrix, Option<Vec<i32>>), ErrorMessage> {
    let SubmissionMessage {
        party_id,
        n_rows,
        width,
        payload,
        labels,
    } = msg;
    let m = EncodedMatrix::from_interleaved(party_id, n_rows as usize, width as usize, payload)
        .map_err(|e| ErrorMessage::new(ErrorCode::BadFrame, e.to_string()))?;
    Ok((m, labels))
}

fn submit(
    shared: &Shared,
    msg: SubmissionMessage,
    wire_len: u64,
) -> Result<AckMessage, ErrorMessage> {
    let mut st = shared.lock();
    let pid = msg.party_id.clone();
    let Some(stats) = st.parties.get_mut(&pid) else {
        return Err(ErrorMessage::new(
            ErrorCode::UnknownParty,
            format!("party {pid:?} is not expected"),
        ));
    };
    stats.data_frames += 1;
    stats.bytes_received += wire_len;
    if stats.submitted {
        return Err(ErrorMessage::new(
            ErrorCode::DuplicateSubmission,
            format!("party {pid:?} already submitted; the first submission is kept"),
        ));
    }
    if st.phase != Phase::Collecting {
        return Err(ErrorMessage::new(
            ErrorCode::NotAccepting,
            "session is no longer collecting submissions",
        ));
    }
    if msg.n_rows < 2 {
        return Err(ErrorMessage::new(
            ErrorCode::TooFewRows,
            "initial submissions need at least 2 rows",
        ));
    }
    let width = msg.width as usize;
    if let Some(expected) = st.width {
        if expected != width {
            drop(st);
            let why = format!("party {pid:?} sent width {width}, session width is {expected}");
            warn!("{why}");
            shared.signal.send_replace(Signal::Aborted {
                code: ErrorCode::WidthMismatch,
                why: why.clone(),
            });
            return Err(ErrorMessage::new(ErrorCode::WidthMismatch, why));
        }
    }
    let (m, labels) = to_encoded(msg)?;
    st.width = Some(width);
    let stats = st.parties.get_mut(&pid).expect("checked above");
    stats.submitted = true;
    stats.rows = m.n_rows();
    st.cache.push(m);
    st.labels.insert(pid.clone(), labels);
    info!(party = %pid, bytes = wire_len, "submission received");
    if shared.missing(&st).is_empty() {
        st.phase = Phase::Computing;
        drop(st);
        shared.signal.send_replace(Signal::Ready);
    }
    Ok(AckMessage {
        byte_count: wire_len,
        status: "received".into(),
    })
}

fn check_update_allowed(shared: &Shared, st: &State, pid: &str) -> Result<(), ErrorMessage> {
    if !shared.cfg.allow_append {
        return Err(ErrorMessage::new(
            ErrorCode::NotAccepting,
            "this session does not accept appends or withdrawals",
        ));
    }
    if !st.parties.contains_key(pid) {
        return Err(ErrorMessage::new(
            ErrorCode::UnknownParty,
            format!("party {pid:?} is not expected"),
        ));
    }
    Ok(())
}

fn append(
    shared: &Shared,
    msg: SubmissionMessage,
    wire_len: u64,
) -> Result<AckMessage, ErrorMessage> {
    let mut st = shared.lock();
    let pid = msg.party_id.clone();
    check_update_allowed(shared, &st, &pid)?;
    let stats = st.parties.get_mut(&pid).expect("checked");
    stats.data_frames += 1;
    stats.bytes_received += wire_len;
    if msg.n_rows == 0 {
        return Err(ErrorMessage::new(
            ErrorCode::TooFewRows,
            "append needs at least 1 row",
        ));
    }
    if st.width != Some(msg.width as usize) {
        return Err(ErrorMessage::new(
            ErrorCode::WidthMismatch,
            format!(
                "append width {} does not match session width {:?}",
                msg.width, st.width
            ),
        ));
    }
    let (rows, labels) = to_encoded(msg)?;
    let has_rows = st.cache.iter().any(|c| c.owner() == pid);
    let old_labels = st.labels.get(&pid).cloned().flatten();
    let merged_labels = match (has_rows, old_labels, labels) {
        (false, _, l) => l,
        (true, Some(mut a), Some(b)) => {
            a.extend(b);
            Some(a)
        }
        _ => None,
    };

    match st.phase {
        Phase::Collecting if has_rows => {}
        Phase::Serving => {
            let State { gram, cache, .. } = &mut *st;
            let g = gram.as_mut().expect("gram exists while serving");
            let stats = g.append_rows(cache, &rows).map_err(kernel_error)?;
            debug!(party = %pid, entries = stats.entries_computed, "append applied");
        }
        _ => {
            return Err(ErrorMessage::new(
                ErrorCode::NotAccepting,
                "append requires an accepted submission",
            ))
        }
    }
    match st.cache.iter_mut().find(|c| c.owner() == pid) {
        Some(c) => c.extend(&rows),
        None => st.cache.push(rows.clone()),
    }
    st.labels.insert(pid.clone(), merged_labels);
    let stats = st.parties.get_mut(&pid).expect("checked");
    stats.rows += rows.n_rows();
    stats.withdrawn = false;
    if st.phase == Phase::Serving {
        retrain(shared, &mut st);
    }
    Ok(AckMessage {
        byte_count: wire_len,
        status: "appended".into(),
    })
}

fn withdraw(shared: &Shared, pid: &str, wire_len: u64) -> Result<AckMessage, ErrorMessage> {
    let mut st = shared.lock();
    check_update_allowed(shared, &st, pid)?;
    if st.phase != Phase::Serving {
        return Err(ErrorMessage::new(
            ErrorCode::NotAccepting,
            "withdrawal is possible once the Gram matrix exists",
        ));
    }
    let g = st.gram.as_mut().expect("gram exists while serving");
    g.remove_owner(pid)
        .map_err(|e| ErrorMessage::new(ErrorCode::UnknownParty, e.to_string()))?;
    st.cache.retain(|c| c.owner() != pid);
    st.labels.remove(pid);
    let stats = st.parties.get_mut(pid).expect("checked");
    stats.rows = 0;
    stats.withdrawn = true;
    stats.bytes_received += wire_len;
    info!(party = %pid, "withdrawn");
    retrain(shared, &mut st);
    Ok(AckMessage {
        byte_count: wire_len,
        status: "withdrawn".into(),
    })
}

fn kernel_error(e: KernelError) -> ErrorMessage {
    let code = match e {
        KernelError::WidthMismatch { .. } => ErrorCode::WidthMismatch,
        KernelError::ImaginaryLeak { .. } => ErrorCode::ImaginaryLeak,
        _ => ErrorCode::Internal,
    };
    ErrorMessage::new(code, e.to_string())
}

/// One label per Gram row, or `None` if any contributing party sent none.
fn labels_for(labels: &BTreeMap<String, Option<Vec<i32>>>, gram: &GlobalGram) -> Option<Vec<i32>> {
    gram.index_map()
        .iter()
        .map(|r| {
            labels
                .get(&r.owner)
                .and_then(|l| l.as_ref())
                .and_then(|l| l.get(r.local).copied())
        })
        .collect()
}

/// Re-runs training and rewrites outputs after an incremental update.
fn retrain(shared: &Shared, st: &mut State) {
    let gram = st.gram.clone().expect("gram exists while serving");
    let model = if gram.is_empty() {
        st.ml_summary = json!({ "task": "none", "reason": "empty Gram matrix" });
        None
    } else {
        let labels = labels_for(&st.labels, &gram);
        match run_pipeline(gram.values(), labels.as_deref(), &shared.cfg.ml) {
            Ok(out) => {
                st.ml_summary = out.summary;
                out.model
            }
            Err(e) => {
                warn!(error = %e, "training after update failed");
                st.ml_summary = json!({ "error": e.to_string() });
                None
            }
        }
    };
    if let Err(e) = write_outputs(&shared.cfg, &gram, model.as_ref(), &st.ml_summary) {
        warn!(error = %e, "could not write outputs");
    }
    st.report = Some(build_report(shared, st, "serving", None));
}

async fn compute(shared: Arc<Shared>) -> Result<SessionOutcome, SessionError> {
    let s = shared.clone();
    tokio::task::spawn_blocking(move || {
        let (subs, labels_by_owner) = {
            let st = s.lock();
            (st.cache.clone(), st.labels.clone())
        };
        let t = Instant::now();
        let gram = assemble_global(&subs, &s.cfg.kernel)?;
        let gram_s = t.elapsed().as_secs_f64();
        info!(rows = gram.len(), seconds = gram_s, "gram assembled");

        let labels = labels_for(&labels_by_owner, &gram);
        let t = Instant::now();
        let out = run_pipeline(gram.values(), labels.as_deref(), &s.cfg.ml);
        let ml_s = t.elapsed().as_secs_f64();
        {
            let mut st = s.lock();
            st.gram = Some(gram.clone());
            st.timings.gram_s = gram_s;
            st.timings.ml_s = ml_s;
        }
        let out = out?;
        write_outputs(&s.cfg, &gram, out.model.as_ref(), &out.summary)?;
        s.lock().ml_summary = out.summary;
        Ok(SessionOutcome {
            gram,
            model: out.model,
            report: Value::Null,
        })
    })
    .await
    .map_err(|e| SessionError::Internal(e.to_string()))?
}

async fn serve_updates(shared: &Arc<Shared>, shutdown: &mut (impl Future<Output = ()> + Unpin)) {
    info!("serving appends and withdrawals");
    {
        let mut st = shared.lock();
        let r = build_report(shared, &st, "serving", None);
        st.report = Some(r);
    }
    loop {
        let idle_deadline = shared.lock().last_activity + shared.cfg.timeout;
        tokio::select! {
            _ = &mut *shutdown => return,
            _ = tokio::time::sleep_until(idle_deadline.into()) => {
                if shared.lock().last_activity + shared.cfg.timeout <= Instant::now() {
                    info!("idle timeout");
                    return;
                }
            }
        }
    }
}

fn build_report(shared: &Shared, st: &State, status: &str, error: Option<&str>) -> Value {
    let missing = shared.missing(st);
    let rows = st.gram.as_ref().map(|g| g.len());
    let max_imag = st.gram.as_ref().map(|g| g.max_imag_residue());
    json!({
        "status": status,
        "error": error,
        "expected_parties": shared.cfg.expected_parties,
        "missing_parties": missing,
        "width": st.width,
        "total_rows": rows,
        "kernel": shared.cfg.kernel,
        "allow_append": shared.cfg.allow_append,
        "timings": st.timings,
        "parties": st.parties,
        "max_imag_residue": max_imag,
        "outbound_frames": st.outbound,
        "ml": st.ml_summary,
    })
}

fn finish(
    shared: &Shared,
    start: Instant,
    status: &str,
    error: Option<&str>,
) -> Result<Value, SessionError> {
    let report = {
        let mut st = shared.lock();
        st.timings.total_s = start.elapsed().as_secs_f64();
        if st.phase != Phase::Aborted {
            st.phase = Phase::Finished;
        }
        let r = build_report(shared, &st, status, error);
        st.report = Some(r.clone());
        r
    };
    std::fs::create_dir_all(&shared.cfg.out_dir)?;
    write_json(&shared.cfg.out_dir.join("report.json"), &report)?;
    Ok(report)
}

fn write_json(path: &Path, v: &Value) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(v).expect("JSON values serialize");
    std::fs::write(path, text + "\n")
}

fn write_outputs(
    cfg: &SessionConfig,
    gram: &GlobalGram,
    model: Option<&TrainedModel>,
    summary: &Value,
) -> Result<(), SessionError> {
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("gram.bin"))?);
    write_matrix(&mut w, gram.values())?;
    std::io::Write::flush(&mut w)?;
    write_index_map(
        std::fs::File::create(dir.join("gram.indexmap.csv"))?,
        gram.index_map(),
    )?;
    match model {
        Some(m) => {
            let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("model.okra"))?);
            write_model(&mut w, m)?;
            std::io::Write::flush(&mut w)?;
        }
        None => {
            let _ = std::fs::remove_file(dir.join("model.okra"));
        }
    }
    let meta = json!({ "kernel": cfg.kernel, "config": cfg.ml, "summary": summary });
    write_json(&dir.join("model.json"), &meta)?;
    Ok(())
}

//! Read-only HTTP status plane.
//!
//! `GET /healthz`, `/v1/session` and `/v1/report` expose session progress.
//! `GET /v1/gram` returns the Gram matrix in the raw matrix format, but only
//! when the session was started with `release_gram`.

use std::sync::Arc;

use axum::extract::State as AxumState;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::watch;

use crate::server::{Shared, Signal};

pub(crate) async fn serve(
    listener: TcpListener,
    shared: Arc<Shared>,
    mut signal: watch::Receiver<Signal>,
) {
    let app = Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/session", get(session))
        .route("/v1/report", get(report))
        .route("/v1/gram", get(gram))
        .with_state(shared);
    let closed = async move {
        let _ = signal.wait_for(|s| matches!(s, Signal::Closed { .. })).await.is_ok();
    };
    if let Err(e) = axum::serve(listener, app)
        .with_graceful_shutdown(closed)
        .await
    {
        tracing::warn!(error = %e, "status server stopped");
    }
}

async fn session(AxumState(shared): AxumState<Arc<Shared>>) -> Json<serde_json::Value> {
    let st = shared.lock();
    let received: Vec<&String> = st
        .parties
        .iter()
        .filter(|(_, p)| p.submitted)
        .map(|(k, _)| k)
        .collect();
    Json(json!({
        "phase": st.phase,
        "expected_parties": shared.cfg.expected_parties,
        "received_parties": received,
        "missing_parties": shared.missing(&st),
        "total_rows": st.gram.as_ref().map(|g| g.len()),
        "allow_append": shared.cfg.allow_append,
    }))
}

async fn report(AxumState(shared): AxumState<Arc<Shared>>) -> Response {
    match shared.lock().report.clone() {
        Some(r) => Json(r).into_response(),
        None => (StatusCode::NOT_FOUND, "no report yet").into_response(),
    }
}

async fn gram(AxumState(shared): AxumState<Arc<Shared>>) -> Response {
    if !shared.cfg.release_gram {
        return (
            StatusCode::FORBIDDEN,
            "gram release is disabled for this session",
        )
            .into_response();
    }
    let Some(values) = shared.lock().gram.as_ref().map(|g| g.values().clone()) else {
        return (StatusCode::NOT_FOUND, "gram not computed yet").into_response();
    };
    let mut buf = Vec::new();
    if let Err(e) = okra_core::io::write_matrix(&mut buf, &values) {
        return (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response();
    }
    ([(header::CONTENT_TYPE, "application/octet-stream")], buf).into_response()
}

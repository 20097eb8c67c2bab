mod common;

use std::time::Duration;

use common::*;
use okra_core::ml::MlTask;
use okra_core::KernelSpec;
use okra_transport::protocol::{encode_withdraw, frame_message, HEADER_LEN};
use okra_transport::{ErrorCode, FrameKind, Server, SessionConfig, SessionError, DEFAULT_MAX_BODY};
use serde_json::Value;
use tokio::sync::oneshot;

fn config(parties: &[&str], kernel: KernelSpec, dir: &std::path::Path) -> SessionConfig {
    let mut cfg = SessionConfig::new(parties.iter().map(|s| s.to_string()).collect(), kernel, dir);
    cfg.host = "127.0.0.1".into();
    cfg.port = 0;
    cfg.timeout = Duration::from_secs(20);
    cfg
}

fn read_report(dir: &std::path::Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn three_parties_match_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let spec = KernelSpec::Linear;
    let server = Server::bind(config(&["a", "b", "c"], spec.clone(), dir.path()))
        .await
        .unwrap();
    let addr = server.local_addr().unwrap();
    let run = tokio::spawn(server.run(std::future::pending()));

    let s = seed(7);
    let parts: Vec<_> = [("a", 0.1), ("b", 0.2), ("c", 0.3)]
        .iter()
        .map(|(p, salt)| (*p, data(6, 40, *salt)))
        .collect();
    let mut sent = Vec::new();
    for (pid, d) in &parts {
        let body = submission(pid, d, &s, None).encode_body().unwrap();
        let wire = frame_message(FrameKind::Submit, &body, DEFAULT_MAX_BODY)
            .unwrap()
            .len() as u64;
        sent.push((addr, body, wire));
    }
    let acks = futures_join(sent).await;
    for a in &acks {
        assert!(
            matches!(a, (Reply::Ack(ack), wire) if ack.byte_count == *wire && ack.status == "received")
        );
    }

    let out = run.await.unwrap().unwrap();
    let sources: Vec<(&str, &okra_core::DataMatrix)> = parts.iter().map(|(p, d)| (*p, d)).collect();
    let oracle = oracle_for(&out.gram, &sources, &spec);
    assert!(rel_err(out.gram.values(), &oracle) <= 1e-8);

    let report = read_report(dir.path());
    assert_eq!(report["status"], "complete");
    for p in ["a", "b", "c"] {
        assert_eq!(report["parties"][p]["data_frames"], 1);
    }
    let outbound = report["outbound_frames"].as_object().unwrap();
    assert!(outbound.keys().all(|k| k == "ack" || k == "error"));
    assert_eq!(outbound["ack"], 3);
    for f in ["gram.bin", "gram.indexmap.csv", "model.json", "report.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

async fn futures_join(items: Vec<(std::net::SocketAddr, Vec<u8>, u64)>) -> Vec<(Reply, u64)> {
    let handles: Vec<_> = items
        .into_iter()
        .map(|(addr, body, wire)| {
            tokio::spawn(async move {
                (
                    roundtrip(addr, FrameKind::Submit, &body).await.unwrap(),
                    wire,
                )
            })
        })
        .collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

#[tokio::test]
async fn timeout_names_the_missing_party() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(&["a", "b"], KernelSpec::Linear, dir.path());
    cfg.timeout = Duration::from_millis(400);
    let server = Server::bind(cfg).await.unwrap();
    let addr = server.local_addr().unwrap();
    let run = tokio::spawn(server.run(std::future::pending()));

    let body = submission("a", &data(3, 8, 0.0), &seed(1), None)
        .encode_body()
        .unwrap();
    assert!(matches!(
        roundtrip(addr, FrameKind::Submit, &body).await.unwrap(),
        Reply::Ack(_)
    ));

    match run.await.unwrap() {
        Err(SessionError::Timeout { missing }) => assert_eq!(missing, vec!["b".to_string()]),
        other => panic!("expected timeout, got {other:?}"),
    }
    let report = read_report(dir.path());
    assert_eq!(report["status"], "timeout");
    assert_eq!(report["missing_parties"], serde_json::json!(["b"]));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn duplicate_submission_keeps_the_first() {
    let dir = tempfile::tempdir().unwrap();
    let spec = KernelSpec::Rbf {
        gamma: 1.0,
        length_scale: 4.0,
    };
    let server = Server::bind(config(&["a", "b"], spec.clone(), dir.path()))
        .await
        .unwrap();
    let addr = server.local_addr().unwrap();
    let run = tokio::spawn(server.run(std::future::pending()));
    let s = seed(3);
    let (a1, a2, b) = (data(4, 10, 0.0), data(4, 10, 9.0), data(5, 10, 2.0));

    let first = submission("a", &a1, &s, None).encode_body().unwrap();
    assert!(matches!(
        roundtrip(addr, FrameKind::Submit, &first).await.unwrap(),
        Reply::Ack(_)
    ));
    let second = submission("a", &a2, &s, None).encode_body().unwrap();
    let r = roundtrip(addr, FrameKind::Submit, &second).await.unwrap();
    assert_eq!(r.error_code(), Some(ErrorCode::DuplicateSubmission as u16));
    let body = submission("b", &b, &s, None).encode_body().unwrap();
    assert!(matches!(
        roundtrip(addr, FrameKind::Submit, &body).await.unwrap(),
        Reply::Ack(_)
    ));

    let out = run.await.unwrap().unwrap();
    let oracle = oracle_for(&out.gram, &[("a", &a1), ("b", &b)], &spec);
    assert!(rel_err(out.gram.values(), &oracle) <= 1e-8);
    assert_eq!(read_report(dir.path())["parties"]["a"]["data_frames"], 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn width_mismatch_aborts_and_notifies_connected_parties() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::bind(config(&["a", "b", "c"], KernelSpec::Linear, dir.path()))
        .await
        .unwrap();
    let addr = server.local_addr().unwrap();
    let run = tokio::spawn(server.run(std::future::pending()));
    let s = seed(5);

    let body = submission("a", &data(3, 12, 0.0), &s, None)
        .encode_body()
        .unwrap();
    assert!(matches!(
        roundtrip(addr, FrameKind::Submit, &body).await.unwrap(),
        Reply::Ack(_)
    ));
    // c is connected but has not sent anything yet.
    let mut idle = tokio::net::TcpStream::connect(addr).await.unwrap();
    tokio::time::sleep(Duration::from_millis(100)).await;

    let body = submission("b", &data(3, 20, 0.0), &s, None)
        .encode_body()
        .unwrap();
    let r = roundtrip(addr, FrameKind::Submit, &body).await.unwrap();
    assert_eq!(r.error_code(), Some(ErrorCode::WidthMismatch as u16));
    let r = read_reply(&mut idle).await.unwrap();
    assert_eq!(r.error_code(), Some(ErrorCode::SessionAborted as u16));

    assert!(matches!(
        run.await.unwrap(),
        Err(SessionError::WidthMismatch(_))
    ));
    assert_eq!(read_report(dir.path())["status"], "aborted");
}

#[tokio::test]
async fn unknown_party_and_bad_requests_get_error_frames() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::bind(config(&["a"], KernelSpec::Linear, dir.path()))
        .await
        .unwrap();
    let addr = server.local_addr().unwrap();
    let (tx, rx) = oneshot::channel::<()>();
    let run = tokio::spawn(server.run(async {
        let _ = rx.await;
    }));
    let s = seed(2);

    let body = submission("mallory", &data(3, 8, 0.0), &s, None)
        .encode_body()
        .unwrap();
    let r = roundtrip(addr, FrameKind::Submit, &body).await.unwrap();
    assert_eq!(r.error_code(), Some(ErrorCode::UnknownParty as u16));

    let body = submission("a", &data(1, 8, 0.0), &s, None)
        .encode_body()
        .unwrap();
    let r = roundtrip(addr, FrameKind::Submit, &body).await.unwrap();
    assert_eq!(r.error_code(), Some(ErrorCode::TooFewRows as u16));

    let r = roundtrip(addr, FrameKind::Ack, b"").await.unwrap();
    assert_eq!(r.error_code(), Some(ErrorCode::UnexpectedKind as u16));

    let r = roundtrip(addr, FrameKind::Withdraw, &encode_withdraw("a").unwrap())
        .await
        .unwrap();
    assert_eq!(r.error_code(), Some(ErrorCode::NotAccepting as u16));

    let mut frame = frame_message(FrameKind::Submit, b"xyz", DEFAULT_MAX_BODY).unwrap();
    frame[4] = 9;
    let r = send_raw(addr, &frame).await.unwrap();
    assert_eq!(r.error_code(), Some(ErrorCode::VersionMismatch as u16));

    let mut frame = frame_message(FrameKind::Submit, b"xyz", DEFAULT_MAX_BODY).unwrap();
    frame[HEADER_LEN] ^= 1;
    let r = send_raw(addr, &frame).await.unwrap();
    assert_eq!(r.error_code(), Some(ErrorCode::DigestMismatch as u16));

    let _ = tx.send(());
    assert!(matches!(run.await.unwrap(), Err(SessionError::Aborted(_))));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn append_and_withdraw_track_a_from_scratch_gram() {
    let dir = tempfile::tempdir().unwrap();
    let spec = KernelSpec::Polynomial { degree: 2 };
    let mut cfg = config(&["a", "b"], spec.clone(), dir.path());
    cfg.allow_append = true;
    cfg.ml = MlTask::GramOnly;
    let server = Server::bind(cfg).await.unwrap();
    let addr = server.local_addr().unwrap();
    let (tx, rx) = oneshot::channel::<()>();
    let run = tokio::spawn(server.run(async {
        let _ = rx.await;
    }));
    let s = seed(9);
    let (a, extra, b) = (data(4, 10, 0.0), data(3, 10, 5.0), data(4, 10, 1.0));

    for (pid, d) in [("a", &a), ("b", &b)] {
        let body = submission(pid, d, &s, None).encode_body().unwrap();
        assert!(matches!(
            roundtrip(addr, FrameKind::Submit, &body).await.unwrap(),
            Reply::Ack(_)
        ));
    }
    let body = submission("a", &extra, &s, None).encode_body().unwrap();
    let mut appended = false;
    for _ in 0..200 {
        match roundtrip(addr, FrameKind::Append, &body).await.unwrap() {
            Reply::Ack(ack) => {
                assert_eq!(ack.status, "appended");
                appended = true;
                break;
            }
            Reply::Error(e) if e.code == ErrorCode::NotAccepting as u16 => {
                tokio::time::sleep(Duration::from_millis(20)).await;
            }
            Reply::Error(e) => panic!("append rejected: {e:?}"),
        }
    }
    assert!(appended);
    let r = roundtrip(addr, FrameKind::Withdraw, &encode_withdraw("b").unwrap())
        .await
        .unwrap();
    assert!(
        matches!(r, Reply::Ack(ref ack) if ack.status == "withdrawn"),
        "{r:?}"
    );

    let _ = tx.send(());
    let out = run.await.unwrap().unwrap();
    assert_eq!(out.gram.len(), 7);
    assert_eq!(out.gram.owners(), vec!["a"]);
    let full_a = okra_core::DataMatrix::vstack(&[&a, &extra]);
    let oracle = oracle_for(&out.gram, &[("a", &full_a)], &spec);
    assert!(rel_err(out.gram.values(), &oracle) <= 1e-8);
    let report = read_report(dir.path());
    assert_eq!(report["parties"]["b"]["withdrawn"], true);
    assert_eq!(report["total_rows"], 7);
}

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use crewflow::service::{Service, ServiceConfig, StreamEvent};
use crewflow::store::{RecordKind, Store};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower::ServiceExt;

fn service(review_window_ms: u64) -> Service {
    let config =
        ServiceConfig { tick: Duration::from_millis(5), review_window: Duration::from_millis(review_window_ms) };
    Service::new(Store::in_memory(), config)
}

async fn send(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
    headers: &[(&str, &str)],
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let body = body.map_or_else(Body::empty, |b| Body::from(b.to_string()));
    let res = app.clone().oneshot(req.header("content-type", "application/json").body(body).unwrap()).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = send(app, method, uri, body, &[]).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[derive(Debug, PartialEq)]
struct Message {
    id: Option<u64>,
    event: String,
    data: String,
}

async fn stream(app: &Router, uri: &str, headers: &[(&str, &str)]) -> Vec<Message> {
    let (status, bytes) = send(app, "GET", uri, None, headers).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(bytes).unwrap();
    text.split("\n\n")
        .filter(|chunk| chunk.lines().any(|l| l.starts_with("data:")))
        .map(|chunk| {
            let field =
                |name: &str| chunk.lines().find_map(|l| l.strip_prefix(name)).map(|v| v.trim_start().to_owned());
            Message {
                id: field("id:").map(|v| v.parse().unwrap()),
                event: field("event:").unwrap_or_default(),
                data: field("data:").unwrap_or_default(),
            }
        })
        .collect()
}

async fn start(app: &Router, body: Value) -> String {
    let (status, created) = call(app, "POST", "/runs", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{created}");
    assert_eq!(created["status"], "running");
    created["run_id"].as_str().unwrap().to_owned()
}

async fn finished(svc: &Service, app: &Router, run_id: &str) -> Value {
    if tokio::time::timeout(Duration::from_secs(20), svc.wait_closed(run_id)).await.is_err() {
        let (_, state) = call(app, "GET", &format!("/runs/{run_id}"), None).await;
        panic!("{run_id} never closed: {}", state["error"]);
    }
    call(app, "GET", &format!("/runs/{run_id}"), None).await.1
}

#[tokio::test(flavor = "multi_thread")]
async fn lifecycle_and_validation() {
    let svc = service(0);
    let app = svc.router();
    let run_id = start(&app, json!({ "pipeline": "film", "clock": "wall" })).await;
    let state = finished(&svc, &app, &run_id).await;
    assert_eq!(state["status"], "completed");

    let cyclic = json!({ "pipeline": { "name": "loop", "events": [
        { "id": "a", "role": "generic", "deps": ["b"] },
        { "id": "b", "role": "generic", "deps": ["a"] },
    ] } });
    let (status, body) = call(&app, "POST", "/runs", Some(cyclic)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("a -> b -> a"), "{body}");
    let (status, _) = call(&app, "POST", "/runs", Some(json!({ "pipeline": "opera" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/runs", Some(json!({ "mode": "parallel" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    assert_eq!(call(&app, "GET", "/runs/nope", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/runs/nope/gantt", None).await.0, StatusCode::NOT_FOUND);
    let (_, list) = call(&app, "GET", "/runs", None).await;
    assert_eq!(list["runs"][0]["run_id"], run_id.as_str());
}

#[tokio::test(flavor = "multi_thread")]
async fn stream_replays_then_ends() {
    let svc = service(0);
    let app = svc.router();
    let run_id = start(&app, json!({ "pipeline": "film" })).await;
    finished(&svc, &app, &run_id).await;
    let log = svc.store().log(&run_id).unwrap();

    let full = stream(&app, &format!("/runs/{run_id}/stream?from_seq=0"), &[]).await;
    let (end, records) = full.split_last().unwrap();
    assert_eq!(end.event, "end");
    assert_eq!(records.len(), log.len());
    for (m, r) in records.iter().zip(log.records()) {
        assert_eq!(m.id, Some(r.seq));
        let event: StreamEvent = serde_json::from_str(&m.data).unwrap();
        assert_eq!(&event.record, r);
    }
    // The wait at t=37 has nothing ready; every dispatch carries a Gantt row.
    let events: Vec<StreamEvent> = records.iter().map(|m| serde_json::from_str(&m.data).unwrap()).collect();
    let wait = events.iter().find(|e| e.record.kind == RecordKind::Wait).unwrap();
    assert!(wait.ready.is_empty());
    assert!(events.iter().filter(|e| e.record.kind == RecordKind::Enqueue).all(|e| e.gantt.is_some()));

    let resumed = stream(&app, &format!("/runs/{run_id}/stream?from_seq=5"), &[]).await;
    assert_eq!(resumed[0].id, Some(5));
    assert_eq!(&resumed[..], &full[5..]);
    let by_header = stream(&app, &format!("/runs/{run_id}/stream"), &[("last-event-id", "4")]).await;
    assert_eq!(by_header, resumed);
}

#[tokio::test(flavor = "multi_thread")]
async fn live_streams_agree_with_the_log() {
    let svc = service(0);
    let app = svc.router();
    let run_id = start(&app, json!({ "pipeline": "film", "clock": "wall", "tick_ms": 5 })).await;
    let uri = format!("/runs/{run_id}/stream");
    let (a, b) = tokio::join!(stream(&app, &uri, &[]), stream(&app, &uri, &[]));
    assert_eq!(a, b);
    let ids: Vec<u64> = a.iter().filter_map(|m| m.id).collect();
    let log = svc.store().log(&run_id).unwrap();
    assert_eq!(ids, (0..log.len() as u64).collect::<Vec<_>>());
    let streamed: Vec<StreamEvent> =
        a.iter().filter(|m| m.id.is_some()).map(|m| serde_json::from_str(&m.data).unwrap()).collect();
    assert!(streamed.iter().map(|e| &e.record).eq(log.records()));
}

async fn when_done(app: &Router, run_id: &str, event: &str) -> Value {
    for _ in 0..2000 {
        let (_, state) = call(app, "GET", &format!("/runs/{run_id}"), None).await;
        if state["latest_report"]["done"].get(event).is_some() {
            return state;
        }
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
    panic!("{event} never finished");
}

#[tokio::test(flavor = "multi_thread")]
async fn live_reject_revokes_and_reruns() {
    let svc = service(300);
    let app = svc.router();
    let run_id = start(&app, json!({ "pipeline": "film", "clock": "wall", "tick_ms": 10 })).await;
    when_done(&app, &run_id, "dialogue").await;
    let feedback = json!({ "target": "dialogue", "kind": "detailed", "verdict": "reject", "note": "tighter", "amendments": { "tone": "dry" } });
    let (status, ack) = call(&app, "POST", &format!("/runs/{run_id}/feedback"), Some(feedback)).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{ack}");
    let id = ack["feedback_id"].as_str().unwrap().to_owned();
    let approve = json!({ "target": "script", "kind": "yes_no", "verdict": "approve" });
    let (status, ack2) = call(&app, "POST", &format!("/runs/{run_id}/feedback"), Some(approve)).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let id2 = ack2["feedback_id"].as_str().unwrap().to_owned();
    assert_ne!(id, id2);

    let state = finished(&svc, &app, &run_id).await;
    assert_eq!(state["status"], "completed");
    let log = svc.store().log(&run_id).unwrap();
    for fid in [&id, &id2] {
        let n = log
            .records()
            .iter()
            .filter(|r| r.kind == RecordKind::Feedback && r.payload["feedback_id"] == fid.as_str())
            .count();
        assert_eq!(n, 1, "{fid} logged {n} times");
    }
    let revokes: Vec<_> = log.records().iter().filter(|r| r.kind == RecordKind::Revoke).collect();
    assert!(revokes.iter().any(|r| r.event_id.as_ref().unwrap().as_str() == "dialogue"));
    assert!(revokes.iter().all(|r| r.payload["reason"] == id.as_str()), "approval revoked something");
    assert_eq!(state["latest_report"]["done"]["dialogue"]["attempt"], 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn feedback_errors() {
    let svc = service(0);
    let app = svc.router();
    let fb = json!({ "target": "dialogue", "kind": "yes_no", "verdict": "reject" });

    let virtual_run = start(&app, json!({ "pipeline": "film" })).await;
    finished(&svc, &app, &virtual_run).await;
    let (status, _) = call(&app, "POST", &format!("/runs/{virtual_run}/feedback"), Some(fb.clone())).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let wall = start(&app, json!({ "pipeline": "film", "clock": "wall", "tick_ms": 1 })).await;
    finished(&svc, &app, &wall).await;
    let (status, body) = call(&app, "POST", &format!("/runs/{wall}/feedback"), Some(fb.clone())).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("closed"), "{body}");

    let unknown = json!({ "target": "ghost", "kind": "yes_no", "verdict": "reject" });
    assert_eq!(
        call(&app, "POST", &format!("/runs/{wall}/feedback"), Some(unknown)).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let noted = json!({ "target": "dialogue", "kind": "yes_no", "verdict": "reject", "note": "no notes allowed" });
    assert_eq!(call(&app, "POST", &format!("/runs/{wall}/feedback"), Some(noted)).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", "/runs/nope/feedback", Some(fb)).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn artifacts_and_gantt() {
    let svc = service(0);
    let app = svc.router();
    let run_id = start(&app, json!({ "pipeline": "film", "feedback_trace": { "feedback": [
        { "trigger": { "after": "dialogue" }, "target": "dialogue", "kind": "critical", "verdict": "reject", "note": "again" }
    ] } }))
    .await;
    let state = finished(&svc, &app, &run_id).await;
    let artifact_id = state["latest_report"]["done"]["post"]["artifact_id"].as_str().unwrap().to_owned();

    let (status, meta) = call(&app, "GET", &format!("/runs/{run_id}/artifacts/{artifact_id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(meta["kind"], "final_cut");
    let (status, raw) = send(&app, "GET", &format!("/runs/{run_id}/artifacts/{artifact_id}?raw=true"), None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(hex::encode(Sha256::digest(&raw)), meta["content_hash"].as_str().unwrap());
    assert_eq!(serde_json::from_slice::<Value>(&raw).unwrap(), meta["content"]);
    let missing = format!("/runs/{run_id}/artifacts/nothing");
    assert_eq!(call(&app, "GET", &missing, None).await.0, StatusCode::NOT_FOUND);

    let (_, gantt) = call(&app, "GET", &format!("/runs/{run_id}/gantt"), None).await;
    let rows = gantt["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    assert_eq!(rows.iter().filter(|r| r["revoked"] == true).count(), 1);
    assert_eq!(gantt["makespan"], 68);

    let (_, page) = call(&app, "GET", &format!("/runs/{run_id}/log?from_seq=3&limit=4"), None).await;
    let seqs: Vec<u64> = page["records"].as_array().unwrap().iter().map(|r| r["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, vec![3, 4, 5, 6]);
    assert_eq!(page["next_seq"], 7);
}

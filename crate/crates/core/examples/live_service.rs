//! Start the HTTP service, launch a wall-clock run, reject the dialogue as
//! soon as it is done, then watch the revocation land in the log.
//!
//! Uses a bare HTTP/1.1 client so the example has no client dependency.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use crewflow::service::{serve, Service, ServiceConfig};
use crewflow::store::Store;
use serde_json::{json, Value};

fn request(addr: SocketAddr, method: &str, path: &str, body: Option<&Value>) -> (u16, Value) {
    let mut stream = TcpStream::connect(addr).unwrap();
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let status = raw[9..12].parse().unwrap();
    let payload = raw.split_once("\r\n\r\n").map(|(_, b)| b).unwrap_or("");
    (status, serde_json::from_str(payload).unwrap_or(Value::Null))
}

fn main() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let config = ServiceConfig { tick: Duration::from_millis(10), review_window: Duration::from_millis(200) };
    rt.spawn(serve(listener, Service::new(Store::in_memory(), config)));
    println!("service on http://{addr}");

    let (status, created) = request(addr, "POST", "/runs", Some(&json!({ "pipeline": "film", "clock": "wall" })));
    let run_id = created["run_id"].as_str().unwrap().to_owned();
    println!("POST /runs -> {status} {created}");

    let mut rejected = false;
    loop {
        let (_, state) = request(addr, "GET", &format!("/runs/{run_id}"), None);
        let dialogue_done = state["latest_report"]["done"].get("dialogue").is_some();
        if dialogue_done && !rejected {
            let feedback = json!({
                "target": "dialogue", "kind": "detailed", "verdict": "reject",
                "note": "more tension", "amendments": { "tone": "darker" }
            });
            let (status, ack) = request(addr, "POST", &format!("/runs/{run_id}/feedback"), Some(&feedback));
            println!("t={} feedback -> {status} {ack}", state["latest_report"]["time"]);
            rejected = true;
        }
        if state["status"] != "running" {
            println!("run {} with makespan {}", state["status"], state["makespan"]);
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }

    let (_, log) = request(addr, "GET", &format!("/runs/{run_id}/log"), None);
    for r in log["records"].as_array().unwrap() {
        if matches!(r["kind"].as_str(), Some("feedback" | "revoke")) {
            println!("seq {} t={} {} {}", r["seq"], r["time"], r["kind"], r["payload"]);
        }
    }
    let (_, gantt) = request(addr, "GET", &format!("/runs/{run_id}/gantt"), None);
    println!("{} gantt rows", gantt["rows"].as_array().unwrap().len());
}

use std::path::{Path, PathBuf};
use std::time::Duration;

use capaplan_service::{start, ProviderConfig, ServiceConfig, ServiceError};
use futures::StreamExt;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

const DRILL_7: &str = "Drill a 7 mm deep hole into the workpiece at station 3.";
const DRILL_2: &str = "Please drill a 2 mm hole into the workpiece at station 3.";

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Config over a private copy of the plant model so persistence can be observed.
fn config(dir: &Path, scripts: &[&str], persist: bool) -> ServiceConfig {
    let store_path = dir.join("plant.json");
    std::fs::copy(fixtures().join("models/plant.json"), &store_path).unwrap();
    let scripts: Vec<PathBuf> = scripts.iter().map(|s| fixtures().join("scripts").join(format!("{s}.json"))).collect();
    let text = json!({ "store_path": store_path, "persist": persist, "provider": {"kind": "scripted", "scripts": scripts}, "port": 0 });
    let path = dir.join("service.json");
    std::fs::write(&path, text.to_string()).unwrap();
    ServiceConfig::load(&path).unwrap()
}

struct Server {
    base: String,
    http: Client,
    _dir: tempfile::TempDir,
    store_path: PathBuf,
}

impl Server {
    async fn start(scripts: &[&str]) -> Server {
        Server::start_with(scripts, false).await
    }

    async fn start_with(scripts: &[&str], persist: bool) -> Server {
        let dir = tempfile::tempdir().unwrap();
        let config = config(dir.path(), scripts, persist);
        let (addr, _) = start(&config).await.unwrap();
        Server { base: format!("http://{addr}"), http: Client::new(), store_path: config.store_path.clone(), _dir: dir }
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status(), r.json().await.unwrap_or(Value::Null))
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self.http.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        (r.status(), r.json().await.unwrap_or(Value::Null))
    }

    async fn session(&self) -> String {
        let (status, body) = self.post("/sessions", json!({})).await;
        assert_eq!(status, StatusCode::CREATED);
        body["id"].as_str().unwrap().to_string()
    }

    async fn approve(&self, id: &str) -> Value {
        let (_, pending) = self.get(&format!("/sessions/{id}/hitl")).await;
        let (status, state) = self
            .post(&format!("/sessions/{id}/hitl"), json!({"request_id": pending["id"], "verdict": "approve"}))
            .await;
        assert_eq!(status, StatusCode::OK, "{state}");
        state
    }
}

#[tokio::test]
async fn create_session_returns_201_and_state() {
    let s = Server::start(&["common"]).await;
    let (status, body) = s.post("/sessions", json!({})).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = body["id"].as_str().unwrap();
    assert_eq!(body["state"]["status"], "awaiting_user");
    let (status, state) = s.get(&format!("/sessions/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state["id"], id);
    let (_, list) = s.get("/sessions").await;
    assert_eq!(list, json!([{"id": id, "status": "awaiting_user"}]));
}

#[tokio::test]
async fn unknown_session_is_404() {
    let s = Server::start(&["common"]).await;
    let (status, body) = s.post("/sessions/nope/messages", json!({"text": "hello"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nope"));
    assert_eq!(s.get("/sessions/nope").await.0, StatusCode::NOT_FOUND);
    assert_eq!(s.get("/sessions/nope/hitl").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn stale_decision_is_409() {
    let s = Server::start(&["common", "sat-01"]).await;
    let id = s.session().await;
    s.post(&format!("/sessions/{id}/messages"), json!({"text": DRILL_7})).await;
    let (status, _) =
        s.post(&format!("/sessions/{id}/hitl"), json!({"request_id": "old", "verdict": "approve"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    // a message while a decision is pending is refused the same way
    let (status, _) = s.post(&format!("/sessions/{id}/messages"), json!({"text": "again"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn planning_round_trip_over_http() {
    let s = Server::start(&["common", "sat-01"]).await;
    let id = s.session().await;
    let (status, state) = s.post(&format!("/sessions/{id}/messages"), json!({"text": DRILL_7})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state["status"], "awaiting_hitl");
    let (_, pending) = s.get(&format!("/sessions/{id}/hitl")).await;
    assert_eq!(pending["checkpoint"], "confirm_goal");
    let state = s.approve(&id).await;
    assert_eq!(state["status"], "done");
    assert_eq!(s.get(&format!("/sessions/{id}/hitl")).await.1, Value::Null);

    // GET endpoints leave the session untouched
    let transcript = |s: &Server| {
        let url = format!("{}/sessions/{id}/transcript", s.base);
        let http = s.http.clone();
        async move { http.get(url).send().await.unwrap().text().await.unwrap() }
    };
    let before = transcript(&s).await;
    s.get(&format!("/sessions/{id}")).await;
    s.get(&format!("/sessions/{id}/hitl")).await;
    assert_eq!(transcript(&s).await, before);
    let events = capaplan_core::workflow::from_jsonl(&before).unwrap();
    assert_eq!(serde_json::to_value(capaplan_core::workflow::reconstruct(&events)).unwrap(), state);
    assert_eq!(s.get("/changes").await.1, json!([]));
}

#[tokio::test]
async fn approved_repair_changes_model_and_is_persisted() {
    let s = Server::start_with(&["common", "ap-02"], true).await;
    let id = s.session().await;
    s.post(&format!("/sessions/{id}/messages"), json!({"text": DRILL_2})).await;
    s.approve(&id).await;
    let (_, pending) = s.get(&format!("/sessions/{id}/hitl")).await;
    assert_eq!(pending["checkpoint"], "approve_adaptation");
    let state = s.approve(&id).await;
    assert_eq!(state["status"], "done");

    let (_, changes) = s.get("/changes").await;
    let changes = changes.as_array().unwrap();
    assert!(!changes.is_empty());
    assert!(changes.iter().all(|c| c["approval"] == pending["id"]));

    let model = s.http.get(format!("{}/model?format=turtle", s.base)).send().await.unwrap().text().await.unwrap();
    let parsed = capaplan_core::model::parse_model(&model, capaplan_core::model::ModelFormat::TurtleSubset).unwrap();
    let on_disk = std::fs::read_to_string(&s.store_path).unwrap();
    let persisted = capaplan_core::model::parse_model(&on_disk, capaplan_core::model::ModelFormat::JsonForm).unwrap();
    assert_eq!(capaplan_core::model::rdf::canonical(&parsed), capaplan_core::model::rdf::canonical(&persisted));
    assert!(on_disk != std::fs::read_to_string(fixtures().join("models/plant.json")).unwrap());
}

#[tokio::test]
async fn denied_repair_changes_nothing() {
    let s = Server::start_with(&["common", "ap-02"], true).await;
    let id = s.session().await;
    s.post(&format!("/sessions/{id}/messages"), json!({"text": DRILL_2})).await;
    s.approve(&id).await;
    let (_, pending) = s.get(&format!("/sessions/{id}/hitl")).await;
    let (status, state) =
        s.post(&format!("/sessions/{id}/hitl"), json!({"request_id": pending["id"], "verdict": "deny"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state["status"], "awaiting_user");
    assert_eq!(s.get("/changes").await.1, json!([]));
    let original = std::fs::read_to_string(fixtures().join("models/plant.json")).unwrap();
    assert_eq!(std::fs::read_to_string(&s.store_path).unwrap(), original);
}

#[tokio::test]
async fn model_format_is_checked() {
    let s = Server::start(&["common"]).await;
    assert_eq!(s.get("/model").await.0, StatusCode::OK);
    assert_eq!(s.get("/model?format=xml").await.0, StatusCode::BAD_REQUEST);
}

/// Reads SSE `event:` names until `stop` appears or the deadline passes.
async fn read_events(resp: reqwest::Response, stop: &str) -> Vec<String> {
    let mut names = Vec::new();
    let mut buf = String::new();
    let mut body = resp.bytes_stream();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(20);
    while let Ok(Some(chunk)) = tokio::time::timeout_at(deadline, body.next()).await {
        buf.push_str(&String::from_utf8_lossy(&chunk.unwrap()));
        while let Some(end) = buf.find("\n\n") {
            let frame: String = buf.drain(..end + 2).collect();
            if let Some(name) = frame.lines().find_map(|l| l.strip_prefix("event:")) {
                names.push(name.trim().to_string());
            }
        }
        if names.iter().any(|n| n == stop) {
            break;
        }
    }
    names
}

#[tokio::test]
async fn event_stream_replays_then_follows() {
    let s = Server::start(&["common", "sat-01"]).await;
    let id = s.session().await;
    let resp = s.http.get(format!("{}/sessions/{id}/events", s.base)).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
    let reader = tokio::spawn(read_events(resp, "hitl_requested"));
    s.post(&format!("/sessions/{id}/messages"), json!({"text": DRILL_7})).await;
    let names = reader.await.unwrap();
    assert_eq!(names.first().map(String::as_str), Some("session_started"));
    assert!(names.contains(&"user_turn".to_string()), "{names:?}");
    assert!(names.contains(&"hitl_requested".to_string()), "{names:?}");

    // a late subscriber gets the whole log
    let resp = s.http.get(format!("{}/sessions/{id}/events", s.base)).send().await.unwrap();
    let replay = read_events(resp, "hitl_requested").await;
    assert_eq!(replay, names);
}

#[test]
fn config_resolves_relative_paths_and_rejects_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"store_path": "m.json", "provider": {"kind": "scripted", "scripts": ["s.json"]}}"#).unwrap();
    let c = ServiceConfig::load(&path).unwrap();
    assert_eq!(c.store_path, dir.path().join("m.json"));
    assert_eq!(c.provider, ProviderConfig::Scripted { scripts: vec![dir.path().join("s.json")] });
    assert_eq!((c.port, c.max_iterations), (8080, 5));

    std::fs::write(&path, r#"{"store_path": "m.json", "provider": {"kind": "scripted", "scripts": []}, "prot": 1}"#).unwrap();
    assert!(matches!(ServiceConfig::load(&path), Err(ServiceError::Config(_))));
    std::fs::write(&path, r#"{"store_path": "m.json", "provider": {"kind": "scripted", "scripts": []}, "max_iterations": 0}"#)
        .unwrap();
    assert!(matches!(ServiceConfig::load(&path), Err(ServiceError::Config(_))));
}

#[tokio::test]
async fn busy_port_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), &["common"], false);
    let taken = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    c.port = taken.local_addr().unwrap().port();
    assert!(matches!(start(&c).await, Err(ServiceError::Bind { .. })));
}

#[tokio::test]
async fn missing_store_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), &["common"], false);
    c.store_path = dir.path().join("absent.json");
    assert!(matches!(start(&c).await, Err(ServiceError::Config(_))));
}

#[test]
fn shipped_example_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/service.example.json");
    let c = ServiceConfig::load(&path).unwrap();
    assert!(c.store_path.exists());
    let ProviderConfig::Scripted { scripts } = &c.provider else { panic!() };
    assert!(scripts.iter().all(|s| s.exists()));
    c.build_provider().unwrap();
}

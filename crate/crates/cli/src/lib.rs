//! HTTP front end for the planning workflow.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | start a session, 201 |
//! | GET | `/sessions` | list session ids and status |
//! | GET | `/sessions/{id}` | session state |
//! | GET | `/sessions/{id}/transcript` | event log, one JSON object per line |
//! | GET | `/sessions/{id}/events` | event stream (SSE); replays the log first |
//! | POST | `/sessions/{id}/messages` | `{"text": ..}` |
//! | GET | `/sessions/{id}/hitl` | pending request or `null` |
//! | POST | `/sessions/{id}/hitl` | `{"request_id", "verdict", "payload"?, "actor"?}` |
//! | GET | `/model?format=json\|turtle` | current capability model |
//! | GET | `/changes` | change log |
//!
//! Unknown sessions answer 404. Stale decisions and inputs the session cannot
//! take in its current status answer 409.

mod config;

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use capaplan_core::clock::LogicalClock;
use capaplan_core::model::{serialize_model, ModelFormat};
use capaplan_core::store::GraphStore;
use capaplan_core::workflow::{to_jsonl, Engine, Event, Input, Session, SessionState, Verdict, WorkflowError};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast;

pub use config::{ProviderConfig, ServiceConfig};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {detail}")]
    Bind { addr: String, detail: String },
}

/// An event as published to stream subscribers.
#[derive(Debug, Clone)]
struct Published {
    session: String,
    index: usize,
    event: Event,
}

pub struct AppState {
    engine: Engine,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    feed: broadcast::Sender<Published>,
    persist: Option<PathBuf>,
}

impl AppState {
    pub fn new(engine: Engine, persist: Option<PathBuf>) -> Arc<Self> {
        let (feed, _) = broadcast::channel(1024);
        Arc::new(AppState { engine, sessions: RwLock::default(), feed, persist })
    }

    pub fn from_config(config: &ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        let store = GraphStore::open(&config.store_path, Arc::new(LogicalClock::default()))
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        let engine = Engine::new(store, config.build_provider()?, config.workflow());
        Ok(AppState::new(engine, config.persist.then(|| config.store_path.clone())))
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no session `{id}`")))
    }

    fn publish(&self, session: &Session, from: usize) {
        for (index, event) in session.events.iter().enumerate().skip(from) {
            // no subscribers is fine
            let _ = self.feed.send(Published { session: session.state.id.clone(), index, event: event.clone() });
        }
    }
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        ApiError(StatusCode::CONFLICT, e.to_string())
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/transcript", get(get_transcript))
        .route("/sessions/{id}/events", get(event_stream))
        .route("/sessions/{id}/messages", axum::routing::post(post_message))
        .route("/sessions/{id}/hitl", get(get_hitl).post(post_decision))
        .route("/model", get(get_model))
        .route("/changes", get(get_changes))
        .with_state(app)
}

/// Binds the configured address and serves in the background.
pub async fn start(config: &ServiceConfig) -> Result<(SocketAddr, tokio::task::JoinHandle<()>), ServiceError> {
    let app = AppState::from_config(config)?;
    let addr = format!("{}:{}", config.bind, config.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| ServiceError::Bind { addr: addr.clone(), detail: e.to_string() })?;
    let local = listener.local_addr().map_err(|e| ServiceError::Bind { addr, detail: e.to_string() })?;
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router(app)).await {
            eprintln!("server stopped: {e}");
        }
    });
    Ok((local, handle))
}

async fn list_sessions(State(app): State<Arc<AppState>>) -> Json<Value> {
    let sessions: Vec<_> = app.sessions.read().unwrap().values().cloned().collect();
    let rows = tokio::task::spawn_blocking(move || {
        sessions
            .iter()
            .map(|s| {
                let s = s.lock().unwrap();
                json!({ "id": s.state.id, "status": s.state.status })
            })
            .collect::<Vec<_>>()
    })
    .await
    .unwrap_or_default();
    Json(Value::Array(rows))
}

async fn create_session(State(app): State<Arc<AppState>>) -> impl IntoResponse {
    let session = app.engine.start_session();
    app.publish(&session, 0);
    let id = session.state.id.clone();
    let body = json!({ "id": id, "state": session.state });
    app.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(session)));
    (StatusCode::CREATED, Json(body))
}

/// Runs `f` against the locked session off the async workers.
async fn with_session<T: Send + 'static>(
    app: &Arc<AppState>,
    id: &str,
    f: impl FnOnce(&AppState, &mut Session) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let session = app.session(id)?;
    let app = app.clone();
    tokio::task::spawn_blocking(move || {
        let mut s = session.lock().unwrap();
        f(&app, &mut s)
    })
    .await
    .map_err(internal)?
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    with_session(&app, &id, |_, s| Ok(Json(s.state.clone()))).await
}

async fn get_transcript(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let text = with_session(&app, &id, |_, s| Ok(to_jsonl(&s.events))).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

async fn step(app: Arc<AppState>, id: String, input: Input) -> Result<Json<SessionState>, ApiError> {
    with_session(&app, &id, move |app, s| {
        let before = s.events.len();
        let changes = app.engine.store().change_log().len();
        let outcome = app.engine.step(s, input);
        app.publish(s, before);
        if let Some(path) = &app.persist {
            if app.engine.store().change_log().len() != changes {
                app.engine.store().persist(path).map_err(internal)?;
            }
        }
        outcome?;
        Ok(Json(s.state.clone()))
    })
    .await
}

#[derive(Deserialize)]
struct MessageBody {
    text: String,
}

async fn post_message(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<MessageBody>,
) -> Result<Json<SessionState>, ApiError> {
    step(app, id, Input::Message { text: body.text }).await
}

#[derive(Deserialize)]
struct DecisionBody {
    request_id: String,
    verdict: Verdict,
    #[serde(default)]
    payload: Option<Value>,
    #[serde(default)]
    actor: Option<String>,
}

async fn get_hitl(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    with_session(&app, &id, |_, s| Ok(Json(json!(s.state.pending_hitl)))).await
}

async fn post_decision(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<DecisionBody>,
) -> Result<Json<SessionState>, ApiError> {
    let input = Input::Decision {
        request_id: body.request_id,
        verdict: body.verdict,
        payload: body.payload,
        actor: body.actor.unwrap_or_else(|| "user".into()),
    };
    step(app, id, input).await
}

fn sse_event(index: usize, event: &Event) -> SseEvent {
    let value = serde_json::to_value(event).unwrap_or(Value::Null);
    let name = value.get("event").and_then(Value::as_str).unwrap_or("event").to_string();
    SseEvent::default().id(index.to_string()).event(name).data(value.to_string())
}

async fn event_stream(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    // Subscribe under the session lock so nothing falls between backlog and feed.
    let (backlog, rx) = with_session(&app, &id, |app, s| Ok((s.events.clone(), app.feed.subscribe()))).await?;
    let seen = backlog.len();
    let replay = stream::iter(backlog.into_iter().enumerate().map(|(i, e)| Ok(sse_event(i, &e))));
    let live = stream::unfold(rx, move |mut rx| {
        let id = id.clone();
        async move {
            loop {
                match rx.recv().await {
                    Ok(p) if p.session == id && p.index >= seen => return Some((Ok(sse_event(p.index, &p.event)), rx)),
                    Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => return None,
                }
            }
        }
    });
    Ok(Sse::new(replay.chain(live)).keep_alive(KeepAlive::default()))
}

#[derive(Deserialize)]
struct ModelQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn get_model(State(app): State<Arc<AppState>>, Query(q): Query<ModelQuery>) -> Result<Response, ApiError> {
    let (format, mime) = match q.format.as_deref() {
        None | Some("json") => (ModelFormat::JsonForm, "application/json"),
        Some("turtle") | Some("ttl") => (ModelFormat::TurtleSubset, "text/turtle"),
        Some(other) => return Err(ApiError(StatusCode::BAD_REQUEST, format!("unknown format `{other}`"))),
    };
    let model = app.engine.store().materialize().map_err(internal)?;
    Ok(([(header::CONTENT_TYPE, mime)], serialize_model(&model, format)).into_response())
}

async fn get_changes(State(app): State<Arc<AppState>>) -> Json<Value> {
    Json(json!(app.engine.store().change_log()))
}

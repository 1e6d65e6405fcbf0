//! HTTP and websocket endpoints.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{close_code, CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pitchfork_assist::harness::{builtin, log_to_csv_string, Command, ScenarioScript};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;
use tokio::task::JoinHandle;

use crate::protocol::{ClientMessage, CommandRecord, CreateSession, ErrorBody, ServerMessage, SessionInfo};
use crate::session::{self, SessionHandle};

/// Server-wide settings.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Scenario used when a create request names none. Its human program is
    /// ignored: the live pedal power starts at 0 W.
    pub base: ScenarioScript,
    pub max_sessions: usize,
    pub time_scale: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            base: ScenarioScript::new("live"),
            max_sessions: 8,
            time_scale: 1.0,
        }
    }
}

struct Entry {
    handle: SessionHandle,
    task: JoinHandle<()>,
}

struct Inner {
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Entry>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self(Arc::new(Inner {
            config,
            sessions: Mutex::new(HashMap::new()),
        }))
    }

    pub fn active_sessions(&self) -> usize {
        self.0.sessions.lock().unwrap().len()
    }

    fn handle(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.0
            .sessions
            .lock()
            .unwrap()
            .get(id)
            .map(|e| e.handle.clone())
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session '{id}'")))
    }
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody::new(error),
        }
    }

    fn with(status: StatusCode, body: ErrorBody) -> Self {
        Self { status, body }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, e.body_text())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub active_sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session: SessionInfo,
    pub stream: String,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(status).delete(remove))
        .route("/sessions/{id}/commands", post(command))
        .route("/sessions/{id}/stream", get(stream))
        .route("/sessions/{id}/record", get(record))
        .route("/sessions/{id}/log", get(log))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        active_sessions: state.active_sessions(),
    })
}

fn new_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

async fn create(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Json(req) = body?;
    let config = &state.0.config;
    let script = match (req.builtin, req.script) {
        (Some(_), Some(_)) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "give either builtin or script, not both",
            ));
        }
        (Some(name), None) => {
            builtin(&name).ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("unknown builtin '{name}'")))?
        }
        (None, Some(script)) => script,
        (None, None) => config.base.clone(),
    };
    let time_scale = req.time_scale.unwrap_or(config.time_scale);
    let id = new_session_id();
    let handle = {
        let mut sessions = state.0.sessions.lock().unwrap();
        if sessions.len() >= config.max_sessions {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                format!("capacity of {} sessions reached", config.max_sessions),
            ));
        }
        let (handle, task) = session::spawn(id.clone(), script, time_scale, req.paused)
            .map_err(|e| ApiError::with(StatusCode::BAD_REQUEST, e))?;
        sessions.insert(
            id.clone(),
            Entry {
                handle: handle.clone(),
                task,
            },
        );
        handle
    };
    let (info, _) = handle.info().await.map_err(|e| ApiError::with(StatusCode::GONE, e))?;
    Ok((
        StatusCode::CREATED,
        Json(Created {
            session: info,
            stream: format!("/sessions/{id}/stream"),
        }),
    ))
}

async fn status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionInfo>, ApiError> {
    let (info, _) = state
        .handle(&id)?
        .info()
        .await
        .map_err(|e| ApiError::with(StatusCode::GONE, e))?;
    Ok(Json(info))
}

async fn remove(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let entry = state.0.sessions.lock().unwrap().remove(&id);
    match entry {
        Some(e) => {
            e.task.abort();
            Ok(StatusCode::NO_CONTENT)
        }
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown session '{id}'"))),
    }
}

async fn command(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<Command>, JsonRejection>,
) -> Result<Json<crate::protocol::Ack>, ApiError> {
    let handle = state.handle(&id)?;
    let Json(cmd) = body?;
    handle
        .command(cmd)
        .await
        .map(Json)
        .map_err(|e| ApiError::with(StatusCode::UNPROCESSABLE_ENTITY, e))
}

async fn record(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<CommandRecord>, ApiError> {
    let rec = state
        .handle(&id)?
        .record()
        .await
        .map_err(|e| ApiError::with(StatusCode::GONE, e))?;
    Ok(Json(rec))
}

async fn log(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let log = state
        .handle(&id)?
        .log()
        .await
        .map_err(|e| ApiError::with(StatusCode::GONE, e))?;
    let csv = log_to_csv_string(&log).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

async fn stream(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let handle = state.handle(&id)?;
    Ok(ws.on_upgrade(move |socket| pump(socket, handle)))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    socket.send(Message::Text(msg.to_line().into())).await.is_ok()
}

/// Forward ticks to one subscriber and feed its commands to the mailbox.
/// Starts from the latest computed tick; earlier ticks are not replayed.
async fn pump(mut socket: WebSocket, handle: SessionHandle) {
    let Ok(attachment) = handle.attach().await else {
        return;
    };
    let mut sub = attachment.messages;
    if !send(&mut socket, &ServerMessage::Hello(attachment.info)).await {
        return;
    }
    if let Some(tick) = attachment.latest {
        if !send(&mut socket, &ServerMessage::Tick(tick)).await {
            return;
        }
    }
    loop {
        tokio::select! {
            msg = sub.recv() => match msg {
                Ok(msg) => {
                    if !send(&mut socket, &msg).await {
                        return;
                    }
                }
                // a slow reader loses ticks, never simulation state
                Err(RecvError::Lagged(_)) => {}
                Err(RecvError::Closed) => {
                    let frame = CloseFrame {
                        code: close_code::NORMAL,
                        reason: "session closed".into(),
                    };
                    let _ = socket.send(Message::Close(Some(frame))).await;
                    return;
                }
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    let reply = match serde_json::from_str::<ClientMessage>(text.trim()) {
                        Ok(cmd) => match handle.command(cmd).await {
                            Ok(ack) => ServerMessage::Ack(ack),
                            Err(e) => ServerMessage::Error(e),
                        },
                        Err(e) => ServerMessage::Error(ErrorBody::new(format!("bad command: {e}"))),
                    };
                    if !send(&mut socket, &reply).await {
                        return;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

/// Serve on an already bound listener until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::new(config))).await
}

/// Bind `addr` and serve on a fresh multi-threaded runtime.
pub fn serve_blocking(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    tokio::runtime::Runtime::new()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        serve(listener, config).await
    })
}

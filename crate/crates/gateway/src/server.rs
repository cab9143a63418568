//! HTTP and websocket front end over [`Service`].

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use pricenego::corpus::Role;

use crate::error::GatewayError;
use crate::protocol::{MessageType, Rating, WireMessage};
use crate::service::{ScenarioView, Service};

/// How often websocket connections check for server-initiated messages
/// such as idle expiry.
const FLUSH_EVERY: Duration = Duration::from_millis(250);

#[derive(Debug, Deserialize)]
pub struct CreateRequest {
    pub scenario_id: String,
    pub human_role: Role,
    /// Defaults to the buyer.
    #[serde(default)]
    pub first_mover: Option<Role>,
}

#[derive(Debug, Default, Deserialize)]
pub struct StreamQuery {
    /// Resume after this seq; messages above it are replayed on connect.
    #[serde(default)]
    pub after: u64,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = WireMessage::new(MessageType::Error, "", 0).with_text(self.1);
        (self.0, Json(body)).into_response()
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let status = match e {
            GatewayError::UnknownScenario(_) | GatewayError::UnknownSession(_) => StatusCode::NOT_FOUND,
            GatewayError::InvalidRating(_) => StatusCode::UNPROCESSABLE_ENTITY,
            GatewayError::NotTerminal(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/scenarios/{id}", get(scenario))
        .route("/sessions", post(create))
        .route("/sessions/{id}/rating", post(rating))
        .route("/sessions/{id}/ws", get(stream))
        .with_state(service)
}

async fn scenario(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Result<Json<ScenarioView>, ApiError> {
    svc.scenario(&id)
        .map(|s| Json(ScenarioView::from(s)))
        .ok_or_else(|| GatewayError::UnknownScenario(id).into())
}

async fn create(State(svc): State<Arc<Service>>, Json(req): Json<CreateRequest>) -> Result<Response, ApiError> {
    let first = req.first_mover.unwrap_or(Role::Buyer);
    let created = blocking(move || svc.create_session(&req.scenario_id, req.human_role, first)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn rating(State(svc): State<Arc<Service>>, Path(id): Path<String>, Json(r): Json<Rating>) -> Result<Json<serde_json::Value>, ApiError> {
    svc.submit_rating(&id, r)?;
    Ok(Json(serde_json::json!({ "ok": true, "session_id": id })))
}

async fn stream(State(svc): State<Arc<Service>>, Path(id): Path<String>, Query(q): Query<StreamQuery>, ws: WebSocketUpgrade) -> Result<Response, ApiError> {
    svc.last_seq(&id)?;
    Ok(ws.on_upgrade(move |socket| chat(svc, id, q.after, socket)))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> crate::Result<T> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

/// Sends `messages` one JSON line per frame. Returns false once an
/// outcome went out or the peer is gone.
async fn send_all(socket: &mut WebSocket, messages: &[WireMessage], sent: &mut u64) -> bool {
    for m in messages {
        if m.seq <= *sent {
            continue;
        }
        let mut line = m.to_line();
        line.push('\n');
        if socket.send(Message::Text(line.into())).await.is_err() {
            return false;
        }
        *sent = m.seq;
        if m.kind == MessageType::Outcome {
            return false;
        }
    }
    true
}

async fn chat(svc: Arc<Service>, id: String, after: u64, mut socket: WebSocket) {
    let mut sent = after;
    let backlog = svc.outgoing_since(&id, after).unwrap_or_default();
    if !send_all(&mut socket, &backlog, &mut sent).await {
        let _ = socket.send(Message::Close(None)).await;
        return;
    }
    let mut tick = tokio::time::interval(FLUSH_EVERY);
    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t.to_string(),
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => continue,
                };
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let replies = match serde_json::from_str::<WireMessage>(line) {
                        Ok(msg) => {
                            let (svc, id) = (svc.clone(), id.clone());
                            blocking(move || svc.handle_message(&id, msg)).await
                        }
                        Err(e) => {
                            let (svc, id) = (svc.clone(), id.clone());
                            blocking(move || svc.error_reply(&id, format!("malformed message: {e}")).map(|m| vec![m])).await
                        }
                    };
                    let Ok(replies) = replies else { return };
                    if !send_all(&mut socket, &replies, &mut sent).await {
                        let _ = socket.send(Message::Close(None)).await;
                        return;
                    }
                }
            }
            _ = tick.tick() => {
                let pending = svc.outgoing_since(&id, sent).unwrap_or_default();
                if !send_all(&mut socket, &pending, &mut sent).await {
                    let _ = socket.send(Message::Close(None)).await;
                    return;
                }
            }
        }
    }
}

/// Serves until `shutdown` resolves, expiring idle sessions in the
/// background.
pub async fn serve(service: Arc<Service>, listener: tokio::net::TcpListener, shutdown: impl std::future::Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    let reaper = {
        let svc = service.clone();
        let every = (svc.config().idle_timeout / 4).clamp(Duration::from_millis(50), Duration::from_secs(5));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            loop {
                tick.tick().await;
                let svc = svc.clone();
                let _ = tokio::task::spawn_blocking(move || svc.expire_idle(Instant::now())).await;
            }
        })
    };
    let result = axum::serve(listener, router(service)).with_graceful_shutdown(shutdown).await;
    reaper.abort();
    result
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}

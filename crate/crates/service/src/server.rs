use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Serialize;
use tokio::sync::broadcast::error::RecvError;

use tasc_core::protocol::{wire_json_schema, EventKind, WireMessage, PROTOCOL_VERSION};

use crate::session::{Outbound, Registry, Session, SessionConfig, SessionError, SessionInfo};

/// WebSocket close code sent to clients that fall too far behind.
pub const CLOSE_TOO_SLOW: u16 = 4008;

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    protocol_version: u32,
    sessions: Vec<SessionInfo>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({"error": message.into()}))).into_response()
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/schema", get(|| async { Json(wire_json_schema()) }))
        .route("/sessions", get(list).post(open))
        .route("/sessions/{id}", get(info).delete(close))
        .route("/sessions/{id}/ws", get(socket))
        .with_state(registry)
}

/// Serves until the listener fails.
pub async fn serve(addr: SocketAddr, registry: Arc<Registry>) -> std::io::Result<()> {
    serve_on(tokio::net::TcpListener::bind(addr).await?, registry).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, registry: Arc<Registry>) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(registry)).await
}

async fn health(State(reg): State<Arc<Registry>>) -> Json<Health> {
    Json(Health { status: "ok", protocol_version: PROTOCOL_VERSION, sessions: reg.list() })
}

async fn list(State(reg): State<Arc<Registry>>) -> Json<Vec<SessionInfo>> {
    Json(reg.list())
}

async fn open(State(reg): State<Arc<Registry>>, body: Result<Json<SessionConfig>, JsonRejection>) -> Response {
    let config = match body {
        Ok(Json(c)) => c,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    match reg.open(config).await {
        Ok(info) => (StatusCode::CREATED, Json(info)).into_response(),
        Err(e @ SessionError::Duplicate(_)) => error(StatusCode::CONFLICT, e.to_string()),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn info(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> Response {
    match reg.get(&id) {
        Some(s) => Json(s.info()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no session {id:?}")),
    }
}

async fn close(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> Response {
    match reg.get(&id) {
        Some(s) => {
            s.close();
            StatusCode::ACCEPTED.into_response()
        }
        None => error(StatusCode::NOT_FOUND, format!("no session {id:?}")),
    }
}

async fn socket(State(reg): State<Arc<Registry>>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Response {
    match reg.get(&id) {
        Some(s) if s.is_finished() => error(StatusCode::GONE, format!("session {id:?} has finished")),
        Some(s) => ws.on_upgrade(move |socket| client(socket, s)),
        None => error(StatusCode::NOT_FOUND, format!("no session {id:?}")),
    }
}

fn text(line: &str) -> Message {
    Message::Text(line.into())
}

fn rejection(session: &Session, detail: String) -> Message {
    text(&WireMessage::Event { event: EventKind::Error, detail, tick: session.tick() }.to_line())
}

async fn client(socket: WebSocket, session: Arc<Session>) {
    let (mut tx, mut rx) = socket.split();
    let (initial, mut frames) = session.attach_client();
    let mut last_seq: Option<u64> = None;
    if tx.send(text(&initial)).await.is_ok() {
        loop {
            tokio::select! {
                incoming = rx.next() => {
                    let body = match incoming {
                        Some(Ok(Message::Text(t))) => t,
                        Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                        Some(Ok(_)) => continue,
                    };
                    let mut replies = Vec::new();
                    for line in body.as_str().lines().filter(|l| !l.trim().is_empty()) {
                        match WireMessage::parse(line) {
                            Ok(WireMessage::Input { seq, .. }) if last_seq.is_some_and(|l| seq <= l) => {
                                replies.push(rejection(&session, format!("seq {seq} is not greater than {}", last_seq.unwrap_or(0))));
                            }
                            Ok(m @ WireMessage::Input { seq, .. }) => {
                                last_seq = Some(seq);
                                session.submit(m.as_frame().expect("input carries a frame"));
                            }
                            Ok(_) => replies.push(rejection(&session, "clients may only send input messages".into())),
                            Err(e) => replies.push(rejection(&session, e)),
                        }
                    }
                    let mut failed = false;
                    for r in replies {
                        failed |= tx.send(r).await.is_err();
                    }
                    if failed {
                        break;
                    }
                }
                outgoing = frames.recv() => match outgoing {
                    Ok(Outbound::Line(line)) => {
                        if tx.send(text(&line)).await.is_err() {
                            break;
                        }
                    }
                    Ok(Outbound::Close) | Err(RecvError::Closed) => {
                        let _ = tx.send(Message::Close(None)).await;
                        break;
                    }
                    Err(RecvError::Lagged(n)) => {
                        log::warn!("session {}: client {n} messages behind, disconnecting", session.id());
                        let frame = CloseFrame { code: CLOSE_TOO_SLOW, reason: "client too slow".into() };
                        let _ = tx.send(Message::Close(Some(frame))).await;
                        break;
                    }
                },
            }
        }
    }
    session.detach_client();
}

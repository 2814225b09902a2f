//! HTTP surface: `GET /healthz` and the `/ws` socket.

use std::net::SocketAddr;

use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;

use crate::protocol::{decode_command, ServerMessage, PROTOCOL_VERSION};
use crate::runner::RunnerHandle;

pub fn router(runner: RunnerHandle) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/ws", get(ws_upgrade))
        .with_state(runner)
}

async fn healthz(State(runner): State<RunnerHandle>) -> impl IntoResponse {
    Json(serde_json::json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "protocol": PROTOCOL_VERSION,
        "scheme": runner.info.scheme,
        "slaves": runner.info.slaves,
    }))
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(runner): State<RunnerHandle>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, runner))
}

fn text(s: impl Into<Utf8Bytes>) -> Message {
    Message::Text(s.into())
}

async fn client(mut socket: WebSocket, runner: RunnerHandle) {
    let mut frames = runner.subscribe();
    if socket.send(text(runner.hello().to_json())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            frame = frames.recv() => match frame {
                Ok(f) => {
                    if socket.send(text(f.as_ref())).await.is_err() {
                        return;
                    }
                }
                // Slow client: older snapshots were dropped, keep going.
                Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return,
            },
            incoming = socket.recv() => {
                let reply = match incoming {
                    Some(Ok(Message::Text(t))) => handle_command(&runner, t.as_str()).await,
                    Some(Ok(Message::Binary(_))) => ServerMessage::Error {
                        v: PROTOCOL_VERSION,
                        reason: "binary frames are not supported".into(),
                    },
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => continue,
                };
                if socket.send(text(reply.to_json())).await.is_err() {
                    return;
                }
            }
        }
    }
}

async fn handle_command(runner: &RunnerHandle, frame: &str) -> ServerMessage {
    let (id, command) = match decode_command(frame) {
        Ok(c) => c,
        Err(e) => {
            return ServerMessage::Error {
                v: PROTOCOL_VERSION,
                reason: e.to_string(),
            }
        }
    };
    let cmd = command.name().to_string();
    match runner.submit(command).await {
        Ok(Ok(())) => ServerMessage::Ack {
            v: PROTOCOL_VERSION,
            id,
            cmd,
        },
        Ok(Err(reason)) => ServerMessage::Reject {
            v: PROTOCOL_VERSION,
            id,
            cmd,
            reason,
        },
        Err(e) => ServerMessage::Reject {
            v: PROTOCOL_VERSION,
            id,
            cmd,
            reason: e.to_string(),
        },
    }
}

/// Binds `addr`; the returned listener reports the actual port.
pub async fn bind(addr: SocketAddr) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}

/// Serves until the process ends or the listener fails.
pub async fn serve(listener: TcpListener, runner: RunnerHandle) -> std::io::Result<()> {
    axum::serve(listener, router(runner)).await
}

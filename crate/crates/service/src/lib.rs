//! Live teleoperation sessions over WebSocket.
//!
//! `POST /sessions` opens a session; `GET /sessions/{id}/ws` carries
//! newline-delimited [`WireMessage`](tasc_core::protocol::WireMessage)
//! JSON in both directions. Every session writes its telemetry to disk.

mod server;
mod session;

pub use server::{router, serve, serve_on, CLOSE_TOO_SLOW};
pub use session::{
    Clock, Mailbox, Outbound, Registry, Session, SessionConfig, SessionError, SessionInfo, BROADCAST_CAPACITY,
    MAX_TICK_RATE, MIN_TICK_RATE,
};

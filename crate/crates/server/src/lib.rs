//! Authoritative session server.
//!
//! [`Hub`] is the complete server logic without any I/O: it sequences
//! changes first come first served, assigns identities and colors, relays
//! presence and persists sessions. [`Server`] puts it behind a WebSocket
//! endpoint at `/ws` and serves session assets under `/assets`.

mod hub;
mod runtime;
mod session;

pub use hub::{ConnId, Hub, HubError, LoadFailure, Outgoing, DEFAULT_SESSION_ID, DEFAULT_SESSION_SIZE};
pub use runtime::{now_ms, serve, Server, ServerConfig, ServerError, DEFAULT_PORT};
pub use session::{ClientRecord, Sequenced, Session, AUTOSAVE_EVERY, PALETTE};

//! Headless collaboration client.
//!
//! [`ClientCore`] is the synchronization layer: it turns edit intents into
//! change requests and applies only what the server sequences. It performs
//! no I/O, so the simulator can drive it over a virtual network.
//! [`WsClient`] runs it over a WebSocket, and [`IdentityFile`] keeps the
//! assigned client id across reconnects.

mod core;
mod identity;
mod ws;

pub use crate::core::{ClientCore, ClientError, LocalStore, Notification, PendingChange, PresenceState, Update};
pub use identity::{IdentityFile, StoredIdentity};
pub use ws::WsClient;

//! [`ClientCore`] over a real WebSocket connection.

use colier_core::document::DocAction;
use colier_core::protocol::{decode_message, encode_message, Message, Presence, SessionSummary};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message as WsMessage;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use crate::core::{ClientCore, ClientError, Notification, Update};
use crate::identity::{IdentityFile, StoredIdentity};

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn transport(e: impl std::fmt::Display) -> ClientError {
    ClientError::Transport(e.to_string())
}

/// A joined client. `endpoint` is the full `ws://host:port/ws` URL.
pub struct WsClient {
    endpoint: String,
    socket: Socket,
    core: ClientCore,
    overview: Vec<SessionSummary>,
}

impl WsClient {
    /// Connects, joins `session_id` under the identity stored for this
    /// endpoint (if any) and waits for the snapshot. The assigned identity
    /// is written back to `identities`.
    pub async fn join(
        endpoint: &str,
        session_id: &str,
        identities: &mut IdentityFile,
    ) -> Result<WsClient, ClientError> {
        WsClient::join_with(endpoint, ClientCore::new(session_id), identities).await
    }

    async fn join_with(
        endpoint: &str,
        mut core: ClientCore,
        identities: &mut IdentityFile,
    ) -> Result<WsClient, ClientError> {
        let (socket, _) = connect_async(endpoint).await.map_err(transport)?;
        let stored = identities.get(endpoint, core.session_id()).map(|s| s.client_id.clone());
        let join = core.join_message(stored, None);
        let mut client = WsClient { endpoint: endpoint.to_owned(), socket, core, overview: Vec::new() };
        client.send(&join).await?;
        loop {
            let up = client.recv().await?;
            for n in &up.notifications {
                match n {
                    Notification::Overview(s) => client.overview = s.clone(),
                    Notification::Identity { client_id, color } => {
                        let id = StoredIdentity { client_id: client_id.clone(), color: *color };
                        identities.set(endpoint, client.core.session_id(), id)?;
                    }
                    _ => {}
                }
            }
            if client.core.is_joined() {
                return Ok(client);
            }
        }
    }

    /// Drops the connection and joins again with the stored identity.
    /// Pending changes are discarded.
    pub async fn reconnect(self, identities: &mut IdentityFile) -> Result<WsClient, ClientError> {
        let WsClient { endpoint, mut socket, mut core, .. } = self;
        let _ = socket.close(None).await;
        core.on_disconnect();
        WsClient::join_with(&endpoint, core, identities).await
    }

    pub fn core(&self) -> &ClientCore {
        &self.core
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// The session list the server greeted us with.
    pub fn overview(&self) -> &[SessionSummary] {
        &self.overview
    }

    async fn send(&mut self, msg: &Message) -> Result<(), ClientError> {
        self.socket
            .send(WsMessage::Text(encode_message(msg).into()))
            .await
            .map_err(|_| ClientError::TransportClosed)
    }

    pub async fn submit_change(&mut self, action: DocAction, now: i64) -> Result<(), ClientError> {
        let msg = self.core.submit_change(action, now)?;
        self.send(&msg).await
    }

    pub async fn send_presence(&mut self, presence: Presence) -> Result<(), ClientError> {
        let msg = self.core.presence_message(presence)?;
        self.send(&msg).await
    }

    /// Waits for the next server frame, runs it through the core and sends
    /// whatever the core asks for.
    pub async fn recv(&mut self) -> Result<Update, ClientError> {
        loop {
            let frame = match self.socket.next().await {
                Some(Ok(f)) => f,
                Some(Err(e)) => return Err(transport(e)),
                None => return Err(ClientError::TransportClosed),
            };
            let text = match frame {
                WsMessage::Text(t) => t,
                WsMessage::Close(_) => return Err(ClientError::TransportClosed),
                _ => continue,
            };
            let msg = match decode_message(text.as_bytes()) {
                Ok(m) => m,
                Err(e) => {
                    tracing::warn!(error = %e, "ignoring undecodable frame");
                    continue;
                }
            };
            let up = self.core.on_message(msg)?;
            for out in &up.outgoing {
                self.send(out).await?;
            }
            return Ok(up);
        }
    }

    /// Receives until nothing is pending.
    pub async fn settle(&mut self) -> Result<(), ClientError> {
        while !self.core.is_idle() {
            self.recv().await?;
        }
        Ok(())
    }

    pub async fn close(mut self) {
        let _ = self.socket.close(None).await;
    }
}

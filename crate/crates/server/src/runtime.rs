//! Network runtime: the WebSocket endpoint, asset and static file serving.

use std::collections::HashMap;
use std::future::Future;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use colier_core::protocol::{Message, RejectCode, Rejection, MAX_FRAME_BYTES};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tower_http::services::ServeDir;

use crate::hub::{ConnId, Hub, HubError, LoadFailure, Outgoing};

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub host: IpAddr,
    pub port: u16,
    pub data_dir: PathBuf,
    /// Directory of the browser editor bundle, served at `/`.
    pub web_root: Option<PathBuf>,
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServerConfig {
            host: IpAddr::V4(Ipv4Addr::UNSPECIFIED),
            port: DEFAULT_PORT,
            data_dir: data_dir.into(),
            web_root: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Hub(#[from] HubError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("web root {0} is not a directory")]
    WebRoot(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn now_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64)
}

struct Shared {
    hub: Hub,
    outboxes: HashMap<ConnId, mpsc::UnboundedSender<String>>,
}

impl Shared {
    /// Queues frames while the lock is held, so every connection sees
    /// broadcasts in sequencing order.
    fn dispatch(&mut self, out: Vec<Outgoing>) {
        for o in out {
            if let Some(tx) = self.outboxes.get(&o.conn) {
                let _ = tx.send(o.frame());
            }
        }
    }
}

#[derive(Clone)]
struct AppState(Arc<Mutex<Shared>>);

impl AppState {
    fn lock(&self) -> MutexGuard<'_, Shared> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// A bound, not yet running server.
pub struct Server {
    listener: TcpListener,
    state: AppState,
    web_root: Option<PathBuf>,
    failures: Vec<LoadFailure>,
}

impl Server {
    /// Loads the data directory and binds the listening socket.
    pub async fn bind(config: ServerConfig) -> Result<Server, ServerError> {
        if let Some(root) = &config.web_root {
            if !root.is_dir() {
                return Err(ServerError::WebRoot(root.clone()));
            }
        }
        let seed = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
        let (hub, failures) = Hub::load(&config.data_dir, seed, now_ms())?;
        let addr = SocketAddr::new(config.host, config.port);
        let listener =
            TcpListener::bind(addr).await.map_err(|source| ServerError::Bind { addr, source })?;
        let state = AppState(Arc::new(Mutex::new(Shared { hub, outboxes: HashMap::new() })));
        Ok(Server { listener, state, web_root: config.web_root, failures })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn load_failures(&self) -> &[LoadFailure] {
        &self.failures
    }

    /// Serves until `shutdown` resolves, then closes every connection and
    /// autosaves all sessions.
    pub async fn run_until(
        self,
        shutdown: impl Future<Output = ()> + Send + 'static,
    ) -> Result<(), ServerError> {
        let state = self.state.clone();
        let mut app = Router::new()
            .route("/ws", get(ws_upgrade))
            .route("/assets/{session}/{file}", get(asset));
        app = match self.web_root {
            Some(root) => app.fallback_service(ServeDir::new(root)),
            None => app.route("/", get(|| async { "colier session server\n" })),
        };
        let app = app.with_state(self.state);
        let closing = state.clone();
        axum::serve(self.listener, app)
            .with_graceful_shutdown(async move {
                shutdown.await;
                closing.lock().outboxes.clear();
            })
            .await?;
        state.lock().hub.shutdown();
        tracing::info!("sessions saved, server stopped");
        Ok(())
    }
}

/// Runs the server until interrupted.
pub async fn serve(config: ServerConfig) -> Result<(), ServerError> {
    let server = Server::bind(config).await?;
    tracing::info!(addr = %server.local_addr()?, "listening");
    server
        .run_until(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    // Oversized frames up to twice the limit still get a proper rejection;
    // anything larger drops the connection.
    ws.max_message_size(2 * MAX_FRAME_BYTES)
        .on_upgrade(move |socket| connection(socket, state))
}

async fn connection(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<String>();
    let conn = {
        let mut shared = state.lock();
        let (conn, out) = shared.hub.connect();
        shared.outboxes.insert(conn, tx);
        shared.dispatch(out);
        conn
    };
    tracing::debug!(conn, "connected");
    let writer = tokio::spawn(async move {
        while let Some(frame) = rx.recv().await {
            if sink.send(WsMessage::Text(frame.into())).await.is_err() {
                return;
            }
        }
        let _ = sink.close().await;
    });

    while let Some(Ok(msg)) = stream.next().await {
        let out = match msg {
            WsMessage::Text(text) => {
                let mut shared = state.lock();
                let out = shared.hub.handle_frame(conn, text.as_bytes(), now_ms());
                shared.dispatch(out);
                continue;
            }
            WsMessage::Binary(_) => {
                let r = Rejection::other(RejectCode::DecodeError, "binary frames are not supported");
                vec![Outgoing { conn, message: Message::Rejected(r) }]
            }
            WsMessage::Close(_) => break,
            WsMessage::Ping(_) | WsMessage::Pong(_) => continue,
        };
        state.lock().dispatch(out);
    }

    {
        let mut shared = state.lock();
        shared.outboxes.remove(&conn);
        let out = shared.hub.disconnect(conn, now_ms());
        shared.dispatch(out);
    }
    let _ = writer.await;
    tracing::debug!(conn, "disconnected");
}

async fn asset(
    UrlPath((session, file)): UrlPath<(String, String)>,
    State(state): State<AppState>,
) -> Response {
    let path = {
        let shared = state.lock();
        file.strip_suffix(".png")
            .zip(shared.hub.session(&session).and_then(|s| s.dir()))
            .and_then(|(key, dir)| dir.asset_path(key))
    };
    let Some(path) = path else {
        return StatusCode::NOT_FOUND.into_response();
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

//! The sans-IO server: connections in, addressed frames out.
//!
//! [`Hub`] owns every session and every connection. Callers feed it decoded
//! or raw frames together with the current time and deliver the returned
//! [`Outgoing`] messages in order. Whatever runs the hub must process calls
//! one at a time; that serialization is the first-come-first-serve rule.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use colier_core::document::ClientId;
use colier_core::persist::{PersistError, SessionDir};
use colier_core::protocol::{
    decode_message, encode_message, Message, PresenceUpdate, RejectCode, Rejection,
    SessionSummary,
};
use colier_core::SessionDocument;
use rand::distributions::Alphanumeric;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::session::{Sequenced, Session};

pub type ConnId = u64;

/// Id of the session created in an empty data directory.
pub const DEFAULT_SESSION_ID: &str = "default";
pub const DEFAULT_SESSION_SIZE: (u32, u32) = (1280, 720);

const CLIENT_ID_LEN: usize = 15;

/// A message for one connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub conn: ConnId,
    pub message: Message,
}

impl Outgoing {
    pub fn frame(&self) -> String {
        encode_message(&self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HubError {
    #[error("data directory {0} does not exist or is not a directory")]
    MissingDataDir(PathBuf),
    #[error("session `{0}` already exists")]
    DuplicateSession(String),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

/// A session directory that could not be loaded.
#[derive(Debug)]
pub struct LoadFailure {
    pub path: PathBuf,
    pub error: PersistError,
}

#[derive(Debug, Clone)]
struct Conn {
    joined: Option<(String, ClientId)>,
}

#[derive(Debug)]
pub struct Hub {
    sessions: BTreeMap<String, Session>,
    conns: BTreeMap<ConnId, Conn>,
    next_conn: ConnId,
    rng: ChaCha8Rng,
    data_dir: Option<PathBuf>,
}

impl Hub {
    /// An in-memory hub without sessions. `seed` drives client id minting.
    pub fn new(seed: u64) -> Self {
        Hub {
            sessions: BTreeMap::new(),
            conns: BTreeMap::new(),
            next_conn: 1,
            rng: ChaCha8Rng::seed_from_u64(seed),
            data_dir: None,
        }
    }

    /// Loads every session directory under `data_dir`. Broken sessions are
    /// skipped and reported; a directory without any session gets a default
    /// one.
    pub fn load(data_dir: &Path, seed: u64, now: i64) -> Result<(Hub, Vec<LoadFailure>), HubError> {
        if !data_dir.is_dir() {
            return Err(HubError::MissingDataDir(data_dir.to_owned()));
        }
        let mut hub = Hub::new(seed);
        hub.data_dir = Some(data_dir.to_owned());
        let read = |e| PersistError::Io { path: data_dir.to_owned(), source: e };
        let mut dirs: Vec<PathBuf> = fs::read_dir(data_dir)
            .map_err(read)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        let mut failures = Vec::new();
        for path in &dirs {
            let dir = SessionDir::new(path);
            match dir.load() {
                Ok(loaded) => {
                    let id = dir.id();
                    tracing::info!(session = %id, seq = loaded.head(), "loaded session");
                    let session =
                        Session::restore(id.clone(), loaded.base, loaded.log, loaded.document, Some(dir));
                    hub.sessions.insert(id, session);
                }
                Err(error) => {
                    tracing::warn!(path = %path.display(), %error, "skipping unreadable session");
                    failures.push(LoadFailure { path: path.clone(), error });
                }
            }
        }
        if dirs.is_empty() {
            let (w, h) = DEFAULT_SESSION_SIZE;
            hub.create_session(DEFAULT_SESSION_ID, SessionDocument::new("Untitled", w, h, now))?;
        }
        Ok((hub, failures))
    }

    /// Adds a session, on disk when the hub has a data directory.
    pub fn create_session(&mut self, id: &str, document: SessionDocument) -> Result<&Session, HubError> {
        if self.sessions.contains_key(id) {
            return Err(HubError::DuplicateSession(id.to_owned()));
        }
        let session = match &self.data_dir {
            Some(root) => Session::create_on_disk(SessionDir::new(root.join(id)), document)?,
            None => Session::new(id, document),
        };
        Ok(self.sessions.entry(id.to_owned()).or_insert(session))
    }

    pub fn session(&self, id: &str) -> Option<&Session> {
        self.sessions.get(id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    /// `(session, client)` a connection has joined as.
    pub fn identity(&self, conn: ConnId) -> Option<(&str, &ClientId)> {
        self.conns.get(&conn)?.joined.as_ref().map(|(s, c)| (s.as_str(), c))
    }

    pub fn overview(&self) -> Vec<SessionSummary> {
        self.sessions
            .values()
            .map(|s| SessionSummary {
                session_id: s.id().to_owned(),
                name: s.name().to_owned(),
                active_clients: s.active_clients() as u32,
            })
            .collect()
    }

    /// Registers a connection and greets it with the session overview.
    pub fn connect(&mut self) -> (ConnId, Vec<Outgoing>) {
        let conn = self.next_conn;
        self.next_conn += 1;
        self.conns.insert(conn, Conn { joined: None });
        (conn, vec![Outgoing { conn, message: Message::Overview { sessions: self.overview() } }])
    }

    /// Decodes one text frame and handles it. Undecodable frames are answered
    /// with a rejection; the connection stays open.
    pub fn handle_frame(&mut self, conn: ConnId, frame: &[u8], now: i64) -> Vec<Outgoing> {
        match decode_message(frame) {
            Ok(msg) => self.handle_message(conn, msg, now),
            Err(e) => {
                let rejection = Rejection::other(RejectCode::DecodeError, e.to_string());
                vec![Outgoing { conn, message: Message::Rejected(rejection) }]
            }
        }
    }

    pub fn handle_message(&mut self, conn: ConnId, msg: Message, now: i64) -> Vec<Outgoing> {
        if !self.conns.contains_key(&conn) {
            return Vec::new();
        }
        let reply = |message| vec![Outgoing { conn, message }];
        let reject = |code, detail: &str| reply(Message::Rejected(Rejection::other(code, detail)));
        match msg {
            Message::ListSessions => reply(Message::Overview { sessions: self.overview() }),
            Message::Join { session_id, client_id, username } => {
                self.join(conn, &session_id, client_id, username.as_deref(), now)
            }
            Message::Change(change) => {
                let Some((sid, client)) = self.joined(conn) else {
                    return reject(RejectCode::NotJoined, "join a session first");
                };
                let mut change = change;
                let claimed_ts = change.time_stamp;
                change.client_id = client;
                let session = self.sessions.get_mut(&sid).expect("joined sessions exist");
                match session.sequence(change, now) {
                    Sequenced::Rejected(mut rejection) => {
                        rejection.ref_time_stamp = Some(claimed_ts);
                        reply(Message::Rejected(rejection))
                    }
                    Sequenced::Accepted { event, notice } => {
                        let mut out = self.broadcast(&sid, None, &Message::Event(event));
                        if let Some(notice) = notice {
                            let owner = notice.owner.clone();
                            let targets = self.conns_of(&sid, &owner);
                            if targets.is_empty() {
                                let session = self.sessions.get_mut(&sid).expect("exists");
                                session.queue_notice(notice);
                            } else {
                                out.extend(targets.into_iter().map(|conn| Outgoing {
                                    conn,
                                    message: Message::UnlockNotice(notice.clone()),
                                }));
                            }
                        }
                        out
                    }
                }
            }
            Message::Presence(update) => {
                let Some((sid, client)) = self.joined(conn) else {
                    return reject(RejectCode::NotJoined, "join a session first");
                };
                if let colier_core::protocol::Presence::SelectLayer { layer_id } = &update.presence {
                    let session = self.sessions.get_mut(&sid).expect("exists");
                    session.select_layer(&client, layer_id.as_ref(), now);
                }
                let relayed = PresenceUpdate { client_id: Some(client), presence: update.presence };
                self.broadcast(&sid, Some(conn), &Message::Presence(relayed))
            }
            Message::ChatPost { time_stamp, text, .. } => {
                let Some((sid, client)) = self.joined(conn) else {
                    return reject(RejectCode::NotJoined, "join a session first");
                };
                let posted = Message::ChatPosted { client_id: client, time_stamp, server_time: now, text };
                self.broadcast(&sid, None, &posted)
            }
            Message::SnapshotRequest => {
                let Some((sid, _)) = self.joined(conn) else {
                    return reject(RejectCode::NotJoined, "join a session first");
                };
                let session = &self.sessions[&sid];
                reply(snapshot(session))
            }
            Message::HistoryList { from_seq, to_seq } => {
                let Some((sid, _)) = self.joined(conn) else {
                    return reject(RejectCode::NotJoined, "join a session first");
                };
                let log = self.sessions[&sid].log();
                let to = to_seq.unwrap_or(log.head());
                reply(Message::HistoryEntries { entries: log.range(from_seq, to).to_vec() })
            }
            other => {
                let (module, action) = other.wire_name();
                reject(RejectCode::DecodeError, &format!("{module}/{action} is sent by the server only"))
            }
        }
    }

    fn joined(&self, conn: ConnId) -> Option<(String, ClientId)> {
        self.conns.get(&conn)?.joined.clone()
    }

    fn conns_of(&self, sid: &str, client: &ClientId) -> Vec<ConnId> {
        self.conns
            .iter()
            .filter(|(_, c)| c.joined.as_ref().is_some_and(|(s, id)| s == sid && id == client))
            .map(|(k, _)| *k)
            .collect()
    }

    /// `message` to every connection joined to `sid`, except `skip`.
    fn broadcast(&self, sid: &str, skip: Option<ConnId>, message: &Message) -> Vec<Outgoing> {
        self.conns
            .iter()
            .filter(|(k, c)| Some(**k) != skip && c.joined.as_ref().is_some_and(|(s, _)| s == sid))
            .map(|(k, _)| Outgoing { conn: *k, message: message.clone() })
            .collect()
    }

    fn mint_client_id(&mut self) -> ClientId {
        loop {
            let id: String =
                (&mut self.rng).sample_iter(Alphanumeric).take(CLIENT_ID_LEN).map(char::from).collect();
            let id = ClientId::new(id);
            if self.sessions.values().all(|s| s.client(&id).is_none()) {
                return id;
            }
        }
    }

    fn join(
        &mut self,
        conn: ConnId,
        sid: &str,
        presented: Option<ClientId>,
        username: Option<&str>,
        now: i64,
    ) -> Vec<Outgoing> {
        if !self.sessions.contains_key(sid) {
            let rejection = Rejection::other(RejectCode::UnknownSession, sid);
            return vec![Outgoing { conn, message: Message::Rejected(rejection) }];
        }
        let mut out = self.leave(conn, now);
        // A known id is reattached. A connection still holding it is stale
        // (its close has not arrived yet) and loses the identity.
        let known = presented.filter(|id| self.sessions[sid].client(id).is_some());
        let client_id = match known {
            Some(id) => {
                for stale in self.conns_of(sid, &id) {
                    self.conns.get_mut(&stale).expect("listed").joined = None;
                }
                id
            }
            None => self.mint_client_id(),
        };
        let session = self.sessions.get_mut(sid).expect("checked above");
        let record = session.attach(&client_id, username, now).clone();
        let notices = session.take_queued_notices(&client_id);
        let peers: Vec<_> = session
            .clients()
            .filter(|c| c.connected && c.client_id != client_id)
            .map(|c| c.peer_info())
            .collect();
        let snap = snapshot(session);
        self.conns.get_mut(&conn).expect("registered").joined = Some((sid.to_owned(), client_id.clone()));

        out.push(Outgoing { conn, message: Message::Identity { client_id, color: record.color } });
        out.push(Outgoing { conn, message: snap });
        out.push(Outgoing { conn, message: Message::Joined { clients: peers } });
        out.extend(notices.into_iter().map(|n| Outgoing { conn, message: Message::UnlockNotice(n) }));
        out.extend(self.broadcast(sid, Some(conn), &Message::ClientJoined(record.peer_info())));
        out
    }

    /// Detaches the connection from its session, if any.
    fn leave(&mut self, conn: ConnId, now: i64) -> Vec<Outgoing> {
        let Some((sid, client)) = self.conns.get_mut(&conn).and_then(|c| c.joined.take()) else {
            return Vec::new();
        };
        if !self.conns_of(&sid, &client).is_empty() {
            return Vec::new();
        }
        let session = self.sessions.get_mut(&sid).expect("joined sessions exist");
        session.detach(&client, now);
        self.broadcast(&sid, None, &Message::ClientLeft { client_id: client })
    }

    /// Forgets a connection: its client goes offline, its leases are released
    /// and peers learn it left. Unknown connections are ignored.
    pub fn disconnect(&mut self, conn: ConnId, now: i64) -> Vec<Outgoing> {
        let out = self.leave(conn, now);
        self.conns.remove(&conn);
        out
    }

    /// Autosaves every session that lags behind its log.
    pub fn shutdown(&mut self) {
        for session in self.sessions.values_mut() {
            session.autosave();
        }
    }
}

fn snapshot(session: &Session) -> Message {
    Message::Snapshot { seq: session.head(), document: Box::new(session.document().clone()) }
}

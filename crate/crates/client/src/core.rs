//! The synchronization layer without I/O.
//!
//! The local document is written in exactly one place, when the server's
//! sequenced echo of a change arrives. Submitting a change only records it
//! as pending.

use std::collections::BTreeMap;

use colier_core::document::{ChangeMessage, ClientId, Color, DocAction, LayerId, SequencedEvent, VcaId};
use colier_core::protocol::{
    Message, PeerInfo, Presence, PresenceUpdate, RejectCode, Rejection, SessionSummary, UnlockNotice,
};
use colier_core::reducer::{apply_change_in_place, RejectReason};
use colier_core::SessionDocument;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("not joined to a session")]
    NotJoined,
    #[error("connection closed")]
    TransportClosed,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    /// The server accepted an event the local reducer refuses: the replicas
    /// have diverged.
    #[error("event {seq} does not apply locally: {reason}")]
    ProtocolViolation { seq: u64, reason: RejectReason },
    #[error("identity file {path}: {reason}")]
    IdentityFile { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PresenceState {
    pub cursor: Option<(f64, f64)>,
    pub selected_layer: Option<LayerId>,
    pub selected_vca: Option<(Option<LayerId>, Option<VcaId>)>,
    pub selected_tool: Option<String>,
    pub color: Option<Color>,
    pub username: Option<String>,
}

/// The replica of the session document plus awareness state.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStore {
    document: SessionDocument,
    last_seq: u64,
    client_id: Option<ClientId>,
    color: Option<Color>,
    presence: BTreeMap<ClientId, PresenceState>,
}

impl LocalStore {
    fn empty() -> Self {
        LocalStore {
            document: SessionDocument::new("", 1, 1, 0),
            last_seq: 0,
            client_id: None,
            color: None,
            presence: BTreeMap::new(),
        }
    }

    pub fn document(&self) -> &SessionDocument {
        &self.document
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn client_id(&self) -> Option<&ClientId> {
        self.client_id.as_ref()
    }

    pub fn color(&self) -> Option<Color> {
        self.color
    }

    /// Peers only; the own client is not tracked here.
    pub fn presence(&self) -> &BTreeMap<ClientId, PresenceState> {
        &self.presence
    }
}

/// A change sent to the server and not yet echoed or rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingChange {
    pub change: ChangeMessage,
    pub sent_at: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Notification {
    Overview(Vec<SessionSummary>),
    Identity { client_id: ClientId, color: Color },
    /// A snapshot replaced the document, on join or after a gap.
    Resynced { seq: u64 },
    /// A sequenced event was applied to the document.
    Applied(SequencedEvent),
    /// One of our own pending changes was echoed.
    Accepted(PendingChange),
    Rejected { rejection: Rejection, pending: Option<PendingChange> },
    PeerJoined(PeerInfo),
    PeerLeft(ClientId),
    Presence(ClientId),
    UnlockNotice(UnlockNotice),
    Chat { client_id: ClientId, text: String, server_time: i64 },
    History(Vec<SequencedEvent>),
}

/// What the caller has to act on after feeding in a server message.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Update {
    pub notifications: Vec<Notification>,
    /// Messages to send to the server, in order.
    pub outgoing: Vec<Message>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Joining,
    Joined,
    /// A gap was seen; events are ignored until the requested snapshot.
    Resyncing,
}

#[derive(Debug, Clone)]
pub struct ClientCore {
    session_id: String,
    store: LocalStore,
    pending: BTreeMap<i64, PendingChange>,
    last_time_stamp: i64,
    phase: Phase,
}

impl ClientCore {
    pub fn new(session_id: impl Into<String>) -> Self {
        ClientCore {
            session_id: session_id.into(),
            store: LocalStore::empty(),
            pending: BTreeMap::new(),
            last_time_stamp: i64::MIN,
            phase: Phase::Idle,
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn store(&self) -> &LocalStore {
        &self.store
    }

    pub fn pending(&self) -> impl Iterator<Item = &PendingChange> {
        self.pending.values()
    }

    pub fn is_joined(&self) -> bool {
        matches!(self.phase, Phase::Joined | Phase::Resyncing)
    }

    pub fn is_resyncing(&self) -> bool {
        self.phase == Phase::Resyncing
    }

    /// Joined, in sync and with nothing in flight.
    pub fn is_idle(&self) -> bool {
        self.phase == Phase::Joined && self.pending.is_empty()
    }

    /// Starts a (re)join. Pending changes from an earlier connection are
    /// dropped: the server may have moved on, so they are never replayed.
    pub fn join_message(&mut self, client_id: Option<ClientId>, username: Option<String>) -> Message {
        self.pending.clear();
        self.phase = Phase::Joining;
        self.store.presence.clear();
        Message::Join { session_id: self.session_id.clone(), client_id, username }
    }

    /// The connection dropped; the document stays readable.
    pub fn on_disconnect(&mut self) {
        self.phase = Phase::Idle;
    }

    /// Wraps `action` into a change stamped with our id and a per-client
    /// unique timestamp, and records it as pending. The document is left
    /// alone.
    pub fn submit_change(&mut self, action: DocAction, now: i64) -> Result<Message, ClientError> {
        let client_id = self.store.client_id.clone().filter(|_| self.is_joined());
        let client_id = client_id.ok_or(ClientError::NotJoined)?;
        let time_stamp = now.max(self.last_time_stamp.saturating_add(1));
        self.last_time_stamp = time_stamp;
        let change = ChangeMessage { client_id, time_stamp, action };
        self.pending.insert(time_stamp, PendingChange { change: change.clone(), sent_at: now });
        Ok(Message::Change(change))
    }

    pub fn presence_message(&self, presence: Presence) -> Result<Message, ClientError> {
        if !self.is_joined() {
            return Err(ClientError::NotJoined);
        }
        Ok(Message::Presence(PresenceUpdate { client_id: self.store.client_id.clone(), presence }))
    }

    pub fn chat_message(&self, text: impl Into<String>, now: i64) -> Result<Message, ClientError> {
        if !self.is_joined() {
            return Err(ClientError::NotJoined);
        }
        Ok(Message::ChatPost { client_id: self.store.client_id.clone(), time_stamp: now, text: text.into() })
    }

    fn take_echo(&mut self, event: &SequencedEvent) -> Option<PendingChange> {
        if self.store.client_id.as_ref() != Some(&event.change.client_id) {
            return None;
        }
        self.pending.remove(&event.change.time_stamp)
    }

    /// Feeds one server message through the synchronization layer.
    pub fn on_message(&mut self, msg: Message) -> Result<Update, ClientError> {
        let mut up = Update::default();
        let note = &mut up.notifications;
        match msg {
            Message::Overview { sessions } => note.push(Notification::Overview(sessions)),
            Message::Identity { client_id, color } => {
                self.store.client_id = Some(client_id.clone());
                self.store.color = Some(color);
                note.push(Notification::Identity { client_id, color });
            }
            Message::Snapshot { seq, document } => {
                if matches!(self.phase, Phase::Joining | Phase::Resyncing) {
                    self.store.document = *document;
                    self.store.last_seq = seq;
                    self.phase = Phase::Joined;
                    note.push(Notification::Resynced { seq });
                }
            }
            Message::Event(event) => self.on_event(event, &mut up)?,
            Message::Rejected(rejection) => {
                if rejection.reason == RejectCode::UnknownSession && self.phase == Phase::Joining {
                    self.phase = Phase::Idle;
                    return Err(ClientError::UnknownSession(self.session_id.clone()));
                }
                let pending = rejection.ref_time_stamp.and_then(|ts| self.pending.remove(&ts));
                note.push(Notification::Rejected { rejection, pending });
            }
            Message::Joined { clients } => {
                for peer in clients {
                    let id = peer.client_id.clone();
                    self.upsert_peer(peer);
                    note.push(Notification::Presence(id));
                }
            }
            Message::ClientJoined(peer) => {
                if Some(&peer.client_id) != self.store.client_id.as_ref() {
                    self.upsert_peer(peer.clone());
                    note.push(Notification::PeerJoined(peer));
                }
            }
            Message::ClientLeft { client_id } => {
                self.store.presence.remove(&client_id);
                note.push(Notification::PeerLeft(client_id));
            }
            Message::Presence(PresenceUpdate { client_id: Some(id), presence }) => {
                let state = self.store.presence.entry(id.clone()).or_default();
                match presence {
                    Presence::Cursor { x, y } => state.cursor = Some((x, y)),
                    Presence::SelectLayer { layer_id } => state.selected_layer = layer_id,
                    Presence::SelectVca { layer_id, vca_id } => {
                        state.selected_vca = (layer_id.is_some() || vca_id.is_some()).then_some((layer_id, vca_id))
                    }
                    Presence::SelectTool { tool } => state.selected_tool = Some(tool),
                }
                note.push(Notification::Presence(id));
            }
            Message::Presence(PresenceUpdate { client_id: None, .. }) => {}
            Message::UnlockNotice(n) => note.push(Notification::UnlockNotice(n)),
            Message::ChatPosted { client_id, server_time, text, .. } => {
                note.push(Notification::Chat { client_id, text, server_time })
            }
            Message::HistoryEntries { entries } => note.push(Notification::History(entries)),
            // Client-to-server messages echoed back carry nothing for us.
            Message::ListSessions
            | Message::Join { .. }
            | Message::SnapshotRequest
            | Message::Change(_)
            | Message::ChatPost { .. }
            | Message::HistoryList { .. } => {}
        }
        Ok(up)
    }

    fn upsert_peer(&mut self, peer: PeerInfo) {
        let state = self.store.presence.entry(peer.client_id).or_default();
        state.color = Some(peer.color);
        state.username = Some(peer.username);
    }

    fn on_event(&mut self, event: SequencedEvent, up: &mut Update) -> Result<(), ClientError> {
        match self.phase {
            Phase::Joined => {}
            // Everything before the snapshot is contained in it; our own
            // echoes still settle their pending entries.
            Phase::Resyncing => {
                if let Some(p) = self.take_echo(&event) {
                    up.notifications.push(Notification::Accepted(p));
                }
                return Ok(());
            }
            Phase::Idle | Phase::Joining => return Ok(()),
        }
        let expected = self.store.last_seq + 1;
        if event.seq < expected {
            return Ok(());
        }
        if event.seq > expected {
            tracing::debug!(expected, got = event.seq, "sequence gap, requesting snapshot");
            self.phase = Phase::Resyncing;
            if let Some(p) = self.take_echo(&event) {
                up.notifications.push(Notification::Accepted(p));
            }
            up.outgoing.push(Message::SnapshotRequest);
            return Ok(());
        }
        apply_change_in_place(&mut self.store.document, &event.change)
            .map_err(|reason| ClientError::ProtocolViolation { seq: event.seq, reason })?;
        self.store.last_seq = event.seq;
        if let Some(p) = self.take_echo(&event) {
            up.notifications.push(Notification::Accepted(p));
        }
        up.notifications.push(Notification::Applied(event));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use colier_core::document::LayerPatch;

    fn joined() -> ClientCore {
        let mut c = ClientCore::new("s");
        c.join_message(None, None);
        c.on_message(Message::Identity { client_id: "me".into(), color: Color::rgb(1, 2, 3) }).unwrap();
        let doc = SessionDocument::new("s", 8, 8, 0);
        c.on_message(Message::Snapshot { seq: 0, document: Box::new(doc) }).unwrap();
        c
    }

    fn add_layer(seq: u64, client: &str, ts: i64) -> SequencedEvent {
        let mut action = DocAction::AddLayer { layer_id: None, name: "l".into(), asset: None };
        action.assign_ids(seq);
        SequencedEvent { seq, server_time: 0, change: ChangeMessage { client_id: client.into(), time_stamp: ts, action } }
    }

    #[test]
    fn submitting_requires_a_join() {
        let mut c = ClientCore::new("s");
        assert!(matches!(c.submit_change(DocAction::UndoPath { layer_id: "L".into() }, 0), Err(ClientError::NotJoined)));
    }

    #[test]
    fn timestamps_are_bumped_on_collision() {
        let mut c = joined();
        let ts: Vec<i64> = (0..3)
            .map(|_| match c.submit_change(DocAction::UndoPath { layer_id: "L".into() }, 100).unwrap() {
                Message::Change(ch) => ch.time_stamp,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(ts, [100, 101, 102]);
        assert_eq!(c.pending().count(), 3);
    }

    #[test]
    fn submit_leaves_the_document_alone_until_the_echo() {
        let mut c = joined();
        c.on_message(Message::Event(add_layer(1, "peer", 5))).unwrap();
        let before = c.store().document().canonical_bytes();
        let patch = LayerPatch { opacity: Some(0.5), ..Default::default() };
        let Message::Change(change) = c
            .submit_change(DocAction::UpdateLayerProperty { layer_id: LayerId::for_seq(1), patch }, 50)
            .unwrap()
        else {
            panic!()
        };
        assert_eq!(c.store().document().canonical_bytes(), before);
        let up = c.on_message(Message::Event(SequencedEvent { seq: 2, server_time: 0, change })).unwrap();
        assert!(matches!(up.notifications[0], Notification::Accepted(_)));
        assert_eq!(c.store().document().layers[0].opacity, 0.5);
        assert!(c.is_idle());
    }

    #[test]
    fn gap_triggers_one_snapshot_request() {
        let mut c = joined();
        let up = c.on_message(Message::Event(add_layer(3, "peer", 1))).unwrap();
        assert_eq!(up.outgoing, [Message::SnapshotRequest]);
        assert!(c.is_resyncing());
        let up = c.on_message(Message::Event(add_layer(4, "peer", 2))).unwrap();
        assert!(up.outgoing.is_empty());
        assert_eq!(c.store().last_seq(), 0);
        let mut doc = SessionDocument::new("s", 8, 8, 0);
        doc.meta.name = "fresh".into();
        c.on_message(Message::Snapshot { seq: 4, document: Box::new(doc) }).unwrap();
        assert_eq!(c.store().last_seq(), 4);
        assert_eq!(c.store().document().meta.name, "fresh");
        c.on_message(Message::Event(add_layer(5, "peer", 3))).unwrap();
        assert_eq!(c.store().last_seq(), 5);
    }

    #[test]
    fn rejection_clears_the_matching_pending_change() {
        let mut c = joined();
        c.submit_change(DocAction::UndoPath { layer_id: "L".into() }, 7).unwrap();
        let mut r = Rejection::other(RejectCode::StaleTarget, "L");
        r.ref_time_stamp = Some(7);
        let up = c.on_message(Message::Rejected(r)).unwrap();
        assert!(matches!(&up.notifications[0], Notification::Rejected { pending: Some(_), .. }));
        assert!(c.is_idle());
    }

    #[test]
    fn presence_never_touches_the_document() {
        let mut c = joined();
        let before = c.store().clone();
        c.on_message(Message::Presence(PresenceUpdate {
            client_id: Some("peer".into()),
            presence: Presence::Cursor { x: 3.0, y: 4.0 },
        }))
        .unwrap();
        assert_eq!(c.store().document(), before.document());
        assert_eq!(c.store().presence()[&ClientId::from("peer")].cursor, Some((3.0, 4.0)));
    }

    #[test]
    fn diverging_event_is_a_protocol_violation() {
        let mut c = joined();
        let change = ChangeMessage {
            client_id: "peer".into(),
            time_stamp: 0,
            action: DocAction::DeleteLayer { layer_id: "missing".into() },
        };
        let err = c.on_message(Message::Event(SequencedEvent { seq: 1, server_time: 0, change })).unwrap_err();
        assert!(matches!(err, ClientError::ProtocolViolation { seq: 1, .. }));
    }

    #[test]
    fn rejoin_discards_pending() {
        let mut c = joined();
        c.submit_change(DocAction::UndoPath { layer_id: "L".into() }, 7).unwrap();
        c.on_disconnect();
        c.join_message(c.store().client_id().cloned(), None);
        assert_eq!(c.pending().count(), 0);
    }
}

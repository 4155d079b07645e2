//! One collaborative session: the authoritative document, its change log,
//! the client roster and the transform leases.

use std::collections::{BTreeMap, BTreeSet};

use colier_core::document::{ChangeMessage, ClientId, Color, DocAction, SequencedEvent};
use colier_core::history::VersionLog;
use colier_core::lease::TransformLeaseTable;
use colier_core::persist::{PersistError, SessionDir};
use colier_core::protocol::{PeerInfo, Rejection, RejectCode, UnlockNotice};
use colier_core::reducer::{apply_change_in_place, check_permission, Permission, RejectReason};
use colier_core::{LayerId, SessionDocument};

/// Join-order color assignment; wraps around after the last entry.
pub const PALETTE: [Color; 12] = [
    Color::rgb(0x79, 0x5E, 0xB3),
    Color::rgb(0xE6, 0x19, 0x4B),
    Color::rgb(0x3C, 0xB4, 0x4B),
    Color::rgb(0x43, 0x63, 0xD8),
    Color::rgb(0xF5, 0x82, 0x31),
    Color::rgb(0x42, 0xD4, 0xF4),
    Color::rgb(0xF0, 0x32, 0xE6),
    Color::rgb(0x9A, 0x63, 0x24),
    Color::rgb(0x46, 0x99, 0x90),
    Color::rgb(0x80, 0x00, 0x00),
    Color::rgb(0xBF, 0xB0, 0x00),
    Color::rgb(0x00, 0x00, 0x75),
];

/// Accepted changes between two autosaves of `document.json`.
pub const AUTOSAVE_EVERY: u64 = 25;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientRecord {
    pub client_id: ClientId,
    pub color: Color,
    pub connected: bool,
    pub last_seen: i64,
    pub username: String,
}

impl ClientRecord {
    pub fn peer_info(&self) -> PeerInfo {
        PeerInfo {
            client_id: self.client_id.clone(),
            color: self.color,
            username: self.username.clone(),
        }
    }
}

/// Result of sequencing one change.
#[derive(Debug, Clone, PartialEq)]
pub enum Sequenced {
    Accepted { event: SequencedEvent, notice: Option<UnlockNotice> },
    Rejected(Rejection),
}

#[derive(Debug)]
pub struct Session {
    id: String,
    name: String,
    base: SessionDocument,
    document: SessionDocument,
    log: VersionLog,
    clients: BTreeMap<ClientId, ClientRecord>,
    leases: TransformLeaseTable,
    /// Unlock notices for owners who were offline when their lock was broken.
    queued_notices: BTreeMap<ClientId, Vec<UnlockNotice>>,
    dir: Option<SessionDir>,
    saved_seq: u64,
}

impl Session {
    /// A session kept only in memory.
    pub fn new(id: impl Into<String>, document: SessionDocument) -> Self {
        Session::restore(id, document.clone(), VersionLog::new(), document, None)
    }

    pub(crate) fn restore(
        id: impl Into<String>,
        base: SessionDocument,
        log: VersionLog,
        document: SessionDocument,
        dir: Option<SessionDir>,
    ) -> Self {
        let saved_seq = log.head();
        Session {
            id: id.into(),
            name: document.meta.name.clone(),
            base,
            document,
            log,
            clients: BTreeMap::new(),
            leases: TransformLeaseTable::new(),
            queued_notices: BTreeMap::new(),
            dir,
            saved_seq,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn document(&self) -> &SessionDocument {
        &self.document
    }

    pub fn base(&self) -> &SessionDocument {
        &self.base
    }

    pub fn log(&self) -> &VersionLog {
        &self.log
    }

    pub fn head(&self) -> u64 {
        self.log.head()
    }

    pub fn next_seq(&self) -> u64 {
        self.log.head() + 1
    }

    pub fn dir(&self) -> Option<&SessionDir> {
        self.dir.as_ref()
    }

    pub fn leases(&self) -> &TransformLeaseTable {
        &self.leases
    }

    pub fn clients(&self) -> impl Iterator<Item = &ClientRecord> {
        self.clients.values()
    }

    pub fn client(&self, id: &ClientId) -> Option<&ClientRecord> {
        self.clients.get(id)
    }

    pub fn active_clients(&self) -> usize {
        self.clients.values().filter(|c| c.connected).count()
    }

    /// Reattaches a known client or registers a new one with the next
    /// palette color.
    pub fn attach(&mut self, client_id: &ClientId, username: Option<&str>, now: i64) -> &ClientRecord {
        let color = PALETTE[self.clients.len() % PALETTE.len()];
        let record = self.clients.entry(client_id.clone()).or_insert_with(|| ClientRecord {
            client_id: client_id.clone(),
            color,
            connected: false,
            last_seen: now,
            username: String::new(),
        });
        record.connected = true;
        record.last_seen = now;
        if let Some(name) = username {
            record.username = name.to_owned();
        }
        if record.username.is_empty() {
            record.username = client_id.to_string();
        }
        record
    }

    /// Marks the client offline and drops its leases. Exclusive locks stay.
    pub fn detach(&mut self, client_id: &ClientId, now: i64) {
        if let Some(record) = self.clients.get_mut(client_id) {
            record.connected = false;
            record.last_seen = now;
        }
        self.leases.release_client(client_id);
    }

    pub fn take_queued_notices(&mut self, client_id: &ClientId) -> Vec<UnlockNotice> {
        self.queued_notices.remove(client_id).unwrap_or_default()
    }

    pub(crate) fn queue_notice(&mut self, notice: UnlockNotice) {
        self.queued_notices.entry(notice.owner.clone()).or_default().push(notice);
    }

    /// Selecting a layer takes its transform lease, dropping any other lease
    /// the client holds; `None` releases them all. Returns whether the
    /// client holds the lease on the selected layer afterwards.
    pub fn select_layer(&mut self, client_id: &ClientId, layer: Option<&LayerId>, now: i64) -> bool {
        self.leases.purge_expired(now);
        let held: BTreeSet<LayerId> = self.leases.held_by(client_id, now).cloned().collect();
        for other in held.iter().filter(|l| Some(*l) != layer) {
            self.leases.release(other, client_id);
        }
        match layer {
            Some(l) if self.document.layer(l).is_some() => self.leases.acquire(l, client_id, now),
            _ => false,
        }
    }

    /// Sequences one change: permission check against the live leases, id
    /// assignment, reduction, durable append. Rejections leave every part of
    /// the session untouched.
    pub fn sequence(&mut self, mut change: ChangeMessage, now: i64) -> Sequenced {
        self.leases.purge_expired(now);
        let notify_owner = match check_permission(&self.document, &change, &self.leases, now) {
            Permission::Allowed { notify_owner } => notify_owner,
            Permission::Denied(d) => {
                let reason = RejectReason::PermissionDenied(d);
                return Sequenced::Rejected(Rejection::for_change(&change, &reason));
            }
        };
        let seq = self.next_seq();
        change.action.assign_ids(seq);

        let mut next = if self.dir.is_some() { Some(self.document.clone()) } else { None };
        let target = next.as_mut().unwrap_or(&mut self.document);
        if let Err(reason) = apply_change_in_place(target, &change) {
            return Sequenced::Rejected(Rejection::for_change(&change, &reason));
        }
        let event = SequencedEvent { seq, server_time: now, change };
        if let Some(dir) = &self.dir {
            if let Err(e) = dir.append_event(&event) {
                tracing::error!(session = %self.id, error = %e, "changelog append failed");
                let mut rejection = Rejection::other(RejectCode::StorageFailure, e.to_string());
                rejection.ref_time_stamp = Some(event.change.time_stamp);
                return Sequenced::Rejected(rejection);
            }
        }
        if let Some(doc) = next {
            self.document = doc;
        }
        self.log.append(event.clone(), &self.document).expect("seq is the log head plus one");

        let change = &event.change;
        match &change.action {
            DocAction::DeleteLayer { layer_id } => self.leases.clear_layer(layer_id),
            action if action.is_transform_update() => {
                if let Some(layer) = action.target_layer() {
                    self.leases.acquire(layer, &change.client_id, now);
                }
            }
            _ => {}
        }
        if self.head() - self.saved_seq >= AUTOSAVE_EVERY {
            self.autosave();
        }
        let notice = notify_owner.map(|owner| UnlockNotice {
            layer_id: change.action.target_layer().cloned().expect("unlock targets a layer"),
            owner,
            by: change.client_id.clone(),
            time_stamp: now,
        });
        Sequenced::Accepted { event, notice }
    }

    /// Writes `document.json` if it lags behind the log.
    pub fn autosave(&mut self) {
        let Some(dir) = &self.dir else { return };
        if self.saved_seq == self.head() && dir.document_path().exists() {
            return;
        }
        match dir.write_document(&self.document, self.head()) {
            Ok(()) => self.saved_seq = self.head(),
            Err(e) => tracing::error!(session = %self.id, error = %e, "autosave failed"),
        }
    }

    pub fn saved_seq(&self) -> u64 {
        self.saved_seq
    }

    pub(crate) fn create_on_disk(
        dir: SessionDir,
        document: SessionDocument,
    ) -> Result<Session, PersistError> {
        let id = dir.id();
        let dir = SessionDir::create(dir.root(), &document)?;
        Ok(Session::restore(id, document.clone(), VersionLog::new(), document, Some(dir)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use colier_core::document::{LayerPatch, Transform2D};

    fn change(client: &str, action: DocAction) -> ChangeMessage {
        ChangeMessage { client_id: client.into(), time_stamp: 7, action }
    }

    fn with_layer() -> (Session, LayerId) {
        let mut s = Session::new("s", SessionDocument::new("s", 10, 10, 0));
        let add = DocAction::AddLayer { layer_id: None, name: "a".into(), asset: None };
        assert!(matches!(s.sequence(change("a", add), 0), Sequenced::Accepted { .. }));
        (s, LayerId::for_seq(1))
    }

    #[test]
    fn palette_starts_with_the_sample_stroke_color_and_cycles() {
        assert_eq!(PALETTE[0].to_string(), "#795EB3");
        let mut s = Session::new("s", SessionDocument::new("s", 1, 1, 0));
        let colors: Vec<Color> =
            (0..13).map(|i| s.attach(&format!("c{i}").as_str().into(), None, 0).color).collect();
        assert_eq!(colors[12], PALETTE[0]);
        assert_eq!(colors[1], PALETTE[1]);
        // a returning client keeps its color
        assert_eq!(s.attach(&"c3".into(), None, 5).color, PALETTE[3]);
    }

    #[test]
    fn seq_is_gap_free_and_rejections_do_not_consume_it() {
        let (mut s, l) = with_layer();
        let stale = change("a", DocAction::DeleteLayer { layer_id: "nope".into() });
        assert!(matches!(s.sequence(stale, 1), Sequenced::Rejected(_)));
        let del = change("b", DocAction::DeleteLayer { layer_id: l });
        let Sequenced::Accepted { event, .. } = s.sequence(del, 2) else { panic!() };
        assert_eq!(event.seq, 2);
        assert_eq!(s.head(), 2);
    }

    #[test]
    fn lease_blocks_foreign_transforms() {
        let (mut s, l) = with_layer();
        assert!(s.select_layer(&"a".into(), Some(&l), 100));
        let patch = LayerPatch { transform: Some(Transform2D { tx: 4.0, ..Transform2D::IDENTITY }), ..Default::default() };
        let update = |c: &str| change(c, DocAction::UpdateLayerProperty { layer_id: l.clone(), patch: patch.clone() });
        let Sequenced::Rejected(r) = s.sequence(update("b"), 200) else { panic!() };
        assert_eq!(r.reason, RejectCode::PermissionDenied);
        assert_eq!(r.detail, "TransformLease");
        assert!(matches!(s.sequence(update("a"), 300), Sequenced::Accepted { .. }));
        // the update renewed the lease: still held at 300 + ttl - 1
        assert_eq!(s.leases().holder(&l, 30_299), Some(&"a".into()));
        assert!(matches!(s.sequence(update("b"), 30_300), Sequenced::Accepted { .. }));
    }

    #[test]
    fn forced_unlock_produces_a_notice_for_the_owner() {
        let (mut s, l) = with_layer();
        s.sequence(change("a", DocAction::ExclusiveLock { layer_id: l.clone() }), 1);
        let Sequenced::Accepted { notice, .. } =
            s.sequence(change("b", DocAction::ExclusiveUnlock { layer_id: l.clone() }), 2)
        else {
            panic!()
        };
        let notice = notice.unwrap();
        assert_eq!((notice.owner.as_str(), notice.by.as_str()), ("a", "b"));
        assert_eq!(notice.layer_id, l);
    }
}

//! Wire protocol.
//!
//! Every frame is one UTF-8 JSON object of the form
//!
//! ```text
//! {"module": "drawing", "message": {"newPath": { ...payload... }}}
//! ```
//!
//! Scalar numbers are emitted as decimal strings and accepted either as
//! strings or as JSON numbers. Path coordinates stay JSON numbers. Server
//! broadcasts of accepted document changes carry the client's payload plus
//! `seq` and `serverTime`; presence and chat traffic is never sequenced.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::{Map, Value};

use crate::document::{
    ChangeMessage, ClientId, Color, DocAction, LayerId, LayerPatch, PathCommand, SequencedEvent,
    SessionDocument, StrokeId, Transform2D, VcaId,
};
use crate::effect::{find_param, Effect};
use crate::persist;
use crate::real::{to_decimal_string, to_json_number};
use crate::reducer::RejectReason;

/// Frames above this size are refused unparsed.
pub const MAX_FRAME_BYTES: usize = 1 << 20;

/// The closed set of `(module, action)` pairs.
pub const REGISTRY: &[(&str, &[&str])] = &[
    (
        "session",
        &[
            "list",
            "join",
            "joined",
            "overview",
            "snapshot",
            "clientJoined",
            "clientLeft",
            "identity",
            "rejected",
        ],
    ),
    ("drawing", &["newPath", "undoPath", "redoPath"]),
    (
        "layer",
        &[
            "add",
            "delete",
            "reorder",
            "updateProperty",
            "lock",
            "unlock",
            "exclusiveLock",
            "exclusiveUnlock",
            "exclusiveUnlockNotice",
        ],
    ),
    ("pipeline", &["addVca", "removeVca", "reorderVca", "updateParam", "setEnabled"]),
    ("presence", &["cursor", "selectLayer", "selectVca", "selectTool"]),
    ("chat", &["post", "posted"]),
    ("history", &["list", "entries"]),
];

pub fn is_registered(module: &str, action: &str) -> bool {
    REGISTRY
        .iter()
        .any(|(m, actions)| *m == module && actions.contains(&action))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("unknown module `{0}`")]
    UnknownModule(String),
    #[error("unknown action `{action}` in module `{module}`")]
    UnknownAction { module: String, action: String },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("bad value for `{0}`")]
    BadValue(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSummary {
    pub session_id: String,
    pub name: String,
    pub active_clients: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerInfo {
    pub client_id: ClientId,
    pub color: Color,
    pub username: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RejectCode {
    StaleTarget,
    PermissionDenied,
    InvalidValue,
    MalformedPayload,
    NothingToUndo,
    NothingToRedo,
    UnknownSession,
    NotJoined,
    DecodeError,
    /// The change could not be made durable; nothing was applied.
    StorageFailure,
}

impl RejectCode {
    const ALL: [RejectCode; 10] = [
        RejectCode::StaleTarget,
        RejectCode::PermissionDenied,
        RejectCode::InvalidValue,
        RejectCode::MalformedPayload,
        RejectCode::NothingToUndo,
        RejectCode::NothingToRedo,
        RejectCode::UnknownSession,
        RejectCode::NotJoined,
        RejectCode::DecodeError,
        RejectCode::StorageFailure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectCode::StaleTarget => "StaleTarget",
            RejectCode::PermissionDenied => "PermissionDenied",
            RejectCode::InvalidValue => "InvalidValue",
            RejectCode::MalformedPayload => "MalformedPayload",
            RejectCode::NothingToUndo => "NothingToUndo",
            RejectCode::NothingToRedo => "NothingToRedo",
            RejectCode::UnknownSession => "UnknownSession",
            RejectCode::NotJoined => "NotJoined",
            RejectCode::DecodeError => "DecodeError",
            RejectCode::StorageFailure => "StorageFailure",
        }
    }

    pub fn parse(s: &str) -> Option<RejectCode> {
        RejectCode::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for RejectCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<&RejectReason> for RejectCode {
    fn from(r: &RejectReason) -> Self {
        match r {
            RejectReason::StaleTarget(_) => RejectCode::StaleTarget,
            RejectReason::PermissionDenied(_) => RejectCode::PermissionDenied,
            RejectReason::InvalidValue(_) => RejectCode::InvalidValue,
            RejectReason::MalformedPayload(_) => RejectCode::MalformedPayload,
            RejectReason::NothingToUndo => RejectCode::NothingToUndo,
            RejectReason::NothingToRedo => RejectCode::NothingToRedo,
        }
    }
}

/// Sent to the originator of a refused request, never broadcast.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub reason: RejectCode,
    pub detail: String,
    /// `timeStamp` of the refused change; together with the recipient's own
    /// client id it identifies the pending change.
    pub ref_time_stamp: Option<i64>,
    pub ref_seq: Option<u64>,
}

impl Rejection {
    pub fn for_change(change: &ChangeMessage, reason: &RejectReason) -> Self {
        Rejection {
            reason: reason.into(),
            detail: reason.detail(),
            ref_time_stamp: Some(change.time_stamp),
            ref_seq: None,
        }
    }

    pub fn other(reason: RejectCode, detail: impl Into<String>) -> Self {
        Rejection { reason, detail: detail.into(), ref_time_stamp: None, ref_seq: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlockNotice {
    pub layer_id: LayerId,
    pub owner: ClientId,
    pub by: ClientId,
    pub time_stamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Presence {
    Cursor { x: f64, y: f64 },
    SelectLayer { layer_id: Option<LayerId> },
    SelectVca { layer_id: Option<LayerId>, vca_id: Option<VcaId> },
    SelectTool { tool: String },
}

impl Presence {
    fn action(&self) -> &'static str {
        match self {
            Presence::Cursor { .. } => "cursor",
            Presence::SelectLayer { .. } => "selectLayer",
            Presence::SelectVca { .. } => "selectVca",
            Presence::SelectTool { .. } => "selectTool",
        }
    }
}

/// Ephemeral awareness update. Clients may omit `client_id`; the server
/// stamps the sender's identity before relaying.
#[derive(Debug, Clone, PartialEq)]
pub struct PresenceUpdate {
    pub client_id: Option<ClientId>,
    pub presence: Presence,
}

/// Every message of the protocol, in typed form.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    ListSessions,
    Overview { sessions: Vec<SessionSummary> },
    Join { session_id: String, client_id: Option<ClientId>, username: Option<String> },
    Identity { client_id: ClientId, color: Color },
    /// `session/snapshot` without a document: a client asking for resync.
    SnapshotRequest,
    Snapshot { seq: u64, document: Box<SessionDocument> },
    /// Roster of already connected peers, sent to a joining client.
    Joined { clients: Vec<PeerInfo> },
    ClientJoined(PeerInfo),
    ClientLeft { client_id: ClientId },
    Rejected(Rejection),
    /// Client request to mutate the document.
    Change(ChangeMessage),
    /// Server broadcast of an accepted change.
    Event(SequencedEvent),
    UnlockNotice(UnlockNotice),
    Presence(PresenceUpdate),
    ChatPost { client_id: Option<ClientId>, time_stamp: i64, text: String },
    ChatPosted { client_id: ClientId, time_stamp: i64, server_time: i64, text: String },
    HistoryList { from_seq: u64, to_seq: Option<u64> },
    HistoryEntries { entries: Vec<SequencedEvent> },
}

impl Message {
    pub fn wire_name(&self) -> (&'static str, &'static str) {
        match self {
            Message::ListSessions => ("session", "list"),
            Message::Overview { .. } => ("session", "overview"),
            Message::Join { .. } => ("session", "join"),
            Message::Identity { .. } => ("session", "identity"),
            Message::SnapshotRequest | Message::Snapshot { .. } => ("session", "snapshot"),
            Message::Joined { .. } => ("session", "joined"),
            Message::ClientJoined(_) => ("session", "clientJoined"),
            Message::ClientLeft { .. } => ("session", "clientLeft"),
            Message::Rejected(_) => ("session", "rejected"),
            Message::Change(c) => c.action.wire_name(),
            Message::Event(e) => e.change.action.wire_name(),
            Message::UnlockNotice(_) => ("layer", "exclusiveUnlockNotice"),
            Message::Presence(p) => ("presence", p.presence.action()),
            Message::ChatPost { .. } => ("chat", "post"),
            Message::ChatPosted { .. } => ("chat", "posted"),
            Message::HistoryList { .. } => ("history", "list"),
            Message::HistoryEntries { .. } => ("history", "entries"),
        }
    }
}

// ---------------------------------------------------------------------------
// Encoding

pub fn encode_message(msg: &Message) -> String {
    message_value(msg).to_string()
}

/// One changelog line (no trailing newline).
pub fn encode_event(event: &SequencedEvent) -> String {
    encode_message(&Message::Event(event.clone()))
}

fn real(x: f64) -> Value {
    Value::String(to_decimal_string(x))
}

fn int(x: impl fmt::Display) -> Value {
    Value::String(x.to_string())
}

fn text(s: impl Into<String>) -> Value {
    Value::String(s.into())
}

fn envelope(module: &str, action: &str, payload: Map<String, Value>) -> Value {
    let mut message = Map::new();
    message.insert(action.to_owned(), Value::Object(payload));
    let mut env = Map::new();
    env.insert("module".into(), text(module));
    env.insert("message".into(), Value::Object(message));
    Value::Object(env)
}

fn message_value(msg: &Message) -> Value {
    let (module, action) = msg.wire_name();
    let mut p = Map::new();
    match msg {
        Message::ListSessions | Message::SnapshotRequest => {}
        Message::Overview { sessions } => {
            let list = sessions
                .iter()
                .map(|s| {
                    let mut m = Map::new();
                    m.insert("sessionId".into(), text(&s.session_id));
                    m.insert("name".into(), text(&s.name));
                    m.insert("activeClients".into(), int(s.active_clients));
                    Value::Object(m)
                })
                .collect();
            p.insert("sessions".into(), Value::Array(list));
        }
        Message::Join { session_id, client_id, username } => {
            p.insert("sessionId".into(), text(session_id));
            if let Some(c) = client_id {
                p.insert("clientId".into(), text(c.as_str()));
            }
            if let Some(u) = username {
                p.insert("username".into(), text(u));
            }
        }
        Message::Identity { client_id, color } => {
            p.insert("clientId".into(), text(client_id.as_str()));
            p.insert("color".into(), text(color.to_string()));
        }
        Message::Snapshot { seq, document } => {
            p.insert("seq".into(), int(seq));
            p.insert("document".into(), persist::document_value(document));
        }
        Message::Joined { clients } => {
            p.insert("clients".into(), Value::Array(clients.iter().map(peer_value).collect()));
        }
        Message::ClientJoined(peer) => {
            if let Value::Object(m) = peer_value(peer) {
                p = m;
            }
        }
        Message::ClientLeft { client_id } => {
            p.insert("clientId".into(), text(client_id.as_str()));
        }
        Message::Rejected(r) => {
            p.insert("reason".into(), text(r.reason.as_str()));
            if !r.detail.is_empty() {
                p.insert("detail".into(), text(&r.detail));
            }
            if let Some(ts) = r.ref_time_stamp {
                p.insert("refTimeStamp".into(), int(ts));
            }
            if let Some(seq) = r.ref_seq {
                p.insert("refSeq".into(), int(seq));
            }
        }
        Message::Change(change) => p = change_payload(change),
        Message::Event(event) => {
            p = change_payload(&event.change);
            p.insert("seq".into(), int(event.seq));
            p.insert("serverTime".into(), int(event.server_time));
        }
        Message::UnlockNotice(n) => {
            p.insert("layerId".into(), text(n.layer_id.as_str()));
            p.insert("owner".into(), text(n.owner.as_str()));
            p.insert("by".into(), text(n.by.as_str()));
            p.insert("timeStamp".into(), int(n.time_stamp));
        }
        Message::Presence(update) => {
            if let Some(c) = &update.client_id {
                p.insert("clientId".into(), text(c.as_str()));
            }
            let opt = |v: &Option<String>| v.clone().map_or(Value::Null, Value::String);
            match &update.presence {
                Presence::Cursor { x, y } => {
                    p.insert("x".into(), real(*x));
                    p.insert("y".into(), real(*y));
                }
                Presence::SelectLayer { layer_id } => {
                    p.insert("layerId".into(), opt(&layer_id.as_ref().map(|l| l.to_string())));
                }
                Presence::SelectVca { layer_id, vca_id } => {
                    p.insert("layerId".into(), opt(&layer_id.as_ref().map(|l| l.to_string())));
                    p.insert("vcaId".into(), opt(&vca_id.as_ref().map(|v| v.to_string())));
                }
                Presence::SelectTool { tool } => {
                    p.insert("tool".into(), text(tool));
                }
            }
        }
        Message::ChatPost { client_id, time_stamp, text: body } => {
            p.insert("timeStamp".into(), int(time_stamp));
            if let Some(c) = client_id {
                p.insert("clientId".into(), text(c.as_str()));
            }
            p.insert("text".into(), text(body));
        }
        Message::ChatPosted { client_id, time_stamp, server_time, text: body } => {
            p.insert("timeStamp".into(), int(time_stamp));
            p.insert("clientId".into(), text(client_id.as_str()));
            p.insert("serverTime".into(), int(server_time));
            p.insert("text".into(), text(body));
        }
        Message::HistoryList { from_seq, to_seq } => {
            p.insert("fromSeq".into(), int(from_seq));
            if let Some(to) = to_seq {
                p.insert("toSeq".into(), int(to));
            }
        }
        Message::HistoryEntries { entries } => {
            let list = entries.iter().map(|e| message_value(&Message::Event(e.clone()))).collect();
            p.insert("entries".into(), Value::Array(list));
        }
    }
    envelope(module, action, p)
}

fn peer_value(peer: &PeerInfo) -> Value {
    let mut m = Map::new();
    m.insert("clientId".into(), text(peer.client_id.as_str()));
    m.insert("color".into(), text(peer.color.to_string()));
    m.insert("username".into(), text(&peer.username));
    Value::Object(m)
}

fn params_value(params: &BTreeMap<String, f64>) -> Value {
    Value::Object(params.iter().map(|(k, v)| (k.clone(), real(*v))).collect())
}

fn path_value(path: &[PathCommand]) -> Value {
    let commands = path
        .iter()
        .map(|cmd| {
            let mut items = vec![text(cmd.letter())];
            items.extend(
                cmd.coords()
                    .into_iter()
                    .map(|c| to_json_number(c).map_or(Value::Null, Value::Number)),
            );
            Value::Array(items)
        })
        .collect();
    Value::Array(commands)
}

fn transform_value(t: &Transform2D) -> Value {
    let mut m = Map::new();
    m.insert("tx".into(), real(t.tx));
    m.insert("ty".into(), real(t.ty));
    m.insert("rotation".into(), real(t.rotation));
    m.insert("scaleX".into(), real(t.scale_x));
    m.insert("scaleY".into(), real(t.scale_y));
    Value::Object(m)
}

fn change_payload(change: &ChangeMessage) -> Map<String, Value> {
    let mut p = Map::new();
    p.insert("timeStamp".into(), int(change.time_stamp));
    p.insert("clientId".into(), text(change.client_id.as_str()));
    let layer = |p: &mut Map<String, Value>, id: &LayerId| {
        p.insert("layerId".into(), text(id.as_str()));
    };
    let vca = |p: &mut Map<String, Value>, id: &VcaId| {
        p.insert("vcaId".into(), text(id.as_str()));
    };
    match &change.action {
        DocAction::AddLayer { layer_id, name, asset } => {
            if let Some(id) = layer_id {
                layer(&mut p, id);
            }
            p.insert("name".into(), text(name));
            if let Some(a) = asset {
                p.insert("asset".into(), text(a));
            }
        }
        DocAction::DeleteLayer { layer_id }
        | DocAction::Lock { layer_id }
        | DocAction::Unlock { layer_id }
        | DocAction::ExclusiveLock { layer_id }
        | DocAction::ExclusiveUnlock { layer_id }
        | DocAction::UndoPath { layer_id }
        | DocAction::RedoPath { layer_id } => layer(&mut p, layer_id),
        DocAction::ReorderLayer { layer_id, to_index } => {
            layer(&mut p, layer_id);
            p.insert("toIndex".into(), int(to_index));
        }
        DocAction::UpdateLayerProperty { layer_id, patch } => {
            layer(&mut p, layer_id);
            if let Some(v) = patch.visible {
                p.insert("visible".into(), Value::Bool(v));
            }
            if let Some(o) = patch.opacity {
                p.insert("opacity".into(), real(o));
            }
            if let Some(n) = &patch.name {
                p.insert("name".into(), text(n));
            }
            if let Some(t) = &patch.transform {
                p.insert("transform".into(), transform_value(t));
            }
        }
        DocAction::NewPath { layer_id, stroke_id, color, width, path } => {
            if let Some(id) = layer_id {
                layer(&mut p, id);
            }
            if let Some(id) = stroke_id {
                p.insert("strokeId".into(), text(id.as_str()));
            }
            p.insert("color".into(), text(color.to_string()));
            p.insert("width".into(), real(*width));
            p.insert("path".into(), path_value(path));
        }
        DocAction::AddVca { layer_id, vca_id, effect, enabled, params } => {
            layer(&mut p, layer_id);
            if let Some(id) = vca_id {
                vca(&mut p, id);
            }
            p.insert("effect".into(), text(effect.name()));
            p.insert("enabled".into(), Value::Bool(*enabled));
            p.insert("params".into(), params_value(params));
        }
        DocAction::RemoveVca { layer_id, vca_id } => {
            layer(&mut p, layer_id);
            vca(&mut p, vca_id);
        }
        DocAction::ReorderVca { layer_id, vca_id, to_index } => {
            layer(&mut p, layer_id);
            vca(&mut p, vca_id);
            p.insert("toIndex".into(), int(to_index));
        }
        DocAction::UpdateVcaParam { layer_id, vca_id, params } => {
            layer(&mut p, layer_id);
            vca(&mut p, vca_id);
            p.insert("params".into(), params_value(params));
        }
        DocAction::SetVcaEnabled { layer_id, vca_id, enabled } => {
            layer(&mut p, layer_id);
            vca(&mut p, vca_id);
            p.insert("enabled".into(), Value::Bool(*enabled));
        }
    }
    p
}

// ---------------------------------------------------------------------------
// Decoding

type Result<T> = std::result::Result<T, DecodeError>;

/// Decodes and fully validates one frame. Never panics, whatever the input.
pub fn decode_message(bytes: &[u8]) -> Result<Message> {
    if bytes.len() > MAX_FRAME_BYTES {
        return Err(DecodeError::BadValue("frame".into()));
    }
    let value: Value =
        serde_json::from_slice(bytes).map_err(|_| DecodeError::BadValue("frame".into()))?;
    decode_value(&value)
}

/// Parses one changelog line.
pub fn decode_event(line: &str) -> Result<SequencedEvent> {
    match decode_message(line.as_bytes())? {
        Message::Event(e) => Ok(e),
        _ => Err(DecodeError::MissingField("seq".into())),
    }
}

/// Checks required fields and value ranges of one action payload.
pub fn validate_payload(module: &str, action: &str, payload: &Value) -> Result<()> {
    decode_payload(module, action, payload).map(drop)
}

fn decode_value(value: &Value) -> Result<Message> {
    let obj = value.as_object().ok_or_else(|| DecodeError::BadValue("frame".into()))?;
    let module = obj
        .get("module")
        .ok_or_else(|| DecodeError::MissingField("module".into()))?
        .as_str()
        .ok_or_else(|| DecodeError::BadValue("module".into()))?;
    if !REGISTRY.iter().any(|(m, _)| *m == module) {
        return Err(DecodeError::UnknownModule(module.to_owned()));
    }
    let message = obj
        .get("message")
        .ok_or_else(|| DecodeError::MissingField("message".into()))?
        .as_object()
        .ok_or_else(|| DecodeError::BadValue("message".into()))?;
    let mut entries = message.iter();
    let (Some((action, payload)), None) = (entries.next(), entries.next()) else {
        return Err(DecodeError::BadValue("message".into()));
    };
    decode_payload(module, action, payload)
}

fn decode_payload(module: &str, action: &str, payload: &Value) -> Result<Message> {
    if !REGISTRY.iter().any(|(m, _)| *m == module) {
        return Err(DecodeError::UnknownModule(module.to_owned()));
    }
    if !is_registered(module, action) {
        return Err(DecodeError::UnknownAction { module: module.into(), action: action.into() });
    }
    let f = Fields::root(payload, action)?;
    let msg = match (module, action) {
        ("session", "list") => Message::ListSessions,
        ("session", "overview") => {
            let sessions = f
                .list("sessions")?
                .map(|item| {
                    let s = item?;
                    Ok(SessionSummary {
                        session_id: s.string("sessionId")?,
                        name: s.string("name")?,
                        active_clients: s.uint("activeClients")?.try_into().map_err(|_| {
                            DecodeError::BadValue(s.path("activeClients"))
                        })?,
                    })
                })
                .collect::<Result<_>>()?;
            Message::Overview { sessions }
        }
        ("session", "join") => Message::Join {
            session_id: f.string("sessionId")?,
            client_id: f.opt_id("clientId")?,
            username: f.opt_string("username")?,
        },
        ("session", "identity") => {
            Message::Identity { client_id: f.id("clientId")?, color: f.color("color")? }
        }
        ("session", "snapshot") => match f.get("document") {
            None => Message::SnapshotRequest,
            Some(doc) => Message::Snapshot {
                seq: f.uint("seq")?,
                document: Box::new(
                    persist::document_from_value(doc.clone())
                        .map_err(|_| DecodeError::BadValue("document".into()))?,
                ),
            },
        },
        ("session", "joined") => Message::Joined {
            clients: f.list("clients")?.map(|p| peer(&p?)).collect::<Result<_>>()?,
        },
        ("session", "clientJoined") => Message::ClientJoined(peer(&f)?),
        ("session", "clientLeft") => Message::ClientLeft { client_id: f.id("clientId")? },
        ("session", "rejected") => {
            let reason = f.string("reason")?;
            Message::Rejected(Rejection {
                reason: RejectCode::parse(&reason)
                    .ok_or_else(|| DecodeError::BadValue("reason".into()))?,
                detail: f.opt_string("detail")?.unwrap_or_default(),
                ref_time_stamp: f.opt_int("refTimeStamp")?,
                ref_seq: f.opt_uint("refSeq")?,
            })
        }
        ("layer", "exclusiveUnlockNotice") => Message::UnlockNotice(UnlockNotice {
            layer_id: f.id("layerId")?,
            owner: f.id("owner")?,
            by: f.id("by")?,
            time_stamp: f.int("timeStamp")?,
        }),
        ("drawing" | "layer" | "pipeline", _) => {
            let change = ChangeMessage {
                client_id: f.id("clientId")?,
                time_stamp: f.int("timeStamp")?,
                action: doc_action(module, action, &f)?,
            };
            match f.opt_uint("seq")? {
                None => Message::Change(change),
                Some(0) => return Err(DecodeError::BadValue("seq".into())),
                Some(seq) => Message::Event(SequencedEvent {
                    seq,
                    server_time: f.int("serverTime")?,
                    change,
                }),
            }
        }
        ("presence", _) => {
            let presence = match action {
                "cursor" => Presence::Cursor { x: f.real("x")?, y: f.real("y")? },
                "selectLayer" => Presence::SelectLayer { layer_id: f.opt_id("layerId")? },
                "selectVca" => Presence::SelectVca {
                    layer_id: f.opt_id("layerId")?,
                    vca_id: f.opt_id("vcaId")?,
                },
                _ => Presence::SelectTool { tool: f.string("tool")? },
            };
            Message::Presence(PresenceUpdate { client_id: f.opt_id("clientId")?, presence })
        }
        ("chat", "post") => Message::ChatPost {
            client_id: f.opt_id("clientId")?,
            time_stamp: f.int("timeStamp")?,
            text: f.string("text")?,
        },
        ("chat", _) => Message::ChatPosted {
            client_id: f.id("clientId")?,
            time_stamp: f.int("timeStamp")?,
            server_time: f.int("serverTime")?,
            text: f.string("text")?,
        },
        ("history", "list") => {
            Message::HistoryList { from_seq: f.uint("fromSeq")?, to_seq: f.opt_uint("toSeq")? }
        }
        ("history", _) => {
            let raw = f.req("entries")?;
            let items = raw.as_array().ok_or_else(|| DecodeError::BadValue("entries".into()))?;
            let entries = items
                .iter()
                .enumerate()
                .map(|(i, v)| match decode_value(v) {
                    Ok(Message::Event(e)) => Ok(e),
                    _ => Err(DecodeError::BadValue(format!("entries[{i}]"))),
                })
                .collect::<Result<_>>()?;
            Message::HistoryEntries { entries }
        }
        _ => unreachable!("registry covers ({module}, {action})"),
    };
    Ok(msg)
}

fn peer(f: &Fields<'_>) -> Result<PeerInfo> {
    Ok(PeerInfo {
        client_id: f.id("clientId")?,
        color: f.color("color")?,
        username: f.opt_string("username")?.unwrap_or_default(),
    })
}

fn doc_action(module: &str, action: &str, f: &Fields<'_>) -> Result<DocAction> {
    let a = match (module, action) {
        ("layer", "add") => DocAction::AddLayer {
            layer_id: f.opt_id("layerId")?,
            name: f.opt_string("name")?.unwrap_or_else(|| "Layer".to_owned()),
            asset: f.opt_string("asset")?,
        },
        ("layer", "delete") => DocAction::DeleteLayer { layer_id: f.id("layerId")? },
        ("layer", "reorder") => {
            DocAction::ReorderLayer { layer_id: f.id("layerId")?, to_index: f.index("toIndex")? }
        }
        ("layer", "updateProperty") => {
            let opacity = f.opt_real("opacity")?;
            if opacity.is_some_and(|o| !(0.0..=1.0).contains(&o)) {
                return Err(DecodeError::BadValue(f.path("opacity")));
            }
            let transform = match f.get("transform") {
                None => None,
                Some(_) => {
                    let t = f.nested("transform")?;
                    Some(Transform2D {
                        tx: t.real("tx")?,
                        ty: t.real("ty")?,
                        rotation: t.real("rotation")?,
                        scale_x: t.real("scaleX")?,
                        scale_y: t.real("scaleY")?,
                    })
                }
            };
            DocAction::UpdateLayerProperty {
                layer_id: f.id("layerId")?,
                patch: LayerPatch {
                    visible: f.opt_bool("visible")?,
                    opacity,
                    name: f.opt_string("name")?,
                    transform,
                },
            }
        }
        ("layer", "lock") => DocAction::Lock { layer_id: f.id("layerId")? },
        ("layer", "unlock") => DocAction::Unlock { layer_id: f.id("layerId")? },
        ("layer", "exclusiveLock") => DocAction::ExclusiveLock { layer_id: f.id("layerId")? },
        ("layer", "exclusiveUnlock") => DocAction::ExclusiveUnlock { layer_id: f.id("layerId")? },
        ("drawing", "newPath") => {
            let width = f.real("width")?;
            if width <= 0.0 {
                return Err(DecodeError::BadValue(f.path("width")));
            }
            DocAction::NewPath {
                layer_id: f.opt_id("layerId")?,
                stroke_id: f.opt_id::<StrokeId>("strokeId")?,
                color: f.color("color")?,
                width,
                path: f.path_commands("path")?,
            }
        }
        ("drawing", "undoPath") => DocAction::UndoPath { layer_id: f.id("layerId")? },
        ("drawing", "redoPath") => DocAction::RedoPath { layer_id: f.id("layerId")? },
        ("pipeline", "addVca") => {
            let name = f.string("effect")?;
            let effect =
                Effect::from_name(&name).ok_or_else(|| DecodeError::BadValue(f.path("effect")))?;
            let params = match f.get("params") {
                Some(_) => f.params("params", Some(effect))?,
                None => BTreeMap::new(),
            };
            DocAction::AddVca {
                layer_id: f.id("layerId")?,
                vca_id: f.opt_id("vcaId")?,
                effect,
                enabled: f.opt_bool("enabled")?.unwrap_or(true),
                params,
            }
        }
        ("pipeline", "removeVca") => {
            DocAction::RemoveVca { layer_id: f.id("layerId")?, vca_id: f.id("vcaId")? }
        }
        ("pipeline", "reorderVca") => DocAction::ReorderVca {
            layer_id: f.id("layerId")?,
            vca_id: f.id("vcaId")?,
            to_index: f.index("toIndex")?,
        },
        ("pipeline", "updateParam") => DocAction::UpdateVcaParam {
            layer_id: f.id("layerId")?,
            vca_id: f.id("vcaId")?,
            params: f.params("params", None)?,
        },
        ("pipeline", "setEnabled") => DocAction::SetVcaEnabled {
            layer_id: f.id("layerId")?,
            vca_id: f.id("vcaId")?,
            enabled: f.bool("enabled")?,
        },
        _ => unreachable!("registry covers ({module}, {action})"),
    };
    Ok(a)
}

/// Accepts `[-+]digits[.digits][e[-+]digits]`, rejecting `inf`, `NaN` and
/// anything non-finite.
fn parse_decimal(s: &str) -> Option<f64> {
    let valid = !s.is_empty()
        && s.bytes().any(|b| b.is_ascii_digit())
        && s.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'-' | b'+' | b'.' | b'e' | b'E'));
    if !valid {
        return None;
    }
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn value_real(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64().filter(|x| x.is_finite()),
        Value::String(s) => parse_decimal(s),
        _ => None,
    }
}

fn value_int(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().and_then(integral_i64)),
        Value::String(s) => s.parse::<i64>().ok().or_else(|| parse_decimal(s).and_then(integral_i64)),
        _ => None,
    }
}

fn integral_i64(x: f64) -> Option<i64> {
    (x.fract() == 0.0 && x.abs() < 9.2e18).then_some(x as i64)
}

/// Payload reader that tracks field paths for error messages.
struct Fields<'a> {
    map: &'a Map<String, Value>,
    prefix: String,
}

impl<'a> Fields<'a> {
    fn root(v: &'a Value, action: &str) -> Result<Self> {
        match v {
            Value::Object(map) => Ok(Fields { map, prefix: String::new() }),
            _ => Err(DecodeError::BadValue(action.to_owned())),
        }
    }

    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_owned()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    /// `null` counts as absent.
    fn get(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn req(&self, key: &str) -> Result<&'a Value> {
        self.get(key).ok_or_else(|| DecodeError::MissingField(self.path(key)))
    }

    fn bad(&self, key: &str) -> DecodeError {
        DecodeError::BadValue(self.path(key))
    }

    fn nested(&self, key: &str) -> Result<Fields<'a>> {
        match self.req(key)? {
            Value::Object(map) => Ok(Fields { map, prefix: self.path(key) }),
            _ => Err(self.bad(key)),
        }
    }

    fn list(&self, key: &str) -> Result<impl Iterator<Item = Result<Fields<'a>>> + 'a> {
        let items = self.req(key)?.as_array().ok_or_else(|| self.bad(key))?;
        let base = self.path(key);
        Ok(items.iter().enumerate().map(move |(i, v)| match v {
            Value::Object(map) => Ok(Fields { map, prefix: format!("{base}[{i}]") }),
            _ => Err(DecodeError::BadValue(format!("{base}[{i}]"))),
        }))
    }

    fn string(&self, key: &str) -> Result<String> {
        self.req(key)?.as_str().map(str::to_owned).ok_or_else(|| self.bad(key))
    }

    fn opt_string(&self, key: &str) -> Result<Option<String>> {
        self.get(key)
            .map(|v| v.as_str().map(str::to_owned).ok_or_else(|| self.bad(key)))
            .transpose()
    }

    fn id<T: From<&'a str>>(&self, key: &str) -> Result<T> {
        match self.req(key)?.as_str() {
            Some(s) if !s.is_empty() => Ok(T::from(s)),
            _ => Err(self.bad(key)),
        }
    }

    fn opt_id<T: From<&'a str>>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.id(key).map(Some),
        }
    }

    fn real(&self, key: &str) -> Result<f64> {
        value_real(self.req(key)?).ok_or_else(|| self.bad(key))
    }

    fn opt_real(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| value_real(v).ok_or_else(|| self.bad(key))).transpose()
    }

    fn int(&self, key: &str) -> Result<i64> {
        value_int(self.req(key)?).ok_or_else(|| self.bad(key))
    }

    fn opt_int(&self, key: &str) -> Result<Option<i64>> {
        self.get(key).map(|v| value_int(v).ok_or_else(|| self.bad(key))).transpose()
    }

    fn uint(&self, key: &str) -> Result<u64> {
        u64::try_from(self.int(key)?).map_err(|_| self.bad(key))
    }

    fn opt_uint(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.uint(key).map(Some),
        }
    }

    fn index(&self, key: &str) -> Result<u32> {
        u32::try_from(self.uint(key)?).map_err(|_| self.bad(key))
    }

    fn bool(&self, key: &str) -> Result<bool> {
        self.req(key)?.as_bool().ok_or_else(|| self.bad(key))
    }

    fn opt_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key).map(|v| v.as_bool().ok_or_else(|| self.bad(key))).transpose()
    }

    fn color(&self, key: &str) -> Result<Color> {
        self.req(key)?
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.bad(key))
    }

    fn path_commands(&self, key: &str) -> Result<Vec<PathCommand>> {
        let items = self.req(key)?.as_array().ok_or_else(|| self.bad(key))?;
        if items.is_empty() {
            return Err(self.bad(key));
        }
        let mut out = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            let bad = || DecodeError::BadValue(format!("{}[{i}]", self.path(key)));
            let parts = item.as_array().ok_or_else(bad)?;
            let (letter, coords) = parts.split_first().ok_or_else(bad)?;
            let letter = letter.as_str().ok_or_else(bad)?;
            let coords = coords.iter().map(value_real).collect::<Option<Vec<f64>>>().ok_or_else(bad)?;
            let cmd = PathCommand::from_parts(letter, &coords).ok_or_else(bad)?;
            if i == 0 && !matches!(cmd, PathCommand::MoveTo { .. }) {
                return Err(bad());
            }
            out.push(cmd);
        }
        Ok(out)
    }

    /// Parameter map; every name must be a known parameter (of `effect`,
    /// when given) with an in-range value.
    fn params(&self, key: &str, effect: Option<Effect>) -> Result<BTreeMap<String, f64>> {
        let map = match self.req(key)? {
            Value::Object(map) => map,
            _ => return Err(self.bad(key)),
        };
        let mut out = BTreeMap::new();
        for (name, v) in map {
            let bad = || DecodeError::BadValue(format!("{}.{name}", self.path(key)));
            let spec = match effect {
                Some(e) => e.param(name),
                None => find_param(name).map(|(_, spec)| spec),
            }
            .ok_or_else(bad)?;
            let value = value_real(v).filter(|x| spec.accepts(*x)).ok_or_else(bad)?;
            out.insert(name.clone(), value);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn registry_is_closed() {
        assert!(is_registered("drawing", "newPath"));
        assert!(!is_registered("drawing", "erase"));
        assert_eq!(
            decode_message(br#"{"module":"drawing","message":{"erase":{}}}"#),
            Err(DecodeError::UnknownAction { module: "drawing".into(), action: "erase".into() })
        );
        assert_eq!(
            decode_message(br#"{"module":"voice","message":{"call":{}}}"#),
            Err(DecodeError::UnknownModule("voice".into()))
        );
    }

    #[test]
    fn envelope_shape_errors() {
        assert_eq!(
            decode_message(br#"{"message":{"cursor":{"x":0,"y":0}}}"#),
            Err(DecodeError::MissingField("module".into()))
        );
        assert_eq!(
            decode_message(br#"{"module":"presence"}"#),
            Err(DecodeError::MissingField("message".into()))
        );
        assert_eq!(
            decode_message(br#"{"module":"presence","message":{"cursor":{"x":0,"y":0},"selectTool":{"tool":"x"}}}"#),
            Err(DecodeError::BadValue("message".into()))
        );
        assert_eq!(decode_message(b"\xff\xfe"), Err(DecodeError::BadValue("frame".into())));
        assert_eq!(decode_message(b"[1,2]"), Err(DecodeError::BadValue("frame".into())));
    }

    #[test]
    fn oversized_frames_are_refused() {
        let big = vec![b' '; MAX_FRAME_BYTES + 1];
        assert_eq!(decode_message(&big), Err(DecodeError::BadValue("frame".into())));
    }

    #[test]
    fn cursor_at_origin() {
        let msg = decode_message(br#"{"module":"presence","message":{"cursor":{"x":0,"y":0}}}"#)
            .unwrap();
        assert_eq!(
            msg,
            Message::Presence(PresenceUpdate {
                client_id: None,
                presence: Presence::Cursor { x: 0.0, y: 0.0 }
            })
        );
    }

    #[test]
    fn opacity_out_of_range() {
        let payload = json!({"timeStamp": "1", "clientId": "a", "layerId": "L", "opacity": 1.5});
        assert_eq!(
            validate_payload("layer", "updateProperty", &payload),
            Err(DecodeError::BadValue("opacity".into()))
        );
    }

    #[test]
    fn path_must_start_with_move_to() {
        let payload = json!({
            "timeStamp": "1", "clientId": "a", "color": "#000000", "width": "1",
            "path": [["L", 1, 2]]
        });
        assert_eq!(
            validate_payload("drawing", "newPath", &payload),
            Err(DecodeError::BadValue("path[0]".into()))
        );
        let payload = json!({
            "timeStamp": "1", "clientId": "a", "color": "#000000", "width": "1",
            "path": [["M", 1, 2], ["Q", 1, 2]]
        });
        assert_eq!(
            validate_payload("drawing", "newPath", &payload),
            Err(DecodeError::BadValue("path[1]".into()))
        );
    }

    #[test]
    fn unknown_effect_parameter() {
        let payload = json!({
            "timeStamp": "1", "clientId": "a", "layerId": "L", "vcaId": "V",
            "params": {"sharpness": "0.2"}
        });
        assert_eq!(
            validate_payload("pipeline", "updateParam", &payload),
            Err(DecodeError::BadValue("params.sharpness".into()))
        );
        let payload = json!({
            "timeStamp": "1", "clientId": "a", "layerId": "L", "effect": "contrast",
            "params": {"zoom": "0.01"}
        });
        assert_eq!(
            validate_payload("pipeline", "addVca", &payload),
            Err(DecodeError::BadValue("params.zoom".into()))
        );
    }

    #[test]
    fn numbers_accepted_as_strings_or_numbers() {
        let a = json!({"timeStamp": "5", "clientId": "a", "layerId": "L", "opacity": "0.25"});
        let b = json!({"timeStamp": 5, "clientId": "a", "layerId": "L", "opacity": 0.25});
        assert_eq!(
            decode_payload("layer", "updateProperty", &a),
            decode_payload("layer", "updateProperty", &b)
        );
        for junk in ["inf", "NaN", "", "0x10", "1,5"] {
            let p = json!({"timeStamp": "5", "clientId": "a", "layerId": "L", "opacity": junk});
            assert_eq!(
                validate_payload("layer", "updateProperty", &p),
                Err(DecodeError::BadValue("opacity".into())),
                "{junk:?}"
            );
        }
    }

    #[test]
    fn sequenced_broadcast_carries_seq_and_server_time() {
        let change = ChangeMessage {
            client_id: "a".into(),
            time_stamp: 7,
            action: DocAction::Lock { layer_id: "L".into() },
        };
        let frame =
            encode_message(&Message::Event(SequencedEvent { seq: 3, server_time: 9, change }));
        assert_eq!(
            frame,
            r#"{"module":"layer","message":{"lock":{"timeStamp":"7","clientId":"a","layerId":"L","seq":"3","serverTime":"9"}}}"#
        );
    }

    #[test]
    fn empty_chat_round_trips() {
        let msg = Message::ChatPost { client_id: None, time_stamp: 1, text: String::new() };
        let frame = encode_message(&msg);
        assert_eq!(decode_message(frame.as_bytes()).unwrap(), msg);
    }

    #[test]
    fn snapshot_request_versus_snapshot() {
        let req = encode_message(&Message::SnapshotRequest);
        assert_eq!(req, r#"{"module":"session","message":{"snapshot":{}}}"#);
        assert_eq!(decode_message(req.as_bytes()).unwrap(), Message::SnapshotRequest);
        let snap = Message::Snapshot {
            seq: 4,
            document: Box::new(SessionDocument::new("d", 3, 2, 10)),
        };
        assert_eq!(decode_message(encode_message(&snap).as_bytes()).unwrap(), snap);
    }
}

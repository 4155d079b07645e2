//! Document (de)serialization and the on-disk session directory.
//!
//! ```text
//! <session-id>/
//!   document.json     latest autosaved document, plus the seq it reflects
//!   base.json         the document the changelog starts from
//!   changelog.jsonl   one sequenced event per line, append-only
//!   assets/<key>.png  8-bit RGBA source bitmaps
//! ```
//!
//! `document.json` is only a cache: on load the changelog is replayed over
//! `base.json` and the result must agree with it.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::document::{SequencedEvent, SessionDocument, FORMAT_VERSION};
use crate::history::VersionLog;
use crate::protocol::{decode_event, encode_event};
use crate::reducer::check_path;

pub const DOCUMENT_FILE: &str = "document.json";
pub const BASE_FILE: &str = "base.json";
pub const CHANGELOG_FILE: &str = "changelog.jsonl";
pub const ASSETS_DIR: &str = "assets";

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("document format version {found} is newer than supported version {supported}")]
    UnsupportedVersion { found: u64, supported: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl PersistError {
    fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        PersistError::Format { path: path.into(), reason: reason.into() }
    }

    fn io(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
        move |source| PersistError::Io { path: path.to_owned(), source }
    }
}

/// Canonical bytes of `doc`: compact JSON, keys in declaration order.
pub fn save_document(doc: &SessionDocument) -> Vec<u8> {
    serde_json::to_vec(doc).expect("document serialization is infallible")
}

pub fn document_value(doc: &SessionDocument) -> Value {
    serde_json::to_value(doc).expect("document serialization is infallible")
}

pub fn load_document(bytes: &[u8]) -> Result<SessionDocument, PersistError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| PersistError::format("document", e.to_string()))?;
    document_from_value(value)
}

/// Parses and validates a document. A top-level `seq` field is ignored.
pub fn document_from_value(mut value: Value) -> Result<SessionDocument, PersistError> {
    let obj = value
        .as_object_mut()
        .ok_or_else(|| PersistError::format("document", "expected an object"))?;
    obj.remove("seq");
    for key in ["meta", "layers"] {
        if !obj.contains_key(key) {
            return Err(PersistError::format(key, format!("missing field `{key}`")));
        }
    }
    let version = obj["meta"].get("version").and_then(Value::as_u64);
    if let Some(found) = version.filter(|v| *v > u64::from(FORMAT_VERSION)) {
        return Err(PersistError::UnsupportedVersion { found, supported: FORMAT_VERSION });
    }
    let doc: SessionDocument =
        serde_json::from_value(value).map_err(|e| PersistError::format("document", e.to_string()))?;
    validate_document(&doc)?;
    Ok(doc)
}

/// Asset keys double as file names.
pub fn is_valid_asset_key(key: &str) -> bool {
    !key.is_empty()
        && key.len() <= 128
        && key.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// Checks the invariants serde cannot express; the error names the first
/// offending field.
pub fn validate_document(doc: &SessionDocument) -> Result<(), PersistError> {
    let meta = &doc.meta;
    if meta.version < 1 {
        return Err(PersistError::format("meta.version", "must be at least 1"));
    }
    if meta.created_at < 0 {
        return Err(PersistError::format("meta.createdAt", "must not be negative"));
    }
    if meta.width < 1 || meta.height < 1 {
        return Err(PersistError::format("meta", "canvas must be at least 1x1"));
    }
    let mut seen = HashSet::new();
    for (i, layer) in doc.layers.iter().enumerate() {
        let at = |field: &str| format!("layers[{i}].{field}");
        if !seen.insert(&layer.id) {
            return Err(PersistError::format(at("id"), format!("duplicate layer id {}", layer.id)));
        }
        if !(0.0..=1.0).contains(&layer.opacity) {
            return Err(PersistError::format(at("opacity"), "must lie in [0, 1]"));
        }
        let t = &layer.transform;
        if !t.is_finite() || t.scale_x <= 0.0 || t.scale_y <= 0.0 {
            return Err(PersistError::format(at("transform"), "scales must be finite and positive"));
        }
        if !(0.0..360.0).contains(&t.rotation) {
            return Err(PersistError::format(at("transform.rotation"), "must lie in [0, 360)"));
        }
        if let Some(key) = &layer.asset {
            if !is_valid_asset_key(key) {
                return Err(PersistError::format(at("asset"), format!("invalid asset key {key:?}")));
            }
        }
        let mut strokes = HashSet::new();
        for (j, stroke) in layer.strokes.iter().enumerate() {
            let at = |field: &str| format!("layers[{i}].strokes[{j}].{field}");
            if !strokes.insert(&stroke.stroke_id) {
                return Err(PersistError::format(at("strokeId"), "duplicate stroke id"));
            }
            if !(stroke.width > 0.0 && stroke.width.is_finite()) {
                return Err(PersistError::format(at("width"), "must be positive"));
            }
            if let Err(field) = check_path(&stroke.path) {
                return Err(PersistError::format(at(&field), "invalid path command"));
            }
        }
        let mut vcas = HashSet::new();
        for (j, vca) in layer.pipeline.iter().enumerate() {
            let at = |field: &str| format!("layers[{i}].pipeline[{j}].{field}");
            if !vcas.insert(&vca.id) {
                return Err(PersistError::format(at("id"), "duplicate vca id"));
            }
            for (name, value) in &vca.params {
                if let Err(e) = vca.effect.check(name, *value) {
                    return Err(PersistError::format(at(&format!("params.{name}")), e.to_string()));
                }
            }
        }
    }
    Ok(())
}

/// `document.json` contents: the document plus the seq it reflects.
fn document_file_bytes(doc: &SessionDocument, seq: u64) -> Vec<u8> {
    let mut value = document_value(doc);
    if let Value::Object(map) = &mut value {
        map.insert("seq".into(), Value::from(seq));
    }
    let mut bytes = serde_json::to_vec_pretty(&value).expect("document serialization is infallible");
    bytes.push(b'\n');
    bytes
}

fn read_document_file(path: &Path) -> Result<(SessionDocument, Option<u64>), PersistError> {
    let bytes = fs::read(path).map_err(PersistError::io(path))?;
    let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let value: Value = serde_json::from_slice(&bytes)
        .map_err(|e| PersistError::format(name.clone(), e.to_string()))?;
    let seq = value.get("seq").map(|s| {
        s.as_u64().ok_or_else(|| PersistError::format(format!("{name}: seq"), "not an integer"))
    });
    let seq = seq.transpose()?;
    let doc = document_from_value(value).map_err(|e| match e {
        PersistError::Format { path, reason } => {
            PersistError::Format { path: format!("{name}: {path}"), reason }
        }
        other => other,
    })?;
    Ok((doc, seq))
}

/// Writes via a temporary sibling and a rename so readers never observe a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// A session as reconstructed from disk.
#[derive(Debug, Clone)]
pub struct LoadedSession {
    pub base: SessionDocument,
    pub log: VersionLog,
    pub document: SessionDocument,
}

impl LoadedSession {
    pub fn head(&self) -> u64 {
        self.log.head()
    }
}

/// Handle on one session directory.
#[derive(Debug, Clone)]
pub struct SessionDir {
    root: PathBuf,
}

impl SessionDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SessionDir { root: root.into() }
    }

    /// Creates a fresh session directory holding `doc` at seq 0.
    pub fn create(root: impl Into<PathBuf>, doc: &SessionDocument) -> Result<Self, PersistError> {
        let dir = SessionDir::new(root);
        let assets = dir.root.join(ASSETS_DIR);
        fs::create_dir_all(&assets).map_err(PersistError::io(&assets))?;
        let base = dir.root.join(BASE_FILE);
        write_atomic(&base, &document_file_bytes(doc, 0)).map_err(PersistError::io(&base))?;
        dir.write_document(doc, 0)?;
        let log = dir.changelog_path();
        File::create(&log).map_err(PersistError::io(&log))?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Directory name, used as the session id.
    pub fn id(&self) -> String {
        self.root.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())
    }

    pub fn document_path(&self) -> PathBuf {
        self.root.join(DOCUMENT_FILE)
    }

    pub fn changelog_path(&self) -> PathBuf {
        self.root.join(CHANGELOG_FILE)
    }

    pub fn assets_dir(&self) -> PathBuf {
        self.root.join(ASSETS_DIR)
    }

    pub fn asset_path(&self, key: &str) -> Option<PathBuf> {
        is_valid_asset_key(key).then(|| self.assets_dir().join(format!("{key}.png")))
    }

    pub fn write_document(&self, doc: &SessionDocument, seq: u64) -> Result<(), PersistError> {
        let path = self.document_path();
        write_atomic(&path, &document_file_bytes(doc, seq)).map_err(PersistError::io(&path))
    }

    /// Appends one event and syncs it to disk before returning.
    pub fn append_event(&self, event: &SequencedEvent) -> Result<(), PersistError> {
        let path = self.changelog_path();
        let mut line = encode_event(event);
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(PersistError::io(&path))?;
        f.write_all(line.as_bytes()).map_err(PersistError::io(&path))?;
        f.sync_data().map_err(PersistError::io(&path))
    }

    pub fn write_asset(&self, key: &str, png: &[u8]) -> Result<(), PersistError> {
        let path = self
            .asset_path(key)
            .ok_or_else(|| PersistError::format("asset", format!("invalid asset key {key:?}")))?;
        fs::create_dir_all(self.assets_dir()).map_err(PersistError::io(&path))?;
        write_atomic(&path, png).map_err(PersistError::io(&path))
    }

    /// Reads the changelog. A final line without its newline is the trace of
    /// an interrupted append: it is dropped and the file truncated to the last
    /// complete line.
    pub fn read_changelog(&self) -> Result<Vec<SequencedEvent>, PersistError> {
        let path = self.changelog_path();
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(PersistError::Io { path, source: e }),
        };
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            tracing::warn!(path = %path.display(), "dropping incomplete trailing changelog line");
            let f = OpenOptions::new().write(true).open(&path).map_err(PersistError::io(&path))?;
            f.set_len(complete as u64).map_err(PersistError::io(&path))?;
        }
        let text = std::str::from_utf8(&bytes[..complete])
            .map_err(|_| PersistError::format(CHANGELOG_FILE, "not UTF-8"))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| {
                decode_event(line).map_err(|e| {
                    PersistError::format(format!("{CHANGELOG_FILE}:{}", i + 1), e.to_string())
                })
            })
            .collect()
    }

    /// Replays the changelog over the base document and cross-checks the
    /// autosaved `document.json`. A directory holding only `document.json`
    /// is read as a session at seq 0.
    pub fn load(&self) -> Result<LoadedSession, PersistError> {
        let base_path = self.root.join(BASE_FILE);
        let (saved, saved_seq) = read_document_file(&self.document_path())?;
        let base = if base_path.exists() {
            read_document_file(&base_path)?.0
        } else if saved_seq.unwrap_or(0) == 0 {
            saved.clone()
        } else {
            return Err(PersistError::format(BASE_FILE, "missing"));
        };
        let events = self.read_changelog()?;
        let (log, document) = VersionLog::rebuild(&base, events)
            .map_err(|e| PersistError::format(CHANGELOG_FILE, e.to_string()))?;
        let seq = saved_seq.unwrap_or(log.head());
        let expected = log
            .replay(&base, seq)
            .map_err(|e| PersistError::format(DOCUMENT_FILE, e.to_string()))?;
        if save_document(&expected) != save_document(&saved) {
            return Err(PersistError::format(
                DOCUMENT_FILE,
                format!("does not match the changelog replayed to seq {seq}"),
            ));
        }
        Ok(LoadedSession { base, log, document })
    }
}

/// Reads a document from a session directory or a bare JSON file.
pub fn read_document_at(path: &Path) -> Result<(SessionDocument, u64), PersistError> {
    if path.is_dir() {
        let loaded = SessionDir::new(path).load()?;
        let head = loaded.head();
        Ok((loaded.document, head))
    } else {
        let (doc, seq) = read_document_file(path)?;
        Ok((doc, seq.unwrap_or(0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::{ChangeMessage, DocAction, Layer, LayerId, LayerPatch};

    fn event(seq: u64, action: DocAction) -> SequencedEvent {
        let mut action = action;
        action.assign_ids(seq);
        SequencedEvent {
            seq,
            server_time: 1000 + seq as i64,
            change: ChangeMessage { client_id: "c".into(), time_stamp: seq as i64, action },
        }
    }

    #[test]
    fn empty_document_is_a_fixed_point() {
        let doc = SessionDocument::new("empty", 800, 600, 0);
        let bytes = save_document(&doc);
        let again = save_document(&load_document(&bytes).unwrap());
        assert_eq!(bytes, again);
    }

    #[test]
    fn missing_layers_is_named() {
        let err = load_document(br#"{"meta":{"name":"x","createdAt":0,"version":1,"width":1,"height":1}}"#)
            .unwrap_err();
        match err {
            PersistError::Format { path, reason } => {
                assert_eq!(path, "layers");
                assert!(reason.contains("layers"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn newer_versions_are_refused() {
        let err = load_document(
            br#"{"meta":{"name":"x","createdAt":0,"version":2,"width":1,"height":1},"layers":[]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, PersistError::UnsupportedVersion { found: 2, .. }));
    }

    #[test]
    fn invariant_violations_carry_field_paths() {
        let mut doc = SessionDocument::new("x", 4, 4, 0);
        let mut layer = Layer::new(LayerId::from("a"), "a");
        layer.opacity = 1.5;
        doc.layers.push(layer);
        let err = load_document(&save_document(&doc)).unwrap_err();
        assert!(matches!(err, PersistError::Format { ref path, .. } if path == "layers[0].opacity"));

        doc.layers[0].opacity = 1.0;
        doc.layers.push(Layer::new(LayerId::from("a"), "dup"));
        let err = load_document(&save_document(&doc)).unwrap_err();
        assert!(matches!(err, PersistError::Format { ref path, .. } if path == "layers[1].id"));
    }

    #[test]
    fn session_dir_replays_changelog() {
        let tmp = tempfile::tempdir().unwrap();
        let base = SessionDocument::new("s", 16, 16, 0);
        let dir = SessionDir::create(tmp.path().join("s1"), &base).unwrap();
        let e1 = event(1, DocAction::AddLayer { layer_id: None, name: "one".into(), asset: None });
        let layer = LayerId::for_seq(1);
        let e2 = event(
            2,
            DocAction::UpdateLayerProperty {
                layer_id: layer.clone(),
                patch: LayerPatch { opacity: Some(0.25), ..Default::default() },
            },
        );
        dir.append_event(&e1).unwrap();
        dir.append_event(&e2).unwrap();
        let loaded = dir.load().unwrap();
        assert_eq!(loaded.head(), 2);
        assert_eq!(loaded.document.layer(&layer).unwrap().opacity, 0.25);

        dir.write_document(&loaded.document, 2).unwrap();
        assert_eq!(dir.load().unwrap().document, loaded.document);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let tmp = tempfile::tempdir().unwrap();
        let base = SessionDocument::new("s", 16, 16, 0);
        let dir = SessionDir::create(tmp.path().join("s1"), &base).unwrap();
        dir.append_event(&event(1, DocAction::AddLayer { layer_id: None, name: "a".into(), asset: None }))
            .unwrap();
        let mut f = OpenOptions::new().append(true).open(dir.changelog_path()).unwrap();
        f.write_all(br#"{"module":"layer","mess"#).unwrap();
        drop(f);
        assert_eq!(dir.load().unwrap().head(), 1);
        dir.append_event(&event(2, DocAction::AddLayer { layer_id: None, name: "b".into(), asset: None }))
            .unwrap();
        assert_eq!(dir.load().unwrap().head(), 2);
    }

    #[test]
    fn stale_document_json_must_agree_with_replay() {
        let tmp = tempfile::tempdir().unwrap();
        let base = SessionDocument::new("s", 16, 16, 0);
        let dir = SessionDir::create(tmp.path().join("s1"), &base).unwrap();
        dir.append_event(&event(1, DocAction::AddLayer { layer_id: None, name: "a".into(), asset: None }))
            .unwrap();
        // Autosave lagging behind the changelog is fine.
        assert_eq!(dir.load().unwrap().head(), 1);
        // An autosave claiming seq 0 but holding other content is not.
        let mut wrong = base.clone();
        wrong.meta.name = "other".into();
        dir.write_document(&wrong, 0).unwrap();
        assert!(matches!(dir.load(), Err(PersistError::Format { .. })));
    }

    #[test]
    fn asset_keys_are_file_name_safe() {
        assert!(is_valid_asset_key("L000000000001"));
        assert!(!is_valid_asset_key("../etc"));
        assert!(!is_valid_asset_key(""));
        assert!(SessionDir::new("/x").asset_path("a/b").is_none());
    }
}

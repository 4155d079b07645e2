//! The session document model.
//!
//! A [`SessionDocument`] is project metadata plus an ordered layer array,
//! index 0 being the bottom-most layer. Strokes are kept as vector paths and
//! only rasterized at render time.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::effect::Effect;
use crate::real;

/// Highest document format version this build reads and writes.
pub const FORMAT_VERSION: u32 = 1;

/// Lower bound applied to incoming scale factors.
pub const MIN_SCALE: f64 = 1e-3;

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

id_type!(
    /// Server-assigned identity of a connected participant.
    ClientId
);
id_type!(LayerId);
id_type!(StrokeId);
id_type!(VcaId);

/// Width of the zero-padded sequence number in server-generated ids, which
/// keeps ids lexically sortable in creation order.
const SEQ_ID_DIGITS: usize = 12;

impl LayerId {
    pub fn for_seq(seq: u64) -> Self {
        Self(format!("L{seq:0SEQ_ID_DIGITS$}"))
    }
}

impl StrokeId {
    pub fn for_seq(seq: u64) -> Self {
        Self(format!("S{seq:0SEQ_ID_DIGITS$}"))
    }
}

impl VcaId {
    pub fn for_seq(seq: u64) -> Self {
        Self(format!("V{seq:0SEQ_ID_DIGITS$}"))
    }
}

/// An opaque `#RRGGBB` color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Color(pub [u8; 3]);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("color must be `#` followed by exactly 6 hex digits, got {0:?}")]
pub struct ColorParseError(String);

impl Color {
    pub const fn rgb(r: u8, g: u8, b: u8) -> Self {
        Color([r, g, b])
    }
}

impl FromStr for Color {
    type Err = ColorParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ColorParseError(s.to_owned());
        let hex = s.strip_prefix('#').ok_or_else(err)?;
        if hex.len() != 6 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(err());
        }
        let channel = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| err());
        Ok(Color([channel(0)?, channel(2)?, channel(4)?]))
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [r, g, b] = self.0;
        write!(f, "#{r:02X}{g:02X}{b:02X}")
    }
}

impl Serialize for Color {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Color {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DocumentMeta {
    pub name: String,
    /// UTC milliseconds.
    pub created_at: i64,
    pub version: u32,
    pub width: u32,
    pub height: u32,
}

/// Placement of a layer on the canvas.
///
/// `tx`/`ty` move the layer center away from the canvas center; rotation is
/// in degrees, counter-clockwise as seen on screen, about the layer center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Transform2D {
    #[serde(with = "real")]
    pub tx: f64,
    #[serde(with = "real")]
    pub ty: f64,
    #[serde(with = "real")]
    pub rotation: f64,
    #[serde(with = "real")]
    pub scale_x: f64,
    #[serde(with = "real")]
    pub scale_y: f64,
}

impl Default for Transform2D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Transform2D {
    pub const IDENTITY: Transform2D =
        Transform2D { tx: 0.0, ty: 0.0, rotation: 0.0, scale_x: 1.0, scale_y: 1.0 };

    pub fn is_finite(&self) -> bool {
        [self.tx, self.ty, self.rotation, self.scale_x, self.scale_y]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Clamps scales to [`MIN_SCALE`] and folds rotation into `[0, 360)`.
    pub fn normalized(self) -> Self {
        let mut rotation = self.rotation.rem_euclid(360.0);
        if rotation >= 360.0 {
            rotation = 0.0;
        }
        Transform2D {
            rotation,
            scale_x: self.scale_x.max(MIN_SCALE),
            scale_y: self.scale_y.max(MIN_SCALE),
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExclusiveLock {
    pub owner: ClientId,
    /// UTC milliseconds at which the lock was taken.
    pub since: i64,
}

/// One command of a stroke path, in layer-local pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathCommand {
    MoveTo { x: f64, y: f64 },
    LineTo { x: f64, y: f64 },
    QuadTo { cx: f64, cy: f64, x: f64, y: f64 },
}

impl PathCommand {
    pub fn letter(&self) -> &'static str {
        match self {
            PathCommand::MoveTo { .. } => "M",
            PathCommand::LineTo { .. } => "L",
            PathCommand::QuadTo { .. } => "Q",
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        match *self {
            PathCommand::MoveTo { x, y } | PathCommand::LineTo { x, y } => vec![x, y],
            PathCommand::QuadTo { cx, cy, x, y } => vec![cx, cy, x, y],
        }
    }

    pub fn end_point(&self) -> (f64, f64) {
        match *self {
            PathCommand::MoveTo { x, y }
            | PathCommand::LineTo { x, y }
            | PathCommand::QuadTo { x, y, .. } => (x, y),
        }
    }

    /// Builds a command from its letter and coordinate list, checking arity.
    pub fn from_parts(letter: &str, coords: &[f64]) -> Option<PathCommand> {
        match (letter, coords) {
            ("M", &[x, y]) => Some(PathCommand::MoveTo { x, y }),
            ("L", &[x, y]) => Some(PathCommand::LineTo { x, y }),
            ("Q", &[cx, cy, x, y]) => Some(PathCommand::QuadTo { cx, cy, x, y }),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|c| c.is_finite())
    }
}

impl Serialize for PathCommand {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let coords = self.coords();
        let mut seq = s.serialize_seq(Some(coords.len() + 1))?;
        seq.serialize_element(self.letter())?;
        for c in coords {
            match real::as_exact_int(c) {
                Some(i) => seq.serialize_element(&i)?,
                None => seq.serialize_element(&c)?,
            }
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for PathCommand {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct CommandVisitor;

        impl<'de> Visitor<'de> for CommandVisitor {
            type Value = PathCommand;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a path command such as [\"M\", x, y]")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<PathCommand, A::Error> {
                let letter: String =
                    seq.next_element()?.ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let mut coords = Vec::with_capacity(4);
                while let Some(c) = seq.next_element::<f64>()? {
                    if coords.len() == 4 {
                        return Err(de::Error::invalid_length(6, &self));
                    }
                    coords.push(c);
                }
                PathCommand::from_parts(&letter, &coords).ok_or_else(|| {
                    de::Error::custom(format!(
                        "command `{letter}` with {} coordinates",
                        coords.len()
                    ))
                })
            }
        }

        d.deserialize_seq(CommandVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Stroke {
    pub stroke_id: StrokeId,
    pub client_id: ClientId,
    pub time_stamp: i64,
    pub color: Color,
    #[serde(with = "real")]
    pub width: f64,
    pub path: Vec<PathCommand>,
    pub undone: bool,
}

/// An effect instance in a layer pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VcaInstance {
    pub id: VcaId,
    pub effect: Effect,
    pub enabled: bool,
    #[serde(with = "real::map")]
    pub params: BTreeMap<String, f64>,
}

impl VcaInstance {
    /// Current value of `name`, falling back to the effect default.
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params
            .get(name)
            .copied()
            .or_else(|| self.effect.param(name).map(|p| p.default))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Layer {
    pub id: LayerId,
    pub name: String,
    pub visible: bool,
    pub locked: bool,
    #[serde(default)]
    pub exclusive_lock: Option<ExclusiveLock>,
    pub transform: Transform2D,
    #[serde(with = "real")]
    pub opacity: f64,
    /// Key of the source bitmap, stored as `assets/<key>.png`.
    #[serde(default)]
    pub asset: Option<String>,
    pub strokes: Vec<Stroke>,
    pub pipeline: Vec<VcaInstance>,
}

impl Layer {
    pub fn new(id: LayerId, name: impl Into<String>) -> Self {
        Layer {
            id,
            name: name.into(),
            visible: true,
            locked: false,
            exclusive_lock: None,
            transform: Transform2D::IDENTITY,
            opacity: 1.0,
            asset: None,
            strokes: Vec::new(),
            pipeline: Vec::new(),
        }
    }

    pub fn vca(&self, id: &VcaId) -> Option<&VcaInstance> {
        self.pipeline.iter().find(|v| &v.id == id)
    }

    pub fn exclusive_owner(&self) -> Option<&ClientId> {
        self.exclusive_lock.as_ref().map(|l| &l.owner)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDocument {
    pub meta: DocumentMeta,
    pub layers: Vec<Layer>,
}

impl SessionDocument {
    pub fn new(name: impl Into<String>, width: u32, height: u32, created_at: i64) -> Self {
        SessionDocument {
            meta: DocumentMeta {
                name: name.into(),
                created_at,
                version: FORMAT_VERSION,
                width: width.max(1),
                height: height.max(1),
            },
            layers: Vec::new(),
        }
    }

    pub fn layer(&self, id: &LayerId) -> Option<&Layer> {
        self.layers.iter().find(|l| &l.id == id)
    }

    pub fn layer_mut(&mut self, id: &LayerId) -> Option<&mut Layer> {
        self.layers.iter_mut().find(|l| &l.id == id)
    }

    pub fn layer_index(&self, id: &LayerId) -> Option<usize> {
        self.layers.iter().position(|l| &l.id == id)
    }

    /// Canonical serialization, the byte-equality oracle for convergence.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        crate::persist::save_document(self)
    }
}

/// Typed payload of a document-mutating change.
///
/// Ids of newly created entities (`layer_id` of [`DocAction::AddLayer`],
/// `stroke_id`, `vca_id` of additions) are filled in by the sequencer; a
/// change without them is rejected as malformed.
#[derive(Debug, Clone, PartialEq)]
pub enum DocAction {
    AddLayer { layer_id: Option<LayerId>, name: String, asset: Option<String> },
    DeleteLayer { layer_id: LayerId },
    ReorderLayer { layer_id: LayerId, to_index: u32 },
    UpdateLayerProperty { layer_id: LayerId, patch: LayerPatch },
    Lock { layer_id: LayerId },
    Unlock { layer_id: LayerId },
    ExclusiveLock { layer_id: LayerId },
    ExclusiveUnlock { layer_id: LayerId },
    /// `layer_id` is optional on the wire; a stroke without a target layer
    /// is rejected by the reducer.
    NewPath {
        layer_id: Option<LayerId>,
        stroke_id: Option<StrokeId>,
        color: Color,
        width: f64,
        path: Vec<PathCommand>,
    },
    UndoPath { layer_id: LayerId },
    RedoPath { layer_id: LayerId },
    AddVca {
        layer_id: LayerId,
        vca_id: Option<VcaId>,
        effect: Effect,
        enabled: bool,
        params: BTreeMap<String, f64>,
    },
    RemoveVca { layer_id: LayerId, vca_id: VcaId },
    ReorderVca { layer_id: LayerId, vca_id: VcaId, to_index: u32 },
    UpdateVcaParam { layer_id: LayerId, vca_id: VcaId, params: BTreeMap<String, f64> },
    SetVcaEnabled { layer_id: LayerId, vca_id: VcaId, enabled: bool },
}

/// Partial update of layer properties; absent fields are left alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerPatch {
    pub visible: Option<bool>,
    pub opacity: Option<f64>,
    pub name: Option<String>,
    pub transform: Option<Transform2D>,
}

impl DocAction {
    /// `(module, action)` pair on the wire.
    pub fn wire_name(&self) -> (&'static str, &'static str) {
        match self {
            DocAction::AddLayer { .. } => ("layer", "add"),
            DocAction::DeleteLayer { .. } => ("layer", "delete"),
            DocAction::ReorderLayer { .. } => ("layer", "reorder"),
            DocAction::UpdateLayerProperty { .. } => ("layer", "updateProperty"),
            DocAction::Lock { .. } => ("layer", "lock"),
            DocAction::Unlock { .. } => ("layer", "unlock"),
            DocAction::ExclusiveLock { .. } => ("layer", "exclusiveLock"),
            DocAction::ExclusiveUnlock { .. } => ("layer", "exclusiveUnlock"),
            DocAction::NewPath { .. } => ("drawing", "newPath"),
            DocAction::UndoPath { .. } => ("drawing", "undoPath"),
            DocAction::RedoPath { .. } => ("drawing", "redoPath"),
            DocAction::AddVca { .. } => ("pipeline", "addVca"),
            DocAction::RemoveVca { .. } => ("pipeline", "removeVca"),
            DocAction::ReorderVca { .. } => ("pipeline", "reorderVca"),
            DocAction::UpdateVcaParam { .. } => ("pipeline", "updateParam"),
            DocAction::SetVcaEnabled { .. } => ("pipeline", "setEnabled"),
        }
    }

    /// The existing layer this action operates on, if any.
    pub fn target_layer(&self) -> Option<&LayerId> {
        match self {
            DocAction::AddLayer { .. } => None,
            DocAction::NewPath { layer_id, .. } => layer_id.as_ref(),
            DocAction::DeleteLayer { layer_id }
            | DocAction::ReorderLayer { layer_id, .. }
            | DocAction::UpdateLayerProperty { layer_id, .. }
            | DocAction::Lock { layer_id }
            | DocAction::Unlock { layer_id }
            | DocAction::ExclusiveLock { layer_id }
            | DocAction::ExclusiveUnlock { layer_id }
            | DocAction::UndoPath { layer_id }
            | DocAction::RedoPath { layer_id }
            | DocAction::AddVca { layer_id, .. }
            | DocAction::RemoveVca { layer_id, .. }
            | DocAction::ReorderVca { layer_id, .. }
            | DocAction::UpdateVcaParam { layer_id, .. }
            | DocAction::SetVcaEnabled { layer_id, .. } => Some(layer_id),
        }
    }

    pub fn is_transform_update(&self) -> bool {
        matches!(self, DocAction::UpdateLayerProperty { patch, .. } if patch.transform.is_some())
    }

    /// Lock toggles and reordering leave the layer's own content alone.
    pub fn mutates_layer_content(&self) -> bool {
        !matches!(
            self,
            DocAction::AddLayer { .. }
                | DocAction::ReorderLayer { .. }
                | DocAction::Lock { .. }
                | DocAction::Unlock { .. }
                | DocAction::ExclusiveLock { .. }
                | DocAction::ExclusiveUnlock { .. }
        )
    }

    /// Stamps server-generated ids derived from `seq` onto creating actions.
    /// Client-proposed ids are overwritten.
    pub fn assign_ids(&mut self, seq: u64) {
        match self {
            DocAction::AddLayer { layer_id, .. } => *layer_id = Some(LayerId::for_seq(seq)),
            DocAction::NewPath { stroke_id, .. } => *stroke_id = Some(StrokeId::for_seq(seq)),
            DocAction::AddVca { vca_id, .. } => *vca_id = Some(VcaId::for_seq(seq)),
            _ => {}
        }
    }
}

/// One client-initiated document mutation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeMessage {
    pub client_id: ClientId,
    /// Client clock, UTC milliseconds; advisory only.
    pub time_stamp: i64,
    pub action: DocAction,
}

/// A change accepted by the sequencer.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencedEvent {
    pub seq: u64,
    /// Server clock at acceptance, UTC milliseconds.
    pub server_time: i64,
    pub change: ChangeMessage,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_parses_exactly_six_hex_digits() {
        let c: Color = "#795EB3".parse().unwrap();
        assert_eq!(c, Color::rgb(0x79, 0x5e, 0xb3));
        assert_eq!(c.to_string(), "#795EB3");
        assert!("#795EB".parse::<Color>().is_err());
        assert!("795EB3".parse::<Color>().is_err());
        assert!("#795EB3A".parse::<Color>().is_err());
        assert!("#79xEB3".parse::<Color>().is_err());
    }

    #[test]
    fn seq_ids_sort_in_creation_order() {
        assert!(LayerId::for_seq(9) < LayerId::for_seq(10));
        assert!(StrokeId::for_seq(99) < StrokeId::for_seq(100));
        assert_eq!(VcaId::for_seq(7).as_str(), "V000000000007");
    }

    #[test]
    fn transform_normalization() {
        let t = Transform2D { rotation: -90.0, scale_x: 0.0, scale_y: -2.0, ..Default::default() }
            .normalized();
        assert_eq!(t.rotation, 270.0);
        assert_eq!(t.scale_x, MIN_SCALE);
        assert_eq!(t.scale_y, MIN_SCALE);
        assert_eq!(Transform2D { rotation: 720.0, ..Default::default() }.normalized().rotation, 0.0);
        // A tiny negative angle must not land on 360 itself.
        let r = Transform2D { rotation: -1e-20, ..Default::default() }.normalized().rotation;
        assert!((0.0..360.0).contains(&r));
    }

    #[test]
    fn path_command_arity() {
        assert!(PathCommand::from_parts("M", &[1.0, 2.0]).is_some());
        assert!(PathCommand::from_parts("M", &[1.0]).is_none());
        assert!(PathCommand::from_parts("Q", &[1.0, 2.0]).is_none());
        assert!(PathCommand::from_parts("Z", &[]).is_none());
        let q: PathCommand = serde_json::from_str(r#"["Q",447,38,448,38]"#).unwrap();
        assert_eq!(q, PathCommand::QuadTo { cx: 447.0, cy: 38.0, x: 448.0, y: 38.0 });
        assert_eq!(serde_json::to_string(&q).unwrap(), r#"["Q",447,38,448,38]"#);
        assert!(serde_json::from_str::<PathCommand>(r#"["L",1,2,3]"#).is_err());
    }
}

//! Core of the colier collaborative raster editor.
//!
//! Everything here is pure and free of networking:
//!
//! * [`document`] holds the session document model and its identifiers.
//! * [`reducer`] applies change messages to a document, enforcing lock rules.
//! * [`history`] keeps the sequenced change log with periodic snapshots.
//! * [`persist`] reads and writes documents and session directories.
//! * [`protocol`] is the text wire format spoken between clients and server.
//! * [`raster`] renders documents to RGBA bitmaps deterministically.

pub mod document;
pub mod effect;
pub mod history;
pub mod lease;
pub mod persist;
pub mod protocol;
pub mod raster;
pub mod reducer;
mod real;

pub use document::{
    ChangeMessage, ClientId, Color, DocAction, DocumentMeta, ExclusiveLock, Layer, LayerId,
    LayerPatch, PathCommand, SequencedEvent, SessionDocument, Stroke, StrokeId, Transform2D,
    VcaId, VcaInstance,
};
pub use effect::Effect;
pub use history::{HistoryError, VersionLog, SNAPSHOT_INTERVAL};
pub use lease::{TransformLeaseTable, LEASE_TTL_MS};
pub use reducer::{apply_change, check_permission, Denial, DomainEvent, Permission, RejectReason};

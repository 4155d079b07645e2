//! Deterministic CPU rendering.
//!
//! All 8-bit results are rounded half-up, so renders are byte-stable across
//! platforms.

mod filter;
mod image;
mod path;
mod render;
mod stroke;

pub use self::filter::apply_vca;
pub use self::image::{decode_png, encode_png, export_image, RasterImage};
pub use self::path::{flatten_path, flatten_subpaths, Point, FLATTEN_TOLERANCE};
pub use self::render::{
    composite, composite_layers, render_document, render_layer, render_layer_content, AssetStore,
};
pub use self::stroke::rasterize_stroke;

use std::path::PathBuf;

use crate::document::LayerId;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("asset for layer {0} is missing")]
    MissingAsset(LayerId),
    #[error("image is {found:?}, expected {expected:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error("invalid value for `{0}`")]
    InvalidValue(String),
    #[error("malformed path: {0}")]
    MalformedPath(String),
    #[error("png: {0}")]
    Png(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// `floor(x + 0.5)` clamped to a byte.
#[inline]
pub(crate) fn round_u8(x: f64) -> u8 {
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

use std::collections::HashMap;
use std::path::Path;

use crate::document::{Layer, SessionDocument, Transform2D};

use super::{apply_vca, decode_png, rasterize_stroke, round_u8, RasterError, RasterImage};

/// Decoded source bitmaps by asset key.
#[derive(Debug, Clone, Default)]
pub struct AssetStore {
    images: HashMap<String, RasterImage>,
}

impl AssetStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, img: RasterImage) {
        self.images.insert(key.into(), img);
    }

    pub fn get(&self, key: &str) -> Option<&RasterImage> {
        self.images.get(key)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Loads every `<key>.png` in `dir`; a missing directory is an empty store.
    pub fn load_dir(dir: &Path) -> Result<Self, RasterError> {
        let io = |source| RasterError::Io { path: dir.to_owned(), source };
        let mut store = AssetStore::new();
        let entries = match std::fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(store),
            Err(e) => return Err(io(e)),
        };
        for entry in entries {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let Some(key) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let bytes =
                std::fs::read(&path).map_err(|source| RasterError::Io { path: path.clone(), source })?;
            store.insert(key, decode_png(&bytes)?);
        }
        Ok(store)
    }
}

/// cos and sin of `degrees`, exact at multiples of 90.
fn cos_sin(degrees: f64) -> (f64, f64) {
    match degrees {
        d if d == 0.0 => (1.0, 0.0),
        d if d == 90.0 => (0.0, 1.0),
        d if d == 180.0 => (-1.0, 0.0),
        d if d == 270.0 => (0.0, -1.0),
        d => {
            let r = d.to_radians();
            (r.cos(), r.sin())
        }
    }
}

/// Bilinear sample in premultiplied space; outside the image is transparent.
/// `(u, v)` are continuous index coordinates (pixel centers at integers).
fn sample_premultiplied(img: &RasterImage, u: f64, v: f64) -> [f64; 4] {
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    let (fx, fy) = (u.floor(), v.floor());
    let (tx, ty) = (u - fx, v - fy);
    let mut acc = [0.0; 4];
    if !(fx.is_finite() && fy.is_finite()) || fx < -2.0 || fy < -2.0 {
        return acc;
    }
    if fx > w as f64 || fy > h as f64 {
        return acc;
    }
    let (x0, y0) = (fx as i64, fy as i64);
    for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
        for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
            let weight = wx * wy;
            let (x, y) = (x0 + dx, y0 + dy);
            if weight == 0.0 || x < 0 || y < 0 || x >= w || y >= h {
                continue;
            }
            let p = img.pixel(x as u32, y as u32);
            let a = f64::from(p[3]) * weight;
            acc[0] += f64::from(p[0]) * a;
            acc[1] += f64::from(p[1]) * a;
            acc[2] += f64::from(p[2]) * a;
            acc[3] += a;
        }
    }
    acc
}

/// Maps `src` into a `width x height` canvas.
///
/// A layer pixel `p` lands at `C + t + R S (p - c)`, with `c` the center of
/// the layer bitmap, `C` the canvas center and `R` a counter-clockwise (on
/// screen) rotation. Each canvas pixel center is pulled back through the
/// inverse map and sampled bilinearly.
fn transform_into_canvas(src: &RasterImage, t: &Transform2D, width: u32, height: u32) -> RasterImage {
    if *t == Transform2D::IDENTITY && src.dimensions() == (width, height) {
        return src.clone();
    }
    let mut out = RasterImage::new(width, height);
    if src.width() == 0 || src.height() == 0 {
        return out;
    }
    let (cos, sin) = cos_sin(t.rotation);
    let cx = f64::from(width) / 2.0 + t.tx;
    let cy = f64::from(height) / 2.0 + t.ty;
    let (lx, ly) = (f64::from(src.width()) / 2.0, f64::from(src.height()) / 2.0);
    for y in 0..height {
        for x in 0..width {
            let dx = f64::from(x) + 0.5 - cx;
            let dy = f64::from(y) + 0.5 - cy;
            let ux = cos * dx - sin * dy;
            let uy = sin * dx + cos * dy;
            let px = lx + ux / t.scale_x - 0.5;
            let py = ly + uy / t.scale_y - 0.5;
            let [r, g, b, a] = sample_premultiplied(src, px, py);
            if a > 0.0 {
                out.set_pixel(x, y, [round_u8(r / a), round_u8(g / a), round_u8(b / a), round_u8(a)]);
            }
        }
    }
    out
}

/// Everything about a layer except its opacity: base bitmap, visible
/// strokes, enabled effects, then the transform into a canvas-sized image.
/// Invisible layers yield a transparent canvas.
pub fn render_layer_content(
    layer: &Layer,
    width: u32,
    height: u32,
    assets: &AssetStore,
) -> Result<RasterImage, RasterError> {
    if !layer.visible {
        return Ok(RasterImage::new(width, height));
    }
    let mut img = match &layer.asset {
        Some(key) => {
            assets.get(key).cloned().ok_or_else(|| RasterError::MissingAsset(layer.id.clone()))?
        }
        None => RasterImage::new(width, height),
    };
    for stroke in layer.strokes.iter().filter(|s| !s.undone) {
        rasterize_stroke(&mut img, stroke);
    }
    for vca in &layer.pipeline {
        img = apply_vca(&img, vca)?;
    }
    Ok(transform_into_canvas(&img, &layer.transform, width, height))
}

/// Canvas-sized render of one layer with its opacity applied to alpha.
pub fn render_layer(
    layer: &Layer,
    width: u32,
    height: u32,
    assets: &AssetStore,
) -> Result<RasterImage, RasterError> {
    let mut img = render_layer_content(layer, width, height, assets)?;
    if layer.opacity < 1.0 {
        for px in img.as_bytes_mut().chunks_exact_mut(4) {
            px[3] = round_u8(f64::from(px[3]) * layer.opacity);
        }
    }
    Ok(img)
}

/// Source-over of `(image, opacity)` pairs, bottom first. Accumulates in
/// premultiplied floating point and rounds once at the end, so layer
/// opacity never suffers an intermediate 8-bit rounding.
pub fn composite_layers(layers: &[(RasterImage, f64)]) -> Result<RasterImage, RasterError> {
    let Some(((first, _), _)) = layers.split_first() else {
        return Err(RasterError::DimensionMismatch { expected: (0, 0), found: (0, 0) });
    };
    let (w, h) = first.dimensions();
    for (img, _) in layers {
        if img.dimensions() != (w, h) {
            return Err(RasterError::DimensionMismatch { expected: (w, h), found: img.dimensions() });
        }
    }
    let n = w as usize * h as usize;
    let mut acc = vec![[0.0f64; 4]; n];
    for (img, opacity) in layers {
        for (dst, px) in acc.iter_mut().zip(img.as_bytes().chunks_exact(4)) {
            let a = f64::from(px[3]) / 255.0 * opacity;
            if a == 0.0 {
                continue;
            }
            let keep = 1.0 - a;
            for ch in 0..3 {
                dst[ch] = f64::from(px[ch]) / 255.0 * a + dst[ch] * keep;
            }
            dst[3] = a + dst[3] * keep;
        }
    }
    let mut out = RasterImage::new(w, h);
    for (px, src) in out.as_bytes_mut().chunks_exact_mut(4).zip(&acc) {
        let a = src[3];
        if a > 0.0 {
            for ch in 0..3 {
                px[ch] = round_u8(src[ch] / a * 255.0);
            }
            px[3] = round_u8(a * 255.0);
        }
    }
    Ok(out)
}

/// Source-over of images at full opacity, bottom first.
pub fn composite(layers: &[RasterImage]) -> Result<RasterImage, RasterError> {
    let pairs: Vec<(RasterImage, f64)> = layers.iter().map(|l| (l.clone(), 1.0)).collect();
    composite_layers(&pairs)
}

/// Renders every layer and composites them bottom to top.
pub fn render_document(doc: &SessionDocument, assets: &AssetStore) -> Result<RasterImage, RasterError> {
    let (w, h) = (doc.meta.width, doc.meta.height);
    let mut layers = vec![(RasterImage::new(w, h), 1.0)];
    for layer in doc.layers.iter().filter(|l| l.visible) {
        layers.push((render_layer_content(layer, w, h, assets)?, layer.opacity));
    }
    composite_layers(&layers)
}

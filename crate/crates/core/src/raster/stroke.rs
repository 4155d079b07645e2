use crate::document::Stroke;

use super::path::{flatten_subpaths, Point, FLATTEN_TOLERANCE};
use super::RasterImage;

/// Squared distance from `p` to segment `ab`.
fn dist2_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let (apx, apy) = (p.x - a.x, p.y - a.y);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 { ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    dx * dx + dy * dy
}

/// Pixel index range whose centers can lie within `[lo, hi]`.
fn span(lo: f64, hi: f64, len: u32) -> Option<(u32, u32)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(f64::from(len) - 1.0);
    (first <= last).then(|| (first as u32, last as u32))
}

/// Draws `stroke` with round caps and joins: every pixel whose center lies
/// within `width / 2` of the flattened path takes the stroke color at full
/// alpha. Geometry outside the image is clipped.
pub fn rasterize_stroke(target: &mut RasterImage, stroke: &Stroke) {
    let Ok(subpaths) = flatten_subpaths(&stroke.path, FLATTEN_TOLERANCE) else {
        return;
    };
    let r = stroke.width / 2.0;
    if !(r > 0.0) {
        return;
    }
    let r2 = r * r;
    let [cr, cg, cb] = stroke.color.0;
    let rgba = [cr, cg, cb, 255];
    let (w, h) = target.dimensions();
    for poly in subpaths {
        let segments: Vec<(Point, Point)> = if poly.len() == 1 {
            vec![(poly[0], poly[0])]
        } else {
            poly.windows(2).map(|s| (s[0], s[1])).collect()
        };
        for (a, b) in segments {
            let Some((x0, x1)) = span(a.x.min(b.x) - r, a.x.max(b.x) + r, w) else {
                continue;
            };
            let Some((y0, y1)) = span(a.y.min(b.y) - r, a.y.max(b.y) + r, h) else {
                continue;
            };
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = Point::new(f64::from(x) + 0.5, f64::from(y) + 0.5);
                    if dist2_to_segment(p, a, b) <= r2 {
                        target.set_pixel(x, y, rgba);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::{Color, PathCommand};

    fn stroke(path: Vec<PathCommand>, width: f64) -> Stroke {
        Stroke {
            stroke_id: "s".into(),
            client_id: "c".into(),
            time_stamp: 0,
            color: Color::rgb(10, 20, 30),
            width,
            path,
            undone: false,
        }
    }

    #[test]
    fn single_point_is_a_disc() {
        let mut img = RasterImage::new(16, 16);
        rasterize_stroke(&mut img, &stroke(vec![PathCommand::MoveTo { x: 5.0, y: 5.0 }], 4.0));
        for y in 0..16 {
            for x in 0..16 {
                let (dx, dy) = (x as f64 + 0.5 - 5.0, y as f64 + 0.5 - 5.0);
                let inside = dx * dx + dy * dy <= 4.0;
                let expected = if inside { [10, 20, 30, 255] } else { [0; 4] };
                assert_eq!(img.pixel(x, y), expected, "({x}, {y})");
            }
        }
    }

    #[test]
    fn fully_clipped_stroke_changes_nothing() {
        let mut img = RasterImage::filled(8, 8, [1, 2, 3, 4]);
        let before = img.clone();
        let path = vec![
            PathCommand::MoveTo { x: -100.0, y: -100.0 },
            PathCommand::LineTo { x: -50.0, y: 1e4 },
        ];
        rasterize_stroke(&mut img, &stroke(path, 3.0));
        assert_eq!(img, before);
    }
}

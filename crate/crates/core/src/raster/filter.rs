//! The five layer effects. Channels are treated as values in [0, 1]; alpha
//! is never touched.

use crate::document::VcaInstance;
use crate::effect::Effect;

use super::{round_u8, RasterError, RasterImage};

/// Applies one pipeline entry. Disabled entries return the input unchanged.
pub fn apply_vca(img: &RasterImage, vca: &VcaInstance) -> Result<RasterImage, RasterError> {
    if !vca.enabled {
        return Ok(img.clone());
    }
    let param = |name: &str| -> Result<f64, RasterError> {
        let value = vca.param(name).ok_or_else(|| RasterError::InvalidValue(name.to_owned()))?;
        vca.effect
            .check(name, value)
            .map_err(|_| RasterError::InvalidValue(format!("params.{name}")))?;
        Ok(value)
    };
    Ok(match vca.effect {
        Effect::Contrast => contrast(img, param("factor")?),
        Effect::Pixelation => pixelate(img, param("blockSize")? as u32),
        Effect::Vignette => vignette(img, param("strength")?),
        Effect::ChromaticAberration => chromatic_aberration(img, param("offset")?),
        Effect::ChromaZoom => chroma_zoom(img, param("zoom")?),
    })
}

fn map_rgb(img: &RasterImage, mut f: impl FnMut(u32, u32, usize, u8) -> u8) -> RasterImage {
    let mut out = img.clone();
    let w = img.width();
    for (i, px) in out.as_bytes_mut().chunks_exact_mut(4).enumerate() {
        let (x, y) = (i as u32 % w, i as u32 / w);
        for (ch, c) in px[..3].iter_mut().enumerate() {
            *c = f(x, y, ch, *c);
        }
    }
    out
}

/// `c' = clamp((c - 0.5) k + 0.5, 0, 1)`, evaluated on the 0..255 scale so
/// that `k = 1` is exact.
fn contrast(img: &RasterImage, k: f64) -> RasterImage {
    let lut: Vec<u8> = (0..=255u8).map(|c| round_u8((f64::from(c) - 127.5) * k + 127.5)).collect();
    map_rgb(img, |_, _, _, c| lut[c as usize])
}

/// Each `b x b` block, anchored at the top-left corner, takes the mean of
/// the pixels it covers.
fn pixelate(img: &RasterImage, b: u32) -> RasterImage {
    if b <= 1 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let mut out = img.clone();
    for by in (0..h).step_by(b as usize) {
        for bx in (0..w).step_by(b as usize) {
            let (x1, y1) = ((bx + b).min(w), (by + b).min(h));
            let n = u64::from((x1 - bx) * (y1 - by));
            let mut sum = [0u64; 3];
            for y in by..y1 {
                for x in bx..x1 {
                    let p = img.pixel(x, y);
                    for ch in 0..3 {
                        sum[ch] += u64::from(p[ch]);
                    }
                }
            }
            // round(sum / n), half-up, in integers
            let mean = sum.map(|s| ((2 * s + n) / (2 * n)) as u8);
            for y in by..y1 {
                for x in bx..x1 {
                    let a = img.pixel(x, y)[3];
                    out.set_pixel(x, y, [mean[0], mean[1], mean[2], a]);
                }
            }
        }
    }
    out
}

fn smoothstep(a: f64, b: f64, x: f64) -> f64 {
    let t = ((x - a) / (b - a)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Darkens towards the corners: `c' = c (1 - s smoothstep(0.5, 1, r))` with
/// `r` the distance of the pixel center from the image center, normalized
/// so that edge midpoints sit at 1.
fn vignette(img: &RasterImage, s: f64) -> RasterImage {
    if s == 0.0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let norm = 0.5f64.hypot(0.5);
    let mut factor_row = Vec::with_capacity(w as usize);
    map_rgb(img, |x, y, ch, c| {
        if x == 0 && ch == 0 {
            factor_row.clear();
            let py = (f64::from(y) + 0.5) / f64::from(h) - 0.5;
            for x in 0..w {
                let px = (f64::from(x) + 0.5) / f64::from(w) - 0.5;
                let r = px.hypot(py) / norm;
                factor_row.push(1.0 - s * smoothstep(0.5, 1.0, r));
            }
        }
        round_u8(f64::from(c) * factor_row[x as usize])
    })
}

/// Bilinear sample of channel `ch` at continuous index coordinates, clamping
/// to the edge.
fn sample(img: &RasterImage, ch: usize, u: f64, v: f64) -> f64 {
    let (w, h) = img.dimensions();
    let (maxx, maxy) = (f64::from(w - 1), f64::from(h - 1));
    let (u, v) = (u.clamp(0.0, maxx), v.clamp(0.0, maxy));
    let (x0, y0) = (u.floor(), v.floor());
    let (tx, ty) = (u - x0, v - y0);
    let (x0, y0) = (x0 as u32, y0 as u32);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let at = |x, y| f64::from(img.pixel(x, y)[ch]);
    let top = at(x0, y0) * (1.0 - tx) + at(x1, y0) * tx;
    let bottom = at(x0, y1) * (1.0 - tx) + at(x1, y1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Red is sampled `o * width` pixels to the right, blue as far to the left.
fn chromatic_aberration(img: &RasterImage, o: f64) -> RasterImage {
    if img.width() == 0 || img.height() == 0 {
        return img.clone();
    }
    let shift = o * f64::from(img.width());
    map_rgb(img, |x, y, ch, c| {
        let dx = match ch {
            0 => shift,
            2 => -shift,
            _ => return c,
        };
        round_u8(sample(img, ch, f64::from(x) + dx, f64::from(y)))
    })
}

/// Channel `i` is sampled at `m + (p - m) / (1 + z w_i)` with
/// `w = (-1, 0, 1)`: red is magnified, blue shrunk, green left alone.
fn chroma_zoom(img: &RasterImage, z: f64) -> RasterImage {
    if img.width() == 0 || img.height() == 0 {
        return img.clone();
    }
    let cx = (f64::from(img.width()) - 1.0) / 2.0;
    let cy = (f64::from(img.height()) - 1.0) / 2.0;
    map_rgb(img, |x, y, ch, c| {
        let k = 1.0
            + z * match ch {
                0 => -1.0,
                2 => 1.0,
                _ => return c,
            };
        let u = cx + (f64::from(x) - cx) / k;
        let v = cy + (f64::from(y) - cy) / k;
        round_u8(sample(img, ch, u, v))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn vca(effect: Effect, name: &str, value: f64) -> VcaInstance {
        VcaInstance {
            id: "v".into(),
            effect,
            enabled: true,
            params: BTreeMap::from([(name.to_owned(), value)]),
        }
    }

    fn gradient(w: u32, h: u32) -> RasterImage {
        let mut img = RasterImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set_pixel(x, y, [(x * 37 % 256) as u8, (y * 53 % 256) as u8, ((x + y) * 11) as u8, 200]);
            }
        }
        img
    }

    #[test]
    fn pixelation_2x2_fixture() {
        let img = RasterImage::from_rgba(
            2,
            2,
            vec![0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255, 255, 255, 255, 255, 255],
        )
        .unwrap();
        let out = apply_vca(&img, &vca(Effect::Pixelation, "blockSize", 2.0)).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(out.pixel(x, y), [128, 128, 128, 255]);
            }
        }
    }

    #[test]
    fn partial_edge_blocks_average_what_they_cover() {
        let img = gradient(5, 3);
        let out = pixelate(&img, 4);
        // block x in 4..5, y in 0..3: three pixels
        let vals: Vec<u64> = (0..3).map(|y| u64::from(img.pixel(4, y)[1])).collect();
        let sum: u64 = vals.iter().sum();
        let expected = ((2 * sum + 3) / 6) as u8;
        assert_eq!(out.pixel(4, 2)[1], expected);
    }

    #[test]
    fn vignette_keeps_center_and_darkens_corners() {
        let img = RasterImage::filled(5, 5, [200, 100, 50, 77]);
        let out = apply_vca(&img, &vca(Effect::Vignette, "strength", 1.0)).unwrap();
        assert_eq!(out.pixel(2, 2), [200, 100, 50, 77]);
        let corner = out.pixel(0, 0);
        assert!(corner[0] < 200);
        assert_eq!(corner[3], 77);
    }

    #[test]
    fn contrast_formula() {
        let img = RasterImage::filled(1, 1, [0, 64, 255, 9]);
        let out = apply_vca(&img, &vca(Effect::Contrast, "factor", 2.0)).unwrap();
        // (64 - 127.5) * 2 + 127.5 = 0.5 -> 1
        assert_eq!(out.pixel(0, 0), [0, 1, 255, 9]);
        let flat = apply_vca(&img, &vca(Effect::Contrast, "factor", 0.0)).unwrap();
        assert_eq!(flat.pixel(0, 0), [128, 128, 128, 9]);
    }

    #[test]
    fn identity_parameters_are_exact() {
        let img = gradient(7, 4);
        for effect in Effect::ALL {
            let v = VcaInstance {
                id: "v".into(),
                effect,
                enabled: true,
                params: effect.identity_params(),
            };
            assert_eq!(apply_vca(&img, &v).unwrap(), img, "{effect}");
        }
    }

    #[test]
    fn disabled_is_a_no_op() {
        let img = gradient(4, 4);
        let mut v = vca(Effect::Contrast, "factor", 3.0);
        v.enabled = false;
        assert_eq!(apply_vca(&img, &v).unwrap(), img);
    }

    #[test]
    fn out_of_range_is_refused() {
        let img = gradient(2, 2);
        assert!(matches!(
            apply_vca(&img, &vca(Effect::Contrast, "factor", 9.0)),
            Err(RasterError::InvalidValue(_))
        ));
    }

    #[test]
    fn chromatic_aberration_shifts_red_and_blue() {
        // 100 px wide so o = 0.01 is exactly one pixel
        let mut img = RasterImage::new(100, 1);
        img.set_pixel(50, 0, [255, 255, 255, 255]);
        let out = apply_vca(&img, &vca(Effect::ChromaticAberration, "offset", 0.01)).unwrap();
        assert_eq!(out.pixel(49, 0), [255, 0, 0, 0]);
        assert_eq!(out.pixel(50, 0), [0, 255, 0, 255]);
        assert_eq!(out.pixel(51, 0), [0, 0, 255, 0]);
    }
}

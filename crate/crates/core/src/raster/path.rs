use crate::document::PathCommand;

use super::RasterError;

/// Maximum distance between a flattened quadratic and the true curve.
pub const FLATTEN_TOLERANCE: f64 = 0.25;

/// Upper bound on segments per quadratic, reached only by absurd geometry.
const MAX_SUBDIVISIONS: f64 = 4096.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Segment count for a quadratic.
///
/// With `d = p0 - 2 p1 + p2` the curve's second derivative is `2d`, so a
/// chord spanning `1/n` of the parameter deviates by at most `|d| / (4 n²)`.
fn subdivisions(p0: Point, p1: Point, p2: Point, tolerance: f64) -> usize {
    let dx = p0.x - 2.0 * p1.x + p2.x;
    let dy = p0.y - 2.0 * p1.y + p2.y;
    let n = (dx.hypot(dy) / (4.0 * tolerance)).sqrt().ceil();
    n.clamp(1.0, MAX_SUBDIVISIONS) as usize
}

/// Splits a path at each move-to and flattens the pieces.
pub fn flatten_subpaths(
    path: &[PathCommand],
    tolerance: f64,
) -> Result<Vec<Vec<Point>>, RasterError> {
    if !(tolerance > 0.0) {
        return Err(RasterError::MalformedPath("tolerance must be positive".into()));
    }
    match path.first() {
        Some(PathCommand::MoveTo { .. }) => {}
        Some(_) => return Err(RasterError::MalformedPath("path must start with M".into())),
        None => return Err(RasterError::MalformedPath("empty path".into())),
    }
    let mut out: Vec<Vec<Point>> = Vec::new();
    for cmd in path {
        match *cmd {
            PathCommand::MoveTo { x, y } => out.push(vec![Point::new(x, y)]),
            PathCommand::LineTo { x, y } => {
                out.last_mut().expect("starts with M").push(Point::new(x, y))
            }
            PathCommand::QuadTo { cx, cy, x, y } => {
                let poly = out.last_mut().expect("starts with M");
                let p0 = *poly.last().expect("non-empty");
                let (p1, p2) = (Point::new(cx, cy), Point::new(x, y));
                let n = subdivisions(p0, p1, p2, tolerance);
                for i in 1..=n {
                    let t = i as f64 / n as f64;
                    let mt = 1.0 - t;
                    let a = mt * mt;
                    let b = 2.0 * mt * t;
                    let c = t * t;
                    poly.push(if i == n {
                        p2
                    } else {
                        Point::new(a * p0.x + b * p1.x + c * p2.x, a * p0.y + b * p1.y + c * p2.y)
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Flattens a path into one point list; move-tos inside the path simply
/// continue the list.
pub fn flatten_path(path: &[PathCommand], tolerance: f64) -> Result<Vec<Point>, RasterError> {
    Ok(flatten_subpaths(path, tolerance)?.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(x: f64, y: f64) -> PathCommand {
        PathCommand::MoveTo { x, y }
    }

    #[test]
    fn lines_pass_through() {
        let poly = flatten_path(&[m(0.0, 0.0), PathCommand::LineTo { x: 10.0, y: 0.0 }], 0.25)
            .unwrap();
        assert_eq!(poly, [Point::new(0.0, 0.0), Point::new(10.0, 0.0)]);
    }

    #[test]
    fn collinear_quad_is_one_segment() {
        let q = PathCommand::QuadTo { cx: 1.0, cy: 0.0, x: 2.0, y: 0.0 };
        let poly = flatten_path(&[m(0.0, 0.0), q], 0.25).unwrap();
        assert_eq!(poly, [Point::new(0.0, 0.0), Point::new(2.0, 0.0)]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(flatten_path(&[], 0.25).is_err());
        assert!(flatten_path(&[PathCommand::LineTo { x: 0.0, y: 0.0 }], 0.25).is_err());
        assert!(flatten_path(&[m(0.0, 0.0)], 0.0).is_err());
    }
}

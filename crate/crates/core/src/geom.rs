//! Planar geometry: convex hulls and the polygon queries the segmentation and
//! tiling code need (containment, distance, area, diameter).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance (meters) for boundary-inclusive containment tests.
pub const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn sub(self, other: Point2) -> Point2 {
        Point2::new(self.x - other.x, self.y - other.y)
    }
}

/// z-component of (a - o) x (b - o).
pub fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Distance from `p` to the closed segment `[a, b]`.
pub fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.x * ab.x + ab.y * ab.y;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2).clamp(0.0, 1.0);
    p.dist(Point2::new(a.x + t * ab.x, a.y + t * ab.y))
}

/// A polygon with counterclockwise vertices.
///
/// Hulls of fewer than three distinct points, or of collinear points, are kept
/// as `degenerate` polygons holding the distinct extreme points (one or two).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon2D {
    pub vertices: Vec<Point2>,
    pub degenerate: bool,
}

impl Polygon2D {
    /// A regular `n`-gon inscribed in the circle of `radius` around `center`.
    pub fn regular(center: Point2, radius: f64, n: usize) -> Self {
        let n = n.max(3);
        let vertices = (0..n)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / n as f64;
                Point2::new(center.x + radius * a.cos(), center.y + radius * a.sin())
            })
            .collect();
        Polygon2D {
            vertices,
            degenerate: false,
        }
    }

    /// Axis-aligned rectangle, counterclockwise from the lower-left corner.
    pub fn rectangle(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Polygon2D {
            vertices: vec![
                Point2::new(xmin, ymin),
                Point2::new(xmax, ymin),
                Point2::new(xmax, ymax),
                Point2::new(xmin, ymax),
            ],
            degenerate: false,
        }
    }

    /// Signed area; positive for counterclockwise polygons, zero when degenerate.
    pub fn area(&self) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        let n = self.vertices.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                a.x * b.y - b.x * a.y
            })
            .sum();
        twice / 2.0
    }

    /// Largest pairwise vertex distance.
    pub fn diameter(&self) -> f64 {
        let v = &self.vertices;
        let mut best: f64 = 0.0;
        for i in 0..v.len() {
            for j in (i + 1)..v.len() {
                best = best.max(v[i].dist(v[j]));
            }
        }
        best
    }

    /// Boundary-inclusive containment for convex polygons (and degenerate ones).
    pub fn contains(&self, p: Point2) -> bool {
        self.distance_to(p) <= GEOM_EPS
    }

    /// Euclidean distance from `p` to the polygon, zero inside or on it.
    pub fn distance_to(&self, p: Point2) -> f64 {
        let v = &self.vertices;
        match v.len() {
            0 => f64::INFINITY,
            1 => p.dist(v[0]),
            2 => segment_distance(p, v[0], v[1]),
            n => {
                if !self.degenerate {
                    let inside = (0..n).all(|i| {
                        let a = v[i];
                        let b = v[(i + 1) % n];
                        cross(a, b, p) >= -GEOM_EPS * a.dist(b).max(1.0)
                    });
                    if inside {
                        return 0.0;
                    }
                }
                (0..n)
                    .map(|i| segment_distance(p, v[i], v[(i + 1) % n]))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn bbox(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }
}

/// Convex hull by the monotone chain method. Collinear points are dropped from
/// the output ring.
pub fn convex_hull(points: &[Point2]) -> Result<Polygon2D> {
    if points.is_empty() {
        return Err(Error::EmptyInput("convex hull of no points"));
    }
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);

    if pts.len() < 3 {
        return Ok(Polygon2D {
            vertices: pts,
            degenerate: true,
        });
    }

    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();

    if hull.len() < 3 {
        // All input collinear: keep the two extremes.
        let first = pts[0];
        let last = pts[pts.len() - 1];
        return Ok(Polygon2D {
            vertices: vec![first, last],
            degenerate: true,
        });
    }
    Ok(Polygon2D {
        vertices: hull,
        degenerate: false,
    })
}

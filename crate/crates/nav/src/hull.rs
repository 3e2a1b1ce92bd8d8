//! Planar convex hulls for pedestrian-group geometry.
//!
//! A group's occupied region is the convex hull of its members' positions.
//! Hulls are built with the classic divide-and-conquer scheme: pick the two
//! lexicographic extremes, split the remaining points by side of that chord,
//! and recursively expand each chain through the point farthest from the
//! current edge. Output vertices are in counter-clockwise order with every
//! collinear or interior point dropped. Degenerate inputs (one point, or an
//! entirely collinear set) come back as a point or segment with zero area, so
//! callers never divide by a meaningless hull area by accident.
//!
//! [`brute_force_hull`] is an independent quadratic-per-edge construction
//! kept as a reference to validate the fast path against.

use evolvenav_sim::Vec2;

use crate::NavError;

/// Where a query point sits relative to a hull's closed region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HullSide {
    Outside,
    Boundary,
    Inside,
}

/// Convex hull of one pedestrian group.
///
/// `vertices` is minimal and counter-clockwise; a single point or a segment
/// represents a degenerate hull with zero area.
#[derive(Debug, Clone)]
pub struct GroupHull {
    vertices: Vec<Vec2>,
    area: f64,
    /// Which simulated group the hull belongs to.
    pub group_id: usize,
}

/// Twice the signed area of triangle `(o, a, b)`; positive when `b` lies to
/// the left of the directed line `o -> a`... more precisely, when `o, a, b`
/// wind counter-clockwise.
fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a - o).det(b - o)
}

/// Euclidean distance from `p` to the closed segment `[a, b]`.
fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let denom = ab.norm_sq();
    if denom == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / denom).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

fn lex_cmp(p: Vec2, q: Vec2) -> std::cmp::Ordering {
    p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y))
}

/// Appends to `out` the hull vertices strictly between `p` and `q` along the
/// chain on the right side of the directed chord `p -> q`, in traversal
/// order. `points` must already be restricted to that side.
fn extend_chain(points: &[Vec2], p: Vec2, q: Vec2, out: &mut Vec<Vec2>) {
    // The point farthest from the chord (largest |signed area|) is always a
    // hull vertex; ties resolve to the first occurrence, which is
    // deterministic for a fixed input order.
    let mut best: Option<(f64, Vec2)> = None;
    for &x in points {
        let d = -cross(p, q, x);
        if d > 0.0 && best.map_or(true, |(bd, _)| d > bd) {
            best = Some((d, x));
        }
    }
    let Some((_, c)) = best else { return };
    let left: Vec<Vec2> = points.iter().copied().filter(|&x| cross(p, c, x) < 0.0).collect();
    let right: Vec<Vec2> = points.iter().copied().filter(|&x| cross(c, q, x) < 0.0).collect();
    extend_chain(&left, p, c, out);
    out.push(c);
    extend_chain(&right, c, q, out);
}

/// Twice the enclosed area of a counter-clockwise vertex loop.
fn shoelace_twice(vertices: &[Vec2]) -> f64 {
    let n = vertices.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        acc += a.det(b);
    }
    acc
}

/// Builds the convex hull of `points`, tagged with `group_id`.
///
/// At least one finite point is required. Duplicates are tolerated; collinear
/// sets collapse to their two extremes.
pub fn convex_hull(points: &[Vec2], group_id: usize) -> Result<GroupHull, NavError> {
    if points.is_empty() {
        return Err(NavError::Geometry(
            "convex hull needs at least one point".to_string(),
        ));
    }
    if let Some(bad) = points.iter().find(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(NavError::Geometry(format!(
            "convex hull input has non-finite coordinates ({}, {})",
            bad.x, bad.y
        )));
    }

    let a = *points.iter().min_by(|p, q| lex_cmp(**p, **q)).expect("non-empty");
    let b = *points.iter().max_by(|p, q| lex_cmp(**p, **q)).expect("non-empty");
    let mut vertices = vec![a];
    if a != b {
        // Lower chain a -> b, then upper chain b -> a; starting from the
        // lexicographic minimum this traversal is counter-clockwise.
        let below: Vec<Vec2> = points.iter().copied().filter(|&x| cross(a, b, x) < 0.0).collect();
        let above: Vec<Vec2> = points.iter().copied().filter(|&x| cross(b, a, x) < 0.0).collect();
        extend_chain(&below, a, b, &mut vertices);
        vertices.push(b);
        extend_chain(&above, b, a, &mut vertices);
    }

    let area = if vertices.len() >= 3 {
        0.5 * shoelace_twice(&vertices)
    } else {
        0.0
    };
    debug_assert!(area >= 0.0, "counter-clockwise loop has non-negative area");
    Ok(GroupHull {
        vertices,
        area,
        group_id,
    })
}

impl GroupHull {
    /// Counter-clockwise vertices; length 1 or 2 for degenerate hulls.
    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    /// Enclosed area in square meters (zero for degenerate hulls).
    pub fn area(&self) -> f64 {
        self.area
    }

    /// Distance from `p` to the hull boundary (zero on it, positive on both
    /// sides of it).
    pub fn boundary_distance(&self, p: Vec2) -> f64 {
        match self.vertices.len() {
            1 => p.dist(self.vertices[0]),
            2 => point_segment_distance(p, self.vertices[0], self.vertices[1]),
            n => (0..n)
                .map(|i| point_segment_distance(p, self.vertices[i], self.vertices[(i + 1) % n]))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Classifies `p` against the hull. Degenerate hulls have no interior:
    /// a point is either on them or outside.
    pub fn classify(&self, p: Vec2) -> HullSide {
        if self.vertices.len() < 3 {
            return if self.boundary_distance(p) == 0.0 {
                HullSide::Boundary
            } else {
                HullSide::Outside
            };
        }
        let n = self.vertices.len();
        let mut on_edge = false;
        for i in 0..n {
            let s = cross(self.vertices[i], self.vertices[(i + 1) % n], p);
            if s < 0.0 {
                return HullSide::Outside;
            }
            if s == 0.0 {
                on_edge = true;
            }
        }
        if on_edge {
            HullSide::Boundary
        } else {
            HullSide::Inside
        }
    }
}

/// Reference hull via the all-edges half-plane test: the ordered pair
/// `(i, j)` spans a hull edge exactly when every other point lies strictly to
/// its left. Cubic time, no shared logic with [`convex_hull`]; intended for
/// validation on point sets in general position (no duplicates, no three
/// collinear points). Returns the hull vertex set sorted lexicographically.
pub fn brute_force_hull(points: &[Vec2]) -> Vec<Vec2> {
    let n = points.len();
    let mut verts: Vec<Vec2> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let edge = (0..n)
                .filter(|&k| k != i && k != j)
                .all(|k| cross(points[i], points[j], points[k]) > 0.0);
            if edge {
                for v in [points[i], points[j]] {
                    if !verts.contains(&v) {
                        verts.push(v);
                    }
                }
            }
        }
    }
    verts.sort_by(|p, q| lex_cmp(*p, *q));
    verts
}

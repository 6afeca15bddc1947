//! Convex polygon distance functions.
//!
//! A gauge is defined by a convex polygon `Q` (counterclockwise, origin strictly
//! inside). The distance from `x` to `y` is the smallest `t >= 0` with
//! `y ∈ tQ + x`; it is positively homogeneous and additive along rays but not
//! symmetric. Derived polygons:
//!
//! * `reflected` is `-Q`, the unit ball of the reversed distance. Clearance
//!   regions around diagram vertices are homothets of it.
//! * `symmetric` is `(-Q) ⊕ Q`, centrally symmetric; its gauge is the true
//!   metric used by the proximity structures.
//!
//! Evaluation uses the support form `max_i <n_i, v> / c_i` over the edges,
//! which is linear inside each cone of the vertex fan. Predicates evaluate in
//! floats and fall back to exact rationals inside the error band.

pub mod bisector;
pub mod frame;
pub mod homothet;

use crate::geom::exact::{self, RPoint, Rat};
use crate::geom::{pt, GeomResult, Point, Tie, FILTER_BAND};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaugeError {
    #[error("gauge polygon needs at least three vertices")]
    TooFewVertices,
    #[error("gauge polygon has a non-finite coordinate")]
    NotFinite,
    #[error("gauge polygon has duplicate consecutive vertices")]
    DuplicateVertex,
    #[error("gauge polygon is not convex in counterclockwise order")]
    NonConvex,
    #[error("gauge polygon has collinear adjacent sides")]
    ParallelSides,
    #[error("origin is not strictly inside the gauge polygon")]
    OriginOutside,
}

/// A strictly convex polygon with the origin strictly inside, in canonical
/// counterclockwise order (vertex 0 is the lexicographically smallest).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    verts: Vec<Point>,
    /// Outward edge normal of edge `i` (`verts[i] -> verts[i+1]`), unnormalized.
    normals: Vec<Point>,
    /// `<normals[i], verts[i]>`, positive because the origin is interior.
    offsets: Vec<f64>,
}

impl Polygon {
    pub fn new(verts: Vec<Point>) -> Result<Polygon, GaugeError> {
        if verts.len() < 3 {
            return Err(GaugeError::TooFewVertices);
        }
        if verts.iter().any(|p| !p.is_finite()) {
            return Err(GaugeError::NotFinite);
        }
        let n = verts.len();
        for i in 0..n {
            if verts[i] == verts[(i + 1) % n] {
                return Err(GaugeError::DuplicateVertex);
            }
        }
        // Strict convexity and orientation, decided exactly.
        for i in 0..n {
            let a = verts[i];
            let b = verts[(i + 1) % n];
            let c = verts[(i + 2) % n];
            let e1 = RPoint::of(b).sub(&RPoint::of(a));
            let e2 = RPoint::of(c).sub(&RPoint::of(b));
            match exact::sign(&e1.cross(&e2)) {
                1 => {}
                0 => return Err(GaugeError::ParallelSides),
                _ => return Err(GaugeError::NonConvex),
            }
        }
        // Canonical start: lexicographically smallest vertex first.
        let start = (0..n)
            .min_by(|&i, &j| {
                verts[i]
                    .lex_key()
                    .partial_cmp(&verts[j].lex_key())
                    .unwrap_or(Ordering::Equal)
            })
            .unwrap();
        let verts: Vec<Point> = (0..n).map(|i| verts[(start + i) % n]).collect();

        let mut normals = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        for i in 0..n {
            let a = verts[i];
            let b = verts[(i + 1) % n];
            let e = b - a;
            let nrm = pt(e.y, -e.x); // outward for counterclockwise order
            let off = nrm.dot(a);
            normals.push(nrm);
            offsets.push(off);
        }
        // Origin strictly interior, decided exactly.
        for i in 0..n {
            let a = RPoint::of(verts[i]);
            let b = RPoint::of(verts[(i + 1) % n]);
            let e = b.sub(&a);
            let nrm = RPoint { x: e.y.clone(), y: -e.x.clone() };
            if exact::sign(&nrm.dot(&a)) != 1 {
                return Err(GaugeError::OriginOutside);
            }
        }
        Ok(Polygon { verts, normals, offsets })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.verts.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn verts(&self) -> &[Point] {
        &self.verts
    }

    #[inline]
    pub fn vert(&self, i: usize) -> Point {
        self.verts[i % self.verts.len()]
    }

    /// Edge support form `(n_i, c_i)` with the edge set `{x : <n_i,x> = c_i}`.
    #[inline]
    pub fn edge_form(&self, i: usize) -> (Point, f64) {
        let i = i % self.verts.len();
        (self.normals[i], self.offsets[i])
    }

    /// Exact edge support form recomputed from the vertex rationals.
    pub fn edge_form_rat(&self, i: usize) -> (RPoint, Rat) {
        let n = self.verts.len();
        let a = RPoint::of(self.verts[i % n]);
        let b = RPoint::of(self.verts[(i + 1) % n]);
        let e = b.sub(&a);
        let nrm = RPoint { x: e.y.clone(), y: -e.x.clone() };
        let off = nrm.dot(&a);
        (nrm, off)
    }

    /// Gauge value `min {t >= 0 : v ∈ t * poly}` via the support form.
    pub fn gauge(&self, v: Point) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for i in 0..self.verts.len() {
            let val = (self.normals[i].dot(v)) / self.offsets[i];
            if val > best {
                best = val;
            }
        }
        best.max(0.0)
    }

    /// Gauge value together with a magnitude scale for error bands.
    pub fn gauge_scaled(&self, v: Point) -> (f64, f64) {
        let mut best = f64::NEG_INFINITY;
        let mut scale = 0.0f64;
        for i in 0..self.verts.len() {
            let n = self.normals[i];
            let c = self.offsets[i];
            let val = n.dot(v) / c;
            let mag = (n.x * v.x).abs() + (n.y * v.y).abs();
            let s = mag / c;
            if s > scale {
                scale = s;
            }
            if val > best {
                best = val;
            }
        }
        (best.max(0.0), scale)
    }

    pub fn gauge_rat(&self, v: &RPoint) -> Rat {
        let mut best: Option<Rat> = None;
        for i in 0..self.verts.len() {
            let (n, c) = self.edge_form_rat(i);
            let val = n.dot(v) / c;
            best = Some(match best {
                None => val,
                Some(b) => {
                    if val > b {
                        val
                    } else {
                        b
                    }
                }
            });
        }
        let zero = Rat::from_integer(0.into());
        let b = best.unwrap();
        if b < zero {
            zero
        } else {
            b
        }
    }

    /// Index of the half-open vertex cone containing direction `v`
    /// (cone `i` spans `[vert_i, vert_{i+1})` counterclockwise).
    pub fn cone_index(&self, v: Point) -> GeomResult<usize> {
        if v == Point::ZERO {
            return Err(Tie::new("cone_index zero direction"));
        }
        let n = self.verts.len();
        let scale_of = |q: Point| (q.x * v.x).abs() + (q.y * v.y).abs() + (q.x * v.y).abs() + (q.y * v.x).abs();
        let side = |i: usize| -> GeomResult<Ordering> {
            let q = self.verts[i];
            let fast = q.cross(v);
            let scale = scale_of(q);
            let band = FILTER_BAND * scale.max(f64::MIN_POSITIVE);
            if fast.abs() > band {
                return Ok(if fast > 0.0 { Ordering::Greater } else { Ordering::Less });
            }
            let qv = RPoint::of(q);
            let vv = RPoint::of(v);
            Ok(match exact::sign(&qv.cross(&vv)) {
                1 => Ordering::Greater,
                -1 => Ordering::Less,
                // Exact hit on a fan ray: assigned half-open to this cone.
                _ => Ordering::Equal,
            })
        };
        for i in 0..n {
            let s0 = side(i)?;
            let s1 = side((i + 1) % n)?;
            // v in cone i: v weakly counterclockwise of vert_i, strictly
            // clockwise of vert_{i+1}.
            let ge0 = s0 != Ordering::Less;
            let lt1 = s1 == Ordering::Less;
            if (ge0 && lt1) || s0 == Ordering::Equal {
                // Equal means v is on the ray through vert_i: cone i unless v
                // points the opposite way, in which case it is across the fan.
                if s0 == Ordering::Equal {
                    let q = self.verts[i];
                    if q.dot(v) > 0.0 {
                        return Ok(i);
                    } else {
                        continue;
                    }
                }
                return Ok(i);
            }
        }
        Err(Tie::new("cone_index scan failed"))
    }

    pub fn cone_index_rat(&self, v: &RPoint) -> GeomResult<usize> {
        let zero = Rat::from_integer(0.into());
        if v.x == zero && v.y == zero {
            return Err(Tie::new("cone_index zero direction"));
        }
        let n = self.verts.len();
        for i in 0..n {
            let q0 = RPoint::of(self.verts[i]);
            let q1 = RPoint::of(self.verts[(i + 1) % n]);
            let c0 = exact::sign(&q0.cross(v));
            let c1 = exact::sign(&q1.cross(v));
            if c0 == 0 {
                if exact::sign(&q0.dot(v)) == 1 {
                    return Ok(i);
                }
                continue;
            }
            if c0 == 1 && c1 == -1 {
                return Ok(i);
            }
        }
        Err(Tie::new("cone_index scan failed"))
    }

    /// Uniformly scaled copy; `s > 0`.
    pub fn scaled(&self, s: f64) -> Polygon {
        assert!(s > 0.0 && s.is_finite());
        Polygon::new(self.verts.iter().map(|&v| v * s).collect()).expect("scaling preserves validity")
    }

    /// Point reflection through the origin (orientation preserving).
    pub fn reflected(&self) -> Polygon {
        Polygon::new(self.verts.iter().map(|&p| -p).collect()).expect("reflection preserves validity")
    }

    /// Containment test with closed boundary, `1e-9` relative slack.
    pub fn contains(&self, p: Point) -> bool {
        self.gauge(p) <= 1.0 + FILTER_BAND
    }
}

/// Merges the edge sequences of two convex polygons into their Minkowski sum.
pub fn minkowski(a: &Polygon, b: &Polygon) -> Result<Polygon, GaugeError> {
    fn bottom_start(p: &Polygon) -> usize {
        let mut best = 0;
        for i in 1..p.verts.len() {
            let (bx, by) = (p.verts[best].x, p.verts[best].y);
            let (ix, iy) = (p.verts[i].x, p.verts[i].y);
            if (iy, ix) < (by, bx) {
                best = i;
            }
        }
        best
    }
    // Angular order of edge vectors in [0, 2pi), decided exactly.
    fn angle_cmp(u: Point, v: Point) -> Ordering {
        fn half(w: Point) -> u8 {
            if w.y > 0.0 || (w.y == 0.0 && w.x > 0.0) {
                0
            } else {
                1
            }
        }
        let (hu, hv) = (half(u), half(v));
        if hu != hv {
            return hu.cmp(&hv);
        }
        let c = RPoint::of(u).cross(&RPoint::of(v));
        match exact::sign(&c) {
            1 => Ordering::Less,
            -1 => Ordering::Greater,
            _ => Ordering::Equal,
        }
    }

    let (sa, sb) = (bottom_start(a), bottom_start(b));
    let (na, nb) = (a.verts.len(), b.verts.len());
    let edge = |p: &Polygon, s: usize, k: usize| {
        let n = p.verts.len();
        p.verts[(s + k + 1) % n] - p.verts[(s + k) % n]
    };
    let mut out: Vec<Point> = Vec::with_capacity(na + nb);
    let mut cur = a.verts[sa] + b.verts[sb];
    let (mut i, mut j) = (0usize, 0usize);
    while i < na || j < nb {
        out.push(cur);
        let step = if i == na {
            let e = edge(b, sb, j);
            j += 1;
            e
        } else if j == nb {
            let e = edge(a, sa, i);
            i += 1;
            e
        } else {
            let ea = edge(a, sa, i);
            let eb = edge(b, sb, j);
            match angle_cmp(ea, eb) {
                Ordering::Less => {
                    i += 1;
                    ea
                }
                Ordering::Greater => {
                    j += 1;
                    eb
                }
                Ordering::Equal => {
                    i += 1;
                    j += 1;
                    ea + eb
                }
            }
        };
        cur = cur + step;
    }
    Polygon::new(out)
}

/// A convex distance function together with its derived polygons.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(try_from = "GaugeSpec", into = "GaugeSpec")]
pub struct ConvexGauge {
    unit: Polygon,
    reflected: Polygon,
    symmetric: Polygon,
}

/// On-disk form: the vertex list of `Q` as `[x, y]` pairs, counterclockwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaugeSpec(pub Vec<[f64; 2]>);

impl TryFrom<GaugeSpec> for ConvexGauge {
    type Error = GaugeError;
    fn try_from(s: GaugeSpec) -> Result<Self, Self::Error> {
        ConvexGauge::new(&s.0)
    }
}

impl From<ConvexGauge> for GaugeSpec {
    fn from(g: ConvexGauge) -> GaugeSpec {
        GaugeSpec(g.unit.verts.iter().map(|p| [p.x, p.y]).collect())
    }
}

impl ConvexGauge {
    /// Validates the polygon and precomputes the reflected and symmetrized copies.
    pub fn new(verts: &[[f64; 2]]) -> Result<ConvexGauge, GaugeError> {
        let unit = Polygon::new(verts.iter().map(|v| pt(v[0], v[1])).collect())?;
        let reflected = unit.reflected();
        let symmetric = minkowski(&reflected, &unit)?;
        Ok(ConvexGauge { unit, reflected, symmetric })
    }

    #[inline]
    pub fn unit(&self) -> &Polygon {
        &self.unit
    }

    #[inline]
    pub fn reflected(&self) -> &Polygon {
        &self.reflected
    }

    #[inline]
    pub fn symmetric(&self) -> &Polygon {
        &self.symmetric
    }

    /// Directed distance from `x` to `y`.
    #[inline]
    pub fn distance(&self, x: Point, y: Point) -> f64 {
        self.unit.gauge(y - x)
    }

    /// Symmetric metric induced by the symmetrized polygon.
    #[inline]
    pub fn metric(&self, x: Point, y: Point) -> f64 {
        self.symmetric.gauge(y - x)
    }
}

/// Shared fixture gauges: a square, an asymmetric triangle, and an irregular
/// pentagon, covering symmetric and skewed unit balls.
#[cfg(test)]
pub(crate) fn test_gauges() -> Vec<ConvexGauge> {
    vec![
        ConvexGauge::new(&[[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]).unwrap(),
        ConvexGauge::new(&[[-1.0, -1.0], [2.0, -1.0], [-1.0, 2.0]]).unwrap(),
        ConvexGauge::new(&[[2.0, 0.0], [1.0, 2.0], [-1.5, 1.0], [-2.0, -1.0], [0.5, -2.0]])
            .unwrap(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn square() -> ConvexGauge {
        ConvexGauge::new(&[[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]).unwrap()
    }

    pub(crate) fn triangle() -> ConvexGauge {
        ConvexGauge::new(&[[-1.0, -1.0], [2.0, -1.0], [-1.0, 2.0]]).unwrap()
    }

    #[test]
    fn validation_errors() {
        assert_eq!(ConvexGauge::new(&[[1.0, 0.0], [0.0, 1.0]]).unwrap_err(), GaugeError::TooFewVertices);
        // Clockwise square.
        assert_eq!(
            ConvexGauge::new(&[[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [-1.0, 1.0]]).unwrap_err(),
            GaugeError::NonConvex
        );
        // Two collinear horizontal sides along the bottom.
        assert_eq!(
            ConvexGauge::new(&[[-1.0, -1.0], [0.0, -1.0], [1.0, -1.0], [0.0, 1.0]]).unwrap_err(),
            GaugeError::ParallelSides
        );
        // Origin on the boundary.
        assert_eq!(
            ConvexGauge::new(&[[0.0, 0.0], [2.0, 0.0], [1.0, 2.0]]).unwrap_err(),
            GaugeError::OriginOutside
        );
        // Reflex quadrilateral.
        assert_eq!(
            ConvexGauge::new(&[[2.0, -1.0], [0.2, 0.1], [-1.0, 2.0], [-1.0, -1.0]]).unwrap_err(),
            GaugeError::NonConvex
        );
    }

    #[test]
    fn reflected_and_symmetric_polygons() {
        let g = triangle();
        let mut refl: Vec<(f64, f64)> = g.reflected().verts().iter().map(|p| (p.x, p.y)).collect();
        refl.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(refl, vec![(-2.0, 1.0), (1.0, -2.0), (1.0, 1.0)]);

        let mut hexa: Vec<(f64, f64)> = g.symmetric().verts().iter().map(|p| (p.x, p.y)).collect();
        hexa.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            hexa,
            vec![(-3.0, 0.0), (-3.0, 3.0), (0.0, -3.0), (0.0, 3.0), (3.0, -3.0), (3.0, 0.0)]
        );

        let sq = square();
        let mut sym: Vec<(f64, f64)> = sq.symmetric().verts().iter().map(|p| (p.x, p.y)).collect();
        sym.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(sym, vec![(-2.0, -2.0), (-2.0, 2.0), (2.0, -2.0), (2.0, 2.0)]);
    }

    #[test]
    fn gauge_distances_match_known_values() {
        let sq = square();
        assert_eq!(sq.distance(pt(0.0, 0.0), pt(3.0, 1.0)), 3.0);

        let tri = triangle();
        assert_eq!(tri.distance(pt(0.0, 0.0), pt(0.0, -2.0)), 2.0);
        for target in [pt(1.0, 0.0), pt(-1.0, 0.0), pt(0.0, 1.0), pt(2.0, -1.0)] {
            assert!((tri.distance(pt(0.0, 0.0), target) - 1.0).abs() < 1e-12, "target {target:?}");
        }
        // Asymmetry: the reverse distances differ.
        assert!((tri.distance(pt(0.0, 0.0), pt(1.0, 1.0)) - 2.0).abs() < 1e-12);
        assert!((tri.distance(pt(1.0, 1.0), pt(0.0, 0.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metric_matches_known_values() {
        let sq = square();
        assert_eq!(sq.metric(pt(0.0, 0.0), pt(2.0, 0.0)), 1.0);
        let tri = triangle();
        assert!((tri.metric(pt(0.0, 0.0), pt(1.0, 1.0)) - 2.0 / 3.0).abs() < 1e-12);
        // Symmetry of the metric.
        assert_eq!(tri.metric(pt(0.3, -0.7), pt(-1.1, 0.2)), tri.metric(pt(-1.1, 0.2), pt(0.3, -0.7)));
    }

    #[test]
    fn cone_index_partitions_directions() {
        let tri = triangle();
        let q = tri.unit();
        for k in 0..q.len() {
            // Interior direction of cone k.
            let d = (q.vert(k) + q.vert(k + 1)) * 0.5;
            assert_eq!(q.cone_index(d).unwrap(), k);
            // On-ray direction belongs to cone k (half-open convention).
            assert_eq!(q.cone_index(q.vert(k)).unwrap(), k);
        }
    }

    #[test]
    fn gauge_value_is_linear_form_in_cone() {
        let tri = triangle();
        let q = tri.unit();
        let v = pt(0.7, 0.2);
        let k = q.cone_index(v).unwrap();
        let (n, c) = q.edge_form(k);
        assert!((q.gauge(v) - n.dot(v) / c).abs() < 1e-12);
    }
}

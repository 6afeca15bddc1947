//! Bounding frame and the ring of dummy sites that keeps every diagram bounded.
//!
//! Input points live in the square `[-half, half]^2`. The dummy sites are the
//! vertices of that square grown by twice and then inflated by `lambda` copies
//! of the symmetric polygon, where `lambda` covers the doubled square in the
//! reversed gauge. Every point of the inner square is then closer to some
//! dummy-free site than the dummies can interfere with, and all finite cells
//! of real sites stay inside the world box.

use super::{minkowski, ConvexGauge, GaugeError, Polygon};
use crate::geom::exact::RPoint;
use crate::geom::{pt, Point};
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoundingFrame {
    pub half: f64,
    pub lambda: f64,
    pub dummies: Vec<Point>,
    /// Half-width of the world box used to truncate unbounded cells.
    pub world: f64,
}

impl BoundingFrame {
    /// Whether `p` lies in the closed input square.
    #[inline]
    pub fn contains(&self, p: Point) -> bool {
        p.x.abs() <= self.half && p.y.abs() <= self.half
    }

    #[inline]
    pub fn contains_world(&self, p: Point) -> bool {
        p.x.abs() <= self.world && p.y.abs() <= self.world
    }
}

impl ConvexGauge {
    /// Builds the dummy frame for inputs in `[-half, half]^2`.
    pub fn dummy_frame(&self, half: f64) -> Result<BoundingFrame, GaugeError> {
        self.dummy_frame_seeded(half, 0)
    }

    /// Same as [`dummy_frame`](Self::dummy_frame) with an explicit seed for
    /// the vertex nudges.
    ///
    /// The raw outer polygon is a Minkowski sum, so its vertices come in
    /// pairs whose segments run exactly parallel to gauge edges and the
    /// bisector of such a pair has no well-defined fan. Each vertex is
    /// therefore nudged by a small deterministic offset, and the ring is
    /// accepted only once an exact check confirms every dummy pair is
    /// distinct and parallel to no gauge edge.
    pub fn dummy_frame_seeded(&self, half: f64, seed: u64) -> Result<BoundingFrame, GaugeError> {
        assert!(half.is_finite() && half > 0.0);
        let b2 = 2.0 * half;
        let corners = [pt(b2, b2), pt(-b2, b2), pt(-b2, -b2), pt(b2, -b2)];
        let mut lambda = 0.0f64;
        for c in corners {
            let v = self.reflected().gauge(c);
            if v > lambda {
                lambda = v;
            }
        }
        let square = Polygon::new(vec![pt(b2, b2), pt(-b2, b2), pt(-b2, -b2), pt(b2, -b2)])?;
        let outer = minkowski(&square, &self.symmetric().scaled(lambda))?;
        let base = outer.verts().to_vec();
        let raw_extent = base.iter().map(|p| p.norm_inf()).fold(0.0, f64::max);
        let mag = raw_extent * 2.0f64.powi(-18);
        let mut dummies = base.clone();
        for round in 0..64u64 {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ round);
            for (d, b) in dummies.iter_mut().zip(&base) {
                *d = pt(
                    b.x + mag * rng.random_range(-1.0..1.0),
                    b.y + mag * rng.random_range(-1.0..1.0),
                );
            }
            if self.ring_is_generic(&dummies) {
                let extent = dummies.iter().map(|p| p.norm_inf()).fold(0.0, f64::max);
                return Ok(BoundingFrame {
                    half,
                    lambda,
                    dummies,
                    world: 16.0 * extent,
                });
            }
        }
        unreachable!("dummy ring nudges exhausted without a generic placement")
    }

    /// Exact check that all pairs of `ring` are distinct and that no pair
    /// segment is parallel to an edge of the unit polygon.
    fn ring_is_generic(&self, ring: &[Point]) -> bool {
        let qp = self.unit();
        let edges: Vec<RPoint> = (0..qp.len())
            .map(|i| RPoint::of(qp.vert(i + 1)).sub(&RPoint::of(qp.vert(i))))
            .collect();
        for i in 0..ring.len() {
            for j in (i + 1)..ring.len() {
                let u = RPoint::of(ring[j]).sub(&RPoint::of(ring[i]));
                if u.x.is_zero() && u.y.is_zero() {
                    return false;
                }
                if edges.iter().any(|e| e.cross(&u).is_zero()) {
                    return false;
                }
            }
        }
        true
    }
}

//! Piecewise-linear bisectors of two sites under the gauge distance.
//!
//! Where `z - p` lies in fan cone `i` and `z - q` in cone `j`, the difference
//! `D_p(z) - D_q(z)` is a linear form, so the bisector restricted to that cone
//! pair is a segment. The curve is marched cone pair to cone pair starting
//! from its crossing with segment `pq`, in both directions, until the final
//! unbounded rays. Orientation is canonical: walking along a piece direction,
//! `p` lies on the left. Piece `k` and `k+1` meet at bend `k`; the piece
//! containing the segment crossing has index 0, so indices are independent of
//! construction order.
//!
//! March decisions compare floating point candidates with an error band and
//! re-derive the ambiguous ones from rational line intersections, so chained
//! rounding cannot steer the march. Exact ties are reported for the caller to
//! resolve by perturbation.

use super::ConvexGauge;
use crate::geom::exact::{self, RPoint, Rat};
use crate::geom::{pt, Point, Tie, FILTER_BAND};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BisectorError {
    #[error("bisector of coincident sites")]
    CoincidentSites,
    #[error("segment between sites is parallel to a gauge edge")]
    SegmentParallelToEdge,
    #[error(transparent)]
    Tie(#[from] Tie),
}

/// Which site's fan the crossed ray belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RayOwner {
    P,
    Q,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bend {
    pub at: Point,
    pub owner: RayOwner,
    pub ray: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    /// Fan cone of `z - p` on this piece.
    pub cone_p: usize,
    /// Fan cone of `z - q` on this piece.
    pub cone_q: usize,
    /// Gradient of `D_p - D_q` on this piece; the line is `grad . z = rhs`.
    pub grad: Point,
    pub rhs: f64,
    /// Canonical walking direction (`p` on the left).
    pub dir: Point,
}

/// Bisector of `p` and `q`: `pieces.len() - 1 == bends.len()`, both ends
/// unbounded, `bends[j]` joins `pieces[j]` and `pieces[j + 1]`.
#[derive(Debug, Clone)]
pub struct Bisector {
    pub p: Point,
    pub q: Point,
    /// Crossing of the bisector with segment `pq`.
    pub origin: Point,
    /// Canonical index of `pieces[0]`; the origin lies on canonical piece 0.
    pub base: i32,
    pub pieces: Vec<Piece>,
    pub bends: Vec<Bend>,
}

impl Bisector {
    #[inline]
    pub fn bend_canonical(&self, j: usize) -> i32 {
        self.base + j as i32
    }

    #[inline]
    pub fn piece_canonical(&self, j: usize) -> i32 {
        self.base + j as i32
    }

    #[inline]
    pub fn origin_piece(&self) -> usize {
        (-self.base) as usize
    }

    /// Exact location of bend `j`, re-derived from the defining lines.
    pub fn bend_exact(&self, g: &ConvexGauge, j: usize) -> RPoint {
        let piece = &self.pieces[j];
        let b = &self.bends[j];
        let (gr, rhs) = piece_line_rat(g, self.p, self.q, piece.cone_p, piece.cone_q);
        let (m, c) = ray_line_rat(g, self.site(b.owner), b.ray);
        exact::solve2(&gr.x, &gr.y, &m.x, &m.y, &rhs, &c).expect("bend lines cross by construction")
    }

    #[inline]
    pub fn site(&self, o: RayOwner) -> Point {
        match o {
            RayOwner::P => self.p,
            RayOwner::Q => self.q,
        }
    }

    /// Sample points spread over every piece; unbounded pieces are extended
    /// by `reach` past their single bend.
    pub fn sample(&self, per_piece: usize, reach: f64) -> Vec<Point> {
        let mut out = Vec::new();
        let n = self.pieces.len();
        for j in 0..n {
            let piece = &self.pieces[j];
            let (lo, hi) = (
                if j == 0 { None } else { Some(self.bends[j - 1].at) },
                if j + 1 == n { None } else { Some(self.bends[j].at) },
            );
            let (s, e) = match (lo, hi) {
                (Some(s), Some(e)) => (s, e),
                (Some(s), None) => (s, s + piece.dir * (reach / piece.dir.norm_inf().max(1e-300))),
                (None, Some(e)) => (e - piece.dir * (reach / piece.dir.norm_inf().max(1e-300)), e),
                (None, None) => {
                    let d = piece.dir * (reach / piece.dir.norm_inf().max(1e-300));
                    (self.origin - d, self.origin + d)
                }
            };
            for k in 0..per_piece {
                let t = (k as f64 + 0.5) / per_piece as f64;
                out.push(s + (e - s) * t);
            }
        }
        out
    }
}

impl ConvexGauge {
    /// Builds the full bisector of `p` and `q`.
    pub fn bisector(&self, p: Point, q: Point) -> Result<Bisector, BisectorError> {
        if p == q {
            return Err(BisectorError::CoincidentSites);
        }
        let u = q - p;
        let qp = self.unit();
        let n = qp.len();
        for i in 0..n {
            let e = RPoint::of(qp.vert(i + 1)).sub(&RPoint::of(qp.vert(i)));
            if exact::sign(&e.cross(&RPoint::of(u))) == 0 {
                return Err(BisectorError::SegmentParallelToEdge);
            }
        }
        let gu = qp.gauge(u);
        let gnu = qp.gauge(-u);
        let tstar = gnu / (gu + gnu);
        let origin = p + u * tstar;
        let ca0 = qp.cone_index(u)?;
        let cb0 = qp.cone_index(-u)?;

        let fwd = self.march(p, q, ca0, cb0, origin, 1.0)?;
        let bwd = self.march(p, q, ca0, cb0, origin, -1.0)?;

        let mut pieces = Vec::with_capacity(fwd.pieces.len() + bwd.pieces.len() - 1);
        let mut bends = Vec::with_capacity(fwd.bends.len() + bwd.bends.len());
        for j in (1..bwd.pieces.len()).rev() {
            pieces.push(bwd.pieces[j]);
        }
        for j in (0..bwd.bends.len()).rev() {
            bends.push(bwd.bends[j]);
        }
        pieces.extend_from_slice(&fwd.pieces);
        bends.extend_from_slice(&fwd.bends);
        let base = -((bwd.pieces.len() - 1) as i32);
        debug_assert_eq!(pieces.len(), bends.len() + 1);
        Ok(Bisector { p, q, origin, base, pieces, bends })
    }

    /// Marches from the origin piece in one direction (`sign` flips the
    /// canonical walk direction). Returns pieces and bends in march order.
    fn march(&self, p: Point, q: Point, ca0: usize, cb0: usize, origin: Point, sign: f64) -> Result<Run, BisectorError> {
        let qp = self.unit();
        let n = qp.len();
        let max_steps = 2 * n + 8;

        let mut run = Run { pieces: vec![make_piece(self, p, q, ca0, cb0)], bends: Vec::new() };
        let mut ca = ca0;
        let mut cb = cb0;
        let mut anchor = origin;
        let mut anchor_src = AnchorSrc::Origin;
        let mut entered: Option<(RayOwner, usize)> = None;

        for _ in 0..max_steps {
            let piece = *run.pieces.last().unwrap();
            let walk = piece.dir * sign;
            let cand_rays = [
                (RayOwner::P, ca),
                (RayOwner::P, (ca + 1) % n),
                (RayOwner::Q, cb),
                (RayOwner::Q, (cb + 1) % n),
            ];
            let mut cands: Vec<Candidate> = Vec::with_capacity(4);
            for (owner, ray) in cand_rays {
                if entered == Some((owner, ray)) {
                    continue;
                }
                let site = if owner == RayOwner::P { p } else { q };
                let w = qp.vert(ray);
                let denom = w.cross(walk);
                let denom_scale = (w.x * walk.y).abs() + (w.y * walk.x).abs();
                let c = if denom.abs() > FILTER_BAND * denom_scale.max(f64::MIN_POSITIVE) {
                    if let Some(z) = cross_point_f64(&piece, site, w) {
                        Candidate { owner, ray, z, exact: None }
                    } else {
                        continue;
                    }
                } else {
                    // Near-parallel: decide from the rational lines.
                    let (gr, rhs) = piece_line_rat(self, p, q, ca, cb);
                    let (m, mc) = ray_line_rat(self, site, ray);
                    match exact::solve2(&gr.x, &gr.y, &m.x, &m.y, &rhs, &mc) {
                        None => continue,
                        Some(z) => {
                            let zf = z.to_point();
                            let far = 1e50 * (1.0 + p.norm_inf() + q.norm_inf());
                            if !zf.is_finite() || zf.norm_inf() > far {
                                continue;
                            }
                            Candidate { owner, ray, z: zf, exact: Some(z) }
                        }
                    }
                };
                // Ray-side: the crossing must lie on the forward ray from the
                // site, not its reverse extension.
                let d = w.dot(c.z - site);
                let d_scale = (w.x * (c.z.x - site.x)).abs() + (w.y * (c.z.y - site.y)).abs();
                if d.abs() <= FILTER_BAND * d_scale.max(f64::MIN_POSITIVE) {
                    let ze = self.candidate_exact(p, q, ca, cb, site, c.ray);
                    match ze {
                        None => continue,
                        Some(z) => {
                            let wv = RPoint::of(w);
                            let dv = wv.dot(&z.sub(&RPoint::of(site)));
                            if exact::sign(&dv) != 1 {
                                continue;
                            }
                        }
                    }
                } else if d < 0.0 {
                    continue;
                }
                // Forward: strictly ahead of the anchor along the walk.
                let t = (c.z - anchor).dot(walk);
                let t_scale = ((c.z.x - anchor.x) * walk.x).abs() + ((c.z.y - anchor.y) * walk.y).abs();
                if t.abs() <= FILTER_BAND * t_scale.max(f64::MIN_POSITIVE) {
                    let ze = match self.candidate_exact(p, q, ca, cb, site, c.ray) {
                        None => continue,
                        Some(z) => z,
                    };
                    let ae = self.anchor_exact(p, q, ca, cb, &anchor_src);
                    let walk_r = walk_rat(self, p, q, ca, cb, sign);
                    let te = ze.sub(&ae).dot(&walk_r);
                    match exact::sign(&te) {
                        1 => {}
                        -1 => continue,
                        _ => return Err(Tie::new("bisector bend coincides with anchor").into()),
                    }
                } else if t < 0.0 {
                    continue;
                }
                cands.push(c);
            }

            if cands.is_empty() {
                return Ok(run); // final unbounded ray
            }
            // Nearest crossing along the walk; ambiguity resolved exactly.
            let mut best = 0usize;
            for k in 1..cands.len() {
                let diff = (cands[k].z - cands[best].z).dot(walk);
                let scale = ((cands[k].z.x - cands[best].z.x) * walk.x).abs()
                    + ((cands[k].z.y - cands[best].z.y) * walk.y).abs();
                if diff.abs() <= FILTER_BAND * scale.max(f64::MIN_POSITIVE) {
                    let zk = self
                        .candidate_exact(p, q, ca, cb, self.pick_site(p, q, cands[k].owner), cands[k].ray)
                        .expect("candidate crossed lines");
                    let zb = self
                        .candidate_exact(p, q, ca, cb, self.pick_site(p, q, cands[best].owner), cands[best].ray)
                        .expect("candidate crossed lines");
                    let walk_r = walk_rat(self, p, q, ca, cb, sign);
                    match exact::sign(&zk.sub(&zb).dot(&walk_r)) {
                        -1 => best = k,
                        1 => {}
                        _ => return Err(Tie::new("bisector crosses two fan rays at one point").into()),
                    }
                } else if diff < 0.0 {
                    best = k;
                }
            }
            let win = cands[best].clone();
            let z = if let Some(ref ze) = win.exact { ze.to_point() } else { win.z };
            run.bends.push(Bend { at: z, owner: win.owner, ray: win.ray });
            match win.owner {
                RayOwner::P => {
                    ca = if win.ray == ca { (ca + n - 1) % n } else { (ca + 1) % n };
                }
                RayOwner::Q => {
                    cb = if win.ray == cb { (cb + n - 1) % n } else { (cb + 1) % n };
                }
            }
            run.pieces.push(make_piece(self, p, q, ca, cb));
            anchor = z;
            anchor_src = AnchorSrc::Ray(win.owner, win.ray);
            entered = Some((win.owner, win.ray));
        }
        Err(Tie::new("bisector march exceeded its piece bound").into())
    }

    fn pick_site(&self, p: Point, q: Point, o: RayOwner) -> Point {
        match o {
            RayOwner::P => p,
            RayOwner::Q => q,
        }
    }

    fn candidate_exact(&self, p: Point, q: Point, ca: usize, cb: usize, site: Point, ray: usize) -> Option<RPoint> {
        let (gr, rhs) = piece_line_rat(self, p, q, ca, cb);
        let (m, c) = ray_line_rat(self, site, ray);
        exact::solve2(&gr.x, &gr.y, &m.x, &m.y, &rhs, &c)
    }

    fn anchor_exact(&self, p: Point, q: Point, ca: usize, cb: usize, src: &AnchorSrc) -> RPoint {
        match src {
            AnchorSrc::Origin => {
                let u = RPoint::of(q).sub(&RPoint::of(p));
                let gu = self.unit().gauge_rat(&u);
                let gnu = self.unit().gauge_rat(&u.neg());
                let t = gnu.clone() / (gu + gnu);
                let pr = RPoint::of(p);
                RPoint { x: pr.x + t.clone() * u.x, y: pr.y + t * u.y }
            }
            AnchorSrc::Ray(o, r) => {
                let site = self.pick_site(p, q, *o);
                self.candidate_exact(p, q, ca, cb, site, *r)
                    .expect("anchor bend lies on crossing lines")
            }
        }
    }
}

struct Run {
    pieces: Vec<Piece>,
    bends: Vec<Bend>,
}

#[derive(Clone)]
struct Candidate {
    owner: RayOwner,
    ray: usize,
    z: Point,
    exact: Option<RPoint>,
}

enum AnchorSrc {
    Origin,
    Ray(RayOwner, usize),
}

fn make_piece(g: &ConvexGauge, p: Point, q: Point, ca: usize, cb: usize) -> Piece {
    let (na, oa) = g.unit().edge_form(ca);
    let (nb, ob) = g.unit().edge_form(cb);
    let grad = na / oa - nb / ob;
    let rhs = na.dot(p) / oa - nb.dot(q) / ob;
    Piece { cone_p: ca, cone_q: cb, grad, rhs, dir: grad.rot90() }
}

pub(crate) fn piece_line_rat(g: &ConvexGauge, p: Point, q: Point, ca: usize, cb: usize) -> (RPoint, Rat) {
    let (na, oa) = g.unit().edge_form_rat(ca);
    let (nb, ob) = g.unit().edge_form_rat(cb);
    let gx = na.x.clone() / oa.clone() - nb.x.clone() / ob.clone();
    let gy = na.y.clone() / oa.clone() - nb.y.clone() / ob.clone();
    let rhs = na.dot(&RPoint::of(p)) / oa - nb.dot(&RPoint::of(q)) / ob;
    (RPoint { x: gx, y: gy }, rhs)
}

/// Line through `site` along fan ray `ray`: `m . z = m . site` with `m`
/// normal to the ray direction.
pub(crate) fn ray_line_rat(g: &ConvexGauge, site: Point, ray: usize) -> (RPoint, Rat) {
    let w = RPoint::of(g.unit().vert(ray));
    let m = RPoint { x: -w.y.clone(), y: w.x.clone() };
    let c = m.dot(&RPoint::of(site));
    (m, c)
}

fn walk_rat(g: &ConvexGauge, p: Point, q: Point, ca: usize, cb: usize, sign: f64) -> RPoint {
    let (gr, _) = piece_line_rat(g, p, q, ca, cb);
    let d = RPoint { x: -gr.y, y: gr.x };
    if sign > 0.0 {
        d
    } else {
        d.neg()
    }
}

fn cross_point_f64(piece: &Piece, site: Point, w: Point) -> Option<Point> {
    // piece.grad . z = piece.rhs ; rot90(w) . z = rot90(w) . site
    let m = w.rot90();
    let det = piece.grad.x * m.y - piece.grad.y * m.x;
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let c2 = m.dot(site);
    let zx = (piece.rhs * m.y - c2 * piece.grad.y) / det;
    let zy = (piece.grad.x * c2 - m.x * piece.rhs) / det;
    let z = pt(zx, zy);
    if z.is_finite() {
        Some(z)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> ConvexGauge {
        ConvexGauge::new(&[[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]).unwrap()
    }

    fn triangle() -> ConvexGauge {
        ConvexGauge::new(&[[-1.0, -1.0], [2.0, -1.0], [-1.0, 2.0]]).unwrap()
    }

    fn assert_equidistant(g: &ConvexGauge, b: &Bisector) {
        for z in b.sample(7, 50.0) {
            let dp = g.distance(b.p, z);
            let dq = g.distance(b.q, z);
            let scale = dp.abs().max(dq.abs()).max(1.0);
            assert!((dp - dq).abs() <= 1e-9 * scale, "z {z:?} dp {dp} dq {dq}");
        }
    }

    #[test]
    fn square_bisector_is_equidistant_with_few_bends() {
        let g = square();
        let b = g.bisector(pt(0.0, 0.0), pt(3.0, 1.0)).unwrap();
        assert!(b.bends.len() <= 4, "bends {:?}", b.bends);
        assert_eq!(b.pieces.len(), b.bends.len() + 1);
        assert_equidistant(&g, &b);
    }

    #[test]
    fn triangle_bisector_is_equidistant() {
        let g = triangle();
        for (p, q) in [
            (pt(0.0, 0.0), pt(3.0, 1.0)),
            (pt(-1.0, 0.25), pt(0.5, 0.125)),
            (pt(0.3, -0.8), pt(-0.7, 1.1)),
        ] {
            let b = g.bisector(p, q).unwrap();
            assert_equidistant(&g, &b);
        }
    }

    #[test]
    fn orientation_keeps_p_on_left() {
        let g = triangle();
        let b = g.bisector(pt(0.0, 0.0), pt(3.0, 1.0)).unwrap();
        let n = b.pieces.len();
        for (j, piece) in b.pieces.iter().enumerate() {
            let step = piece.dir * (0.5 / piece.dir.norm_inf());
            let z = if j == 0 {
                b.bends[0].at - step
            } else if j + 1 == n {
                b.bends[j - 1].at + step
            } else {
                (b.bends[j - 1].at + b.bends[j].at) * 0.5
            };
            let left = z + piece.dir.rot90() * 1e-6;
            assert!(g.distance(b.p, left) < g.distance(b.q, left), "piece {j}");
        }
    }

    #[test]
    fn canonical_indices_are_stable() {
        let g = square();
        let b = g.bisector(pt(0.0, 0.0), pt(3.0, 1.0)).unwrap();
        let origin_piece = &b.pieces[b.origin_piece()];
        // The origin crossing lies on the origin piece's line.
        assert!((origin_piece.grad.dot(b.origin) - origin_piece.rhs).abs() < 1e-12);
        // Canonical bend indices are consecutive and centered.
        for j in 0..b.bends.len() {
            assert_eq!(b.bend_canonical(j), b.base + j as i32);
        }
    }

    #[test]
    fn parallel_segment_is_rejected() {
        let g = square();
        assert!(matches!(
            g.bisector(pt(0.0, 0.0), pt(2.0, 0.0)),
            Err(BisectorError::SegmentParallelToEdge)
        ));
        assert!(matches!(g.bisector(pt(1.0, 1.0), pt(1.0, 1.0)), Err(BisectorError::CoincidentSites)));
    }

    #[test]
    fn bend_exact_matches_float_bends() {
        let g = triangle();
        let b = g.bisector(pt(0.125, -0.5), pt(1.75, 0.875)).unwrap();
        for j in 0..b.bends.len() {
            let e = b.bend_exact(&g, j).to_point();
            assert!((e - b.bends[j].at).norm_inf() < 1e-9, "bend {j}");
        }
    }
}

//! Filtered predicates on diagram vertices with exact rational fallbacks.
//!
//! Every stored vertex position carries an absolute error bound; comparisons
//! widen their float tolerance by the position error times the gauge's
//! Lipschitz constant and re-derive the exact position from the vertex recipe
//! when the float evidence is inside the band. An exact zero is a genuine
//! degeneracy and surfaces as a tie for the caller to perturb away.

use super::{Diagram, Edge, ExactSpec, VertKey};
use crate::gauge::bisector::{piece_line_rat, ray_line_rat};
use crate::gauge::{ConvexGauge, Polygon};
use crate::geom::exact::{self, rat, RPoint, Rat};
use crate::geom::{pt, GeomResult, Point, Tie, FILTER_BAND};
use num_traits::Zero;
use std::cmp::Ordering;

/// Line in normal form `n . z = c`.
pub(crate) type LineF = (Point, f64);
pub(crate) type LineR = (RPoint, Rat);

/// Max relative position error accepted for stored vertices; noisier solves
/// are refined through the exact recipe before storing.
pub(crate) const POS_TOL: f64 = 1e-9;

impl Polygon {
    /// Lipschitz constant of the gauge with respect to the max norm.
    pub fn lip(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.len() {
            let (n, c) = self.edge_form(i);
            let v = (n.x.abs() + n.y.abs()) / c;
            if v > best {
                best = v;
            }
        }
        best
    }
}

pub(crate) fn wall_line_f(d: &Diagram, side: u8) -> LineF {
    let w = d.frame.world;
    match side % 4 {
        0 => (pt(0.0, 1.0), -w),
        1 => (pt(1.0, 0.0), w),
        2 => (pt(0.0, 1.0), w),
        _ => (pt(1.0, 0.0), -w),
    }
}

pub(crate) fn wall_line_rat(d: &Diagram, side: u8) -> LineR {
    let (n, c) = wall_line_f(d, side);
    (RPoint::of(n), rat(c))
}

/// Direction a wall is walked in counterclockwise boundary order.
pub(crate) fn wall_dir(side: u8) -> Point {
    match side % 4 {
        0 => pt(1.0, 0.0),
        1 => pt(0.0, 1.0),
        2 => pt(-1.0, 0.0),
        _ => pt(0.0, -1.0),
    }
}

/// Float carrier line of a boundary arc (the full line its segment lies on)
/// and the direction the boundary walks along it (owner on the left).
pub(crate) fn carrier_line_f(d: &Diagram, own: u32, edge: Edge, cone_own: u8, cone_other: u8) -> (LineF, Point) {
    match edge {
        Edge::Site(r) => {
            let (na, oa) = d.gauge.unit().edge_form(cone_own as usize);
            let (nb, ob) = d.gauge.unit().edge_form(cone_other as usize);
            let grad = na / oa - nb / ob;
            let rhs = na.dot(d.site(own)) / oa - nb.dot(d.site(r)) / ob;
            ((grad, rhs), grad.rot90())
        }
        Edge::Wall(side) => (wall_line_f(d, side), wall_dir(side)),
    }
}

pub(crate) fn carrier_line_rat(d: &Diagram, own: u32, edge: Edge, cone_own: u8, cone_other: u8) -> LineR {
    match edge {
        Edge::Site(r) => {
            piece_line_rat(&d.gauge, d.site(own), d.site(r), cone_own as usize, cone_other as usize)
        }
        Edge::Wall(side) => wall_line_rat(d, side),
    }
}

pub(crate) fn carrier_dir_rat(d: &Diagram, own: u32, edge: Edge, cone_own: u8, cone_other: u8) -> RPoint {
    match edge {
        Edge::Site(_) => {
            let (g, _) = carrier_line_rat(d, own, edge, cone_own, cone_other);
            RPoint { x: -g.y, y: g.x }
        }
        Edge::Wall(side) => RPoint::of(wall_dir(side)),
    }
}

/// Exact position of a vertex from its key and recipe.
pub(crate) fn vert_exact(d: &Diagram, key: &VertKey, spec: &ExactSpec) -> RPoint {
    let g = &d.gauge;
    match (key, spec) {
        (VertKey::Three { sites, cones }, ExactSpec::Three) => {
            solve_three_rat(g, [d.site(sites[0]), d.site(sites[1]), d.site(sites[2])], *cones)
                .expect("three-site vertex recipe is solvable")
        }
        (VertKey::Bend { pair, .. }, ExactSpec::Bend { cones, ray_of_first, ray }) => {
            let (a, b) = (d.site(pair[0]), d.site(pair[1]));
            let line = piece_line_rat(g, a, b, cones.0 as usize, cones.1 as usize);
            let site = if *ray_of_first { a } else { b };
            let rl = ray_line_rat(g, site, *ray as usize);
            exact::solve2(&line.0.x, &line.0.y, &rl.0.x, &rl.0.y, &line.1, &rl.1)
                .expect("bend recipe is solvable")
        }
        (VertKey::WallX { pair, .. }, ExactSpec::WallX { cones, side }) => {
            let (a, b) = (d.site(pair[0]), d.site(pair[1]));
            let line = piece_line_rat(g, a, b, cones.0 as usize, cones.1 as usize);
            let wl = wall_line_rat(d, *side);
            exact::solve2(&line.0.x, &line.0.y, &wl.0.x, &wl.0.y, &line.1, &wl.1)
                .expect("wall crossing recipe is solvable")
        }
        (VertKey::Corner { side }, ExactSpec::Corner) => RPoint::of(d.corner(*side)),
        (k, s) => unreachable!("mismatched vertex recipe {k:?} / {s:?}"),
    }
}

/// Exact solve of `D_{p0} = D_{p1} = D_{p2}` with `p_k - z`... the reverse:
/// `z - p_k` constrained to fan cone `cones[k]`.
pub(crate) fn solve_three_rat(g: &ConvexGauge, pts: [Point; 3], cones: [u8; 3]) -> Option<RPoint> {
    // D_p(z) = <n, z - p> / c = g_k . z - r_k on the cone.
    let form = |k: usize| -> (RPoint, Rat) {
        let (n, c) = g.unit().edge_form_rat(cones[k] as usize);
        let gk = RPoint { x: n.x.clone() / c.clone(), y: n.y.clone() / c.clone() };
        let rk = n.dot(&RPoint::of(pts[k])) / c;
        (gk, rk)
    };
    let (g0, r0) = form(0);
    let (g1, r1) = form(1);
    let (g2, r2) = form(2);
    exact::solve2(
        &(g0.x.clone() - g1.x),
        &(g0.y.clone() - g1.y),
        &(g0.x - g2.x),
        &(g0.y - g2.y),
        &(r0.clone() - r1),
        &(r0 - r2),
    )
}

/// Float crossing of two lines with an error estimate; falls back to (and
/// refines through) `exact` when conditioning is poor. `None` for parallel.
pub(crate) fn cross_refined(l1: LineF, l2: LineF, exact: impl Fn() -> Option<RPoint>) -> Option<(Point, f64)> {
    let det = l1.0.x * l2.0.y - l1.0.y * l2.0.x;
    let det_scale = (l1.0.x * l2.0.y).abs() + (l1.0.y * l2.0.x).abs();
    if det.abs() <= FILTER_BAND * det_scale.max(f64::MIN_POSITIVE) {
        let z = exact()?;
        let zf = z.to_point();
        return Some((zf, 4.0 * f64::EPSILON * (1.0 + zf.norm_inf())));
    }
    let zx = (l1.1 * l2.0.y - l2.1 * l1.0.y) / det;
    let zy = (l1.0.x * l2.1 - l2.0.x * l1.1) / det;
    let z = pt(zx, zy);
    if !z.is_finite() {
        let zr = exact()?;
        let zf = zr.to_point();
        return Some((zf, 4.0 * f64::EPSILON * (1.0 + zf.norm_inf())));
    }
    let cond = ((l1.1.abs() + l2.1.abs()) / det.abs()).max(z.norm_inf()).max(1.0);
    let err = 64.0 * f64::EPSILON * cond;
    if err > POS_TOL * (1.0 + z.norm_inf()) {
        let zr = exact()?;
        let zf = zr.to_point();
        return Some((zf, 4.0 * f64::EPSILON * (1.0 + zf.norm_inf())));
    }
    Some((z, err))
}

/// Sign of `D_own(z) - D_other(z)`: `Less` means `z` is on `own`'s side.
/// `err` bounds the position error of `z`; `exact` produces its exact value.
pub(crate) fn side_of(
    d: &Diagram,
    own: u32,
    other: u32,
    z: Point,
    err: f64,
    exact_z: impl Fn() -> RPoint,
) -> GeomResult<Ordering> {
    let g = &d.gauge;
    let (dv_own, s_own) = g.unit().gauge_scaled(z - d.site(own));
    let (dv_other, s_other) = g.unit().gauge_scaled(z - d.site(other));
    let lip = g.unit().lip();
    let band = FILTER_BAND * (s_own + s_other).max(f64::MIN_POSITIVE) + 2.0 * lip * err;
    let diff = dv_own - dv_other;
    if diff.abs() > band {
        return Ok(if diff > 0.0 { Ordering::Greater } else { Ordering::Less });
    }
    let zr = exact_z();
    let da = g.unit().gauge_rat(&zr.sub(&RPoint::of(d.site(own))));
    let db = g.unit().gauge_rat(&zr.sub(&RPoint::of(d.site(other))));
    match da.cmp(&db) {
        Ordering::Equal => Err(Tie::with(
            "point equidistant from two sites",
            vec![own as u64, other as u64],
        )),
        o => Ok(o),
    }
}

/// `side_of` for a stored vertex.
pub(crate) fn side_at_vert(d: &Diagram, own: u32, other: u32, vid: u32) -> GeomResult<Ordering> {
    let rec = d.vert(vid);
    side_of(d, own, other, rec.pos, rec.err, || vert_exact(d, &rec.key, &rec.spec))
}

impl Diagram {
    /// Sign of `D_own(v) - D_other(v)` at a stored vertex: `Less` when the
    /// vertex is nearer to `own`. Exact equidistance is a tie.
    pub fn vertex_side(&self, own: u32, other: u32, v: u32) -> GeomResult<Ordering> {
        side_at_vert(self, own, other, v)
    }

    /// Distance from site `s` to point `x` under the gauge.
    pub fn site_distance(&self, s: u32, x: Point) -> f64 {
        self.gauge.distance(self.site(s), x)
    }
}

/// Whether direction `z - site` lies in half-open fan cone `cone`, with an
/// exact fallback through `exact_z`.
pub(crate) fn cone_ok(
    d: &Diagram,
    site: u32,
    cone: u8,
    z: Point,
    err: f64,
    exact_z: impl Fn() -> RPoint,
) -> GeomResult<bool> {
    let g = d.gauge.unit();
    let s = d.site(site);
    let v = z - s;
    let lo = g.vert(cone as usize);
    let hi = g.vert(cone as usize + 1);
    let c_lo = lo.cross(v);
    let c_hi = hi.cross(v);
    let band_lo = FILTER_BAND * ((lo.x * v.y).abs() + (lo.y * v.x).abs()).max(f64::MIN_POSITIVE)
        + (lo.x.abs() + lo.y.abs()) * err;
    let band_hi = FILTER_BAND * ((hi.x * v.y).abs() + (hi.y * v.x).abs()).max(f64::MIN_POSITIVE)
        + (hi.x.abs() + hi.y.abs()) * err;
    if c_lo.abs() > band_lo && c_hi.abs() > band_hi {
        return Ok(c_lo > 0.0 && c_hi < 0.0);
    }
    let zr = exact_z();
    let vr = zr.sub(&RPoint::of(s));
    if vr.x.is_zero() && vr.y.is_zero() {
        return Err(Tie::with("cone test at the site itself", vec![site as u64]));
    }
    Ok(g.cone_index_rat(&vr)? == cone as usize)
}

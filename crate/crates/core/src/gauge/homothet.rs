//! Scaled translates of the gauge polygon and circumscription queries.

use super::{ConvexGauge, Polygon};
use crate::geom::exact::{self, rat, RPoint, Rat};
use crate::geom::{GeomResult, Point, Tie, FILTER_BAND};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `center + scale * P` for an ambient polygon `P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homothet {
    pub center: Point,
    pub scale: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomothetError {
    #[error("largest empty homothet is unbounded: no sites given")]
    Unbounded,
}

impl ConvexGauge {
    /// Whether `q` lies in the closed homothet `h` of the unit polygon.
    pub fn covers(&self, h: &Homothet, q: Point) -> bool {
        let (val, scale) = self.unit().gauge_scaled(q - h.center);
        val <= h.scale + FILTER_BAND * scale.max(h.scale.abs()).max(f64::MIN_POSITIVE)
    }

    /// Strict conflict test: `q` interior to `h`, exact boundary hits are ties.
    pub fn conflicts(&self, h: &Homothet, q: Point) -> GeomResult<bool> {
        let (val, scale) = self.unit().gauge_scaled(q - h.center);
        let band = FILTER_BAND * scale.max(h.scale.abs()).max(f64::MIN_POSITIVE);
        let diff = val - h.scale;
        if diff.abs() > band {
            return Ok(diff < 0.0);
        }
        let v = RPoint::of(q).sub(&RPoint::of(h.center));
        let val = self.unit().gauge_rat(&v);
        match val.cmp(&rat(h.scale)) {
            std::cmp::Ordering::Less => Ok(true),
            std::cmp::Ordering::Greater => Ok(false),
            std::cmp::Ordering::Equal => Err(Tie::new("point exactly on homothet boundary")),
        }
    }

    /// Largest homothet of the unit polygon centered at `x` whose interior
    /// avoids all `sites`; its scale is the reversed gauge distance to the
    /// nearest site.
    pub fn largest_empty_homothet(&self, x: Point, sites: &[Point]) -> Result<Homothet, HomothetError> {
        if sites.is_empty() {
            return Err(HomothetError::Unbounded);
        }
        let mut best = f64::INFINITY;
        for &s in sites {
            let v = self.reflected().gauge(s - x);
            if v < best {
                best = v;
            }
        }
        Ok(Homothet { center: x, scale: best })
    }

    /// All homothets of the unit polygon through `a`, `b`, `c`; see
    /// [`circumscribe_all_on`].
    pub fn circumscribe_all(&self, a: Point, b: Point, c: Point) -> GeomResult<Vec<(Homothet, [usize; 3])>> {
        circumscribe_all_on(self.unit(), a, b, c)
    }

    /// Smallest homothet of the unit polygon with all three points on its
    /// boundary, if one exists.
    pub fn circumscribe_three(&self, a: Point, b: Point, c: Point) -> GeomResult<Option<Homothet>> {
        let mut best: Option<Homothet> = None;
        for (h, _) in self.circumscribe_all(a, b, c)? {
            best = Some(match best {
                None => h,
                Some(cur) if h.scale < cur.scale => h,
                Some(cur) => cur,
            });
        }
        Ok(best)
    }
}

/// All homothets `z + lam * poly` whose boundary passes through the three
/// points, keyed by the fan cones of `p_k - z`. Enumerates cone triples and
/// solves the linear system each induces; solutions are valid only when every
/// point lands back in its assumed cone, so distinct solutions carry distinct
/// triples and the list order is deterministic.
pub fn circumscribe_all_on(poly: &Polygon, a: Point, b: Point, c: Point) -> GeomResult<Vec<(Homothet, [usize; 3])>> {
    if a == b || b == c || a == c {
        return Err(Tie::new("circumscribe needs three distinct points"));
    }
    let n = poly.len();
    let pts = [a, b, c];
    let mut out = Vec::new();
    for ia in 0..n {
        for ib in 0..n {
            for ic in 0..n {
                if let Some(h) = solve_cone_triple(poly, pts, [ia, ib, ic])? {
                    out.push((h, [ia, ib, ic]));
                }
            }
        }
    }
    Ok(out)
}

/// Solves `gauge(p_k - z) = lam` for all `k`, assuming `p_k - z` lies in fan
/// cone `cones[k]` where the gauge is the linear form `<n_i, .> / c_i`.
fn solve_cone_triple(poly: &Polygon, pts: [Point; 3], cones: [usize; 3]) -> GeomResult<Option<Homothet>> {
    // lam(z) = <n_i, p_k - z> / c_i = r_k - <g_k, z>
    let form = |k: usize| {
        let (n, c) = poly.edge_form(cones[k]);
        (n / c, n.dot(pts[k]) / c)
    };
    let (g0, r0) = form(0);
    let (g1, r1) = form(1);
    let (g2, r2) = form(2);
    // Equal lam: (g0 - g1) . z = r0 - r1 ; (g0 - g2) . z = r0 - r2
    let a11 = g0.x - g1.x;
    let a12 = g0.y - g1.y;
    let a21 = g0.x - g2.x;
    let a22 = g0.y - g2.y;
    let b1 = r0 - r1;
    let b2 = r0 - r2;
    let det = a11 * a22 - a12 * a21;
    let det_scale = (a11 * a22).abs() + (a12 * a21).abs();

    let exact_solution = |poly: &Polygon| -> Option<(RPoint, Rat)> {
        let form = |k: usize| -> (RPoint, Rat) {
            let (n, c) = poly.edge_form_rat(cones[k]);
            let g = RPoint { x: n.x.clone() / c.clone(), y: n.y.clone() / c.clone() };
            let r = n.dot(&RPoint::of(pts[k])) / c;
            (g, r)
        };
        let (g0, r0) = form(0);
        let (g1, r1) = form(1);
        let (g2, r2) = form(2);
        let z = exact::solve2(
            &(g0.x.clone() - g1.x),
            &(g0.y.clone() - g1.y),
            &(g0.x.clone() - g2.x),
            &(g0.y.clone() - g2.y),
            &(r0.clone() - r1),
            &(r0.clone() - r2),
        )?;
        let lam = r0 - (g0.x * z.x.clone() + g0.y * z.y.clone());
        Some((z, lam))
    };

    let near_singular = det.abs() <= FILTER_BAND * det_scale.max(f64::MIN_POSITIVE);
    let (z, lam, cond) = if near_singular {
        match exact_solution(poly) {
            None => return Ok(None),
            Some((zr, lamr)) => {
                if exact::sign(&lamr) != 1 {
                    return Ok(None);
                }
                (zr.to_point(), exact::to_f64(&lamr), f64::INFINITY)
            }
        }
    } else {
        let zx = (b1 * a22 - b2 * a12) / det;
        let zy = (a11 * b2 - a21 * b1) / det;
        let z = Point { x: zx, y: zy };
        let lam = r0 - g0.dot(z);
        let cond = ((b1.abs() + b2.abs()) / det.abs()).max(1.0);
        (z, lam, cond)
    };
    if !lam.is_finite() || lam <= 0.0 {
        return Ok(None);
    }

    // Validity: each p_k - z must lie in its assumed cone. Floating answers
    // near a cone boundary get an exact recheck at the rational solution.
    let pos_err = if cond.is_finite() { 64.0 * f64::EPSILON * cond } else { 0.0 };
    for k in 0..3 {
        let v = pts[k] - z;
        if cond.is_finite() {
            let margin = cone_margin(poly, v, cones[k]);
            let band = (pos_err / v.norm_inf().max(f64::MIN_POSITIVE)).max(FILTER_BAND);
            if margin > band {
                continue;
            }
            if margin < -band {
                return Ok(None);
            }
        }
        let (zr, _) = match exact_solution(poly) {
            None => return Ok(None),
            Some(s) => s,
        };
        let vr = RPoint::of(pts[k]).sub(&zr);
        match poly.cone_index_rat(&vr) {
            Ok(i) if i == cones[k] => {}
            Ok(_) => return Ok(None),
            Err(_) => return Ok(None), // p_k coincides with the center
        }
    }
    Ok(Some(Homothet { center: z, scale: lam }))
}

/// Signed relative margin of direction `v` against half-open cone `i`:
/// positive strictly inside, negative outside, near zero on the boundary.
fn cone_margin(poly: &Polygon, v: Point, i: usize) -> f64 {
    let lo = poly.vert(i);
    let hi = poly.vert(i + 1);
    let nv = v.norm_inf().max(f64::MIN_POSITIVE);
    let s_lo = lo.cross(v) / (lo.norm_inf() * nv);
    let s_hi = -(hi.cross(v)) / (hi.norm_inf() * nv);
    s_lo.min(s_hi)
}

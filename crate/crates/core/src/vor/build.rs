//! Diagram construction: incremental insertion, deletion, point location.
//!
//! Insertion finds the cell containing the new site with a straight walk,
//! then floods outward over the old cell adjacency reclipping every cell the
//! new site changes; the flood is complete because the destroyed territory is
//! exactly the new cell, which the old cells partition into edge-adjacent
//! pieces. The new cell itself is the world box clipped against the affected
//! sites. Deletion rebuilds each neighbor cell from the world box against its
//! candidate influencers. Vertex keys are construction-order independent, so
//! any insertion order and any delete/reinsert history converge to the same
//! diagram.
//!
//! Exact ties anywhere in the predicates abort the operation; `prepare`
//! retries the whole construction with deterministic, growing jitter.

use super::clip::{along_cmp, clip, commit, world_boundary, ClipOutcome, TempBoundary};
use super::pred;
use super::{Diagram, Edge, SiteId};
use crate::gauge::bisector::{Bisector, BisectorError};
use crate::gauge::frame::BoundingFrame;
use crate::gauge::ConvexGauge;
use crate::geom::exact::{rat, RPoint, Rat};
use crate::geom::{pt, GeomResult, Point, Tie, FILTER_BAND};
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::{HashMap, HashSet, VecDeque};
use thiserror::Error;

/// Bisectors keyed by sorted site pair. Site positions are immutable per id,
/// so entries stay valid for the diagram's whole life.
#[derive(Default)]
pub struct BisCache {
    map: HashMap<(SiteId, SiteId), Bisector>,
}

impl BisCache {
    pub fn new() -> BisCache {
        BisCache::default()
    }

    pub fn get<'a>(&'a mut self, d: &Diagram, x: SiteId, y: SiteId) -> GeomResult<&'a Bisector> {
        let key = if x < y { (x, y) } else { (y, x) };
        if !self.map.contains_key(&key) {
            let bis = d.gauge.bisector(d.site(key.0), d.site(key.1)).map_err(|e| match e {
                BisectorError::Tie(t) => t,
                BisectorError::CoincidentSites => {
                    Tie::with("coincident sites", vec![key.0 as u64, key.1 as u64])
                }
                BisectorError::SegmentParallelToEdge => {
                    Tie::with("site pair parallel to a gauge edge", vec![key.0 as u64, key.1 as u64])
                }
            })?;
            self.map.insert(key, bis);
        }
        Ok(&self.map[&key])
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("degenerate input still tied after {attempts} jitter attempts: {last}")]
    Unresolvable { attempts: u32, last: Tie },
}

pub const MAX_JITTER_ATTEMPTS: u32 = 32;
const JITTER_BASE: f64 = 9.094947017729282e-13; // 2^-40

impl Diagram {
    /// Diagram over the dummy ring plus `real`, inserted in `order` (indices
    /// into `real`; the identity permutation when omitted; a strict subset
    /// leaves the remaining sites absent). Ties abort; see `prepare`.
    pub fn build(
        gauge: &ConvexGauge,
        frame: &BoundingFrame,
        real: &[Point],
        order: Option<&[usize]>,
    ) -> GeomResult<Diagram> {
        let mut d = Diagram::empty(gauge.clone(), frame.clone(), real);
        let mut cache = BisCache::new();
        let mut last = None;
        for id in 0..d.dummy_count as SiteId {
            d.insert_with(&mut cache, id, last)?;
            last = Some(id);
        }
        let base = d.dummy_count;
        let ids: Vec<SiteId> = match order {
            Some(o) => o.iter().map(|&i| (base + i) as SiteId).collect(),
            None => (base..base + real.len()).map(|i| i as SiteId).collect(),
        };
        for id in ids {
            d.insert_with(&mut cache, id, last)?;
            last = Some(id);
        }
        Ok(d)
    }

    /// Reference construction: every cell built independently by clipping the
    /// world box against every other site in id order. Quadratic; for tests.
    pub fn build_scratch(
        gauge: &ConvexGauge,
        frame: &BoundingFrame,
        real: &[Point],
    ) -> GeomResult<Diagram> {
        let mut d = Diagram::empty(gauge.clone(), frame.clone(), real);
        let mut cache = BisCache::new();
        let n = d.sites.len() as SiteId;
        for own in 0..n {
            let mut bnd = world_boundary(&d);
            for other in 0..n {
                if other == own {
                    continue;
                }
                let bis = cache.get(&d, own, other)?;
                if let ClipOutcome::Changed(nb) = clip(&d, own, &bnd, other, bis)? {
                    bnd = nb;
                }
            }
            commit(&mut d, own, bnd);
        }
        Ok(d)
    }

    /// Inserts site `q`, reusing `cache` across calls; `hint` seeds the
    /// locate walk with any present site.
    pub fn insert_with(&mut self, cache: &mut BisCache, q: SiteId, hint: Option<SiteId>) -> GeomResult<()> {
        assert!(!self.is_present(q), "site {q} already inserted");
        let first_present = self.present_sites().next();
        let Some(fallback) = first_present else {
            commit(self, q, world_boundary(self));
            return Ok(());
        };
        let x = self.site(q);
        debug_assert!(x.norm_inf() < self.frame.world);
        let start = hint.filter(|&s| self.is_present(s)).unwrap_or(fallback);
        let s0 = self.locate_from(start, x)?;

        // Flood over old adjacency; membership is "the clip changes the cell".
        let mut affected: Vec<SiteId> = Vec::new();
        let mut new_bounds: HashMap<SiteId, TempBoundary> = HashMap::new();
        let mut seen: HashSet<SiteId> = HashSet::new();
        let mut queue: VecDeque<SiteId> = VecDeque::new();
        seen.insert(s0);
        queue.push_back(s0);
        while let Some(r) = queue.pop_front() {
            let bis = cache.get(self, r, q)?;
            let bnd = TempBoundary::from_cell(self.cell(r));
            match clip(self, r, &bnd, q, bis)? {
                ClipOutcome::Unchanged => {}
                ClipOutcome::Changed(nb) => {
                    affected.push(r);
                    new_bounds.insert(r, nb);
                    for s in self.cell(r).neighbor_sites() {
                        if seen.insert(s) {
                            queue.push_back(s);
                        }
                    }
                }
            }
        }
        if affected.is_empty() {
            return Err(Tie::with("located cell unaffected by its own site", vec![q as u64, s0 as u64]));
        }
        affected.sort_unstable();

        let mut qb = world_boundary(self);
        for &r in &affected {
            let bis = cache.get(self, q, r)?;
            match clip(self, q, &qb, r, bis)? {
                ClipOutcome::Changed(nb) => qb = nb,
                // Every affected cell borders the new cell, so an unchanged
                // clip means an inconsistent filtered decision somewhere.
                ClipOutcome::Unchanged => {
                    return Err(Tie::with("affected cell does not border the new one", vec![q as u64, r as u64]))
                }
            }
        }
        commit(self, q, qb);
        for &r in &affected {
            let nb = new_bounds.remove(&r).expect("boundary recorded for affected cell");
            commit(self, r, nb);
        }
        Ok(())
    }

    pub fn insert(&mut self, q: SiteId) -> GeomResult<()> {
        self.insert_with(&mut BisCache::new(), q, None)
    }

    /// Removes site `p` and rebuilds each neighbor cell from the world box
    /// against its candidate influencers (its own neighbors plus `p`'s).
    pub fn delete_with(&mut self, cache: &mut BisCache, p: SiteId) -> GeomResult<()> {
        assert!(self.is_present(p), "site {p} not inserted");
        assert!(!self.is_dummy(p), "the dummy ring is permanent");
        let nbrs = self.neighbors(p);
        let mut rebuilt: Vec<(SiteId, TempBoundary)> = Vec::new();
        for &r in &nbrs {
            let mut cands: Vec<SiteId> = self.neighbors(r);
            cands.extend_from_slice(&nbrs);
            cands.sort_unstable();
            cands.dedup();
            cands.retain(|&c| c != p && c != r);
            let mut bnd = world_boundary(self);
            for &c in &cands {
                let bis = cache.get(self, r, c)?;
                if let ClipOutcome::Changed(nb) = clip(self, r, &bnd, c, bis)? {
                    bnd = nb;
                }
            }
            rebuilt.push((r, bnd));
        }
        self.set_cell(p, None);
        for (r, bnd) in rebuilt {
            commit(self, r, bnd);
        }
        Ok(())
    }

    pub fn delete(&mut self, p: SiteId) -> GeomResult<()> {
        self.delete_with(&mut BisCache::new(), p)
    }

    /// Site owning `x`, by a straight walk from `start`'s site. Exact
    /// equidistance along the way (including `x` on a boundary) is a tie.
    pub fn locate_from(&self, start: SiteId, x: Point) -> GeomResult<SiteId> {
        self.locate_from_counted(start, x, &mut 0)
    }

    /// `locate_from` with arc-scan work added to `steps`.
    pub fn locate_from_counted(
        &self,
        start: SiteId,
        x: Point,
        steps: &mut u64,
    ) -> GeomResult<SiteId> {
        assert!(self.is_present(start));
        debug_assert!(x.norm_inf() < self.frame.world);
        let a0 = self.site(start);
        if a0 == x {
            return Ok(start);
        }
        let seg = x - a0;
        let cap = 4 * self.cells.iter().flatten().count() + 16;
        let mut cur = start;
        // Last crossing: parameter with band, plus its carrier for exact
        // recomparison and the arc identity seen from the next cell.
        let mut t_cur: (f64, f64) = (0.0, 0.0);
        let mut t_cur_carrier: Option<(SiteId, Edge, u8, u8)> = None;
        let mut entry: Option<(SiteId, u8, u8)> = None;
        for _ in 0..cap {
            let cell = self.cell(cur);
            let n_arcs = cell.arcs.len();
            *steps += n_arcs as u64;
            let t_cur_rat = || -> Rat {
                match t_cur_carrier {
                    None => Rat::zero(),
                    Some((own, edge, co, cq)) => {
                        seg_cross_t_rat(self, own, edge, co, cq, a0, seg).expect("crossed carrier is transversal")
                    }
                }
            };
            // Best boundary crossing strictly within (t_cur, 1).
            let mut best: Option<(f64, f64, usize, SiteId)> = None;
            for (i, arc) in cell.arcs.iter().enumerate() {
                let Edge::Site(r) = arc.edge else { continue };
                if entry == Some((r, arc.cone_own, arc.cone_other)) {
                    continue;
                }
                let (line, cdir) = pred::carrier_line_f(self, cur, arc.edge, arc.cone_own, arc.cone_other);
                let Some((t, band)) = seg_cross_t_f(line, a0, seg) else { continue };
                let exact_t = || {
                    seg_cross_t_rat(self, cur, arc.edge, arc.cone_own, arc.cone_other, a0, seg)
                        .expect("filtered crossing exists exactly")
                };
                // Strictly inside the arc span, checked before any parameter
                // tie so that crossings of extended carrier lines never tie.
                let z = a0 + seg * t;
                let zerr = band * seg.norm_inf() + f64::EPSILON * (z.norm_inf() + 1.0);
                let exact_z = || {
                    let tr = exact_t();
                    RPoint { x: rat(a0.x) + rat(seg.x) * tr.clone(), y: rat(a0.y) + rat(seg.y) * tr }
                };
                let exact_dir = || pred::carrier_dir_rat(self, cur, arc.edge, arc.cone_own, arc.cone_other);
                let v0 = self.vert(arc.v);
                let v1 = self.vert(cell.arcs[(i + 1) % n_arcs].v);
                let lo = along_cmp(
                    cdir,
                    (z, zerr),
                    (v0.pos, v0.err),
                    &exact_dir,
                    &exact_z,
                    &|| pred::vert_exact(self, &v0.key, &v0.spec),
                    "walk through a diagram vertex",
                )?;
                if lo != Ordering::Greater {
                    continue;
                }
                let hi = along_cmp(
                    cdir,
                    (z, zerr),
                    (v1.pos, v1.err),
                    &exact_dir,
                    &exact_z,
                    &|| pred::vert_exact(self, &v1.key, &v1.spec),
                    "walk through a diagram vertex",
                )?;
                if hi != Ordering::Less {
                    continue;
                }
                // Strictly ahead of the last crossing; an exact repeat of the
                // parameter on a second in-span arc is a vertex pass.
                match cmp_scalar(t, band, t_cur.0, t_cur.1, &exact_t, &t_cur_rat) {
                    Ordering::Greater => {}
                    Ordering::Equal => {
                        return Err(Tie::with("walk through a diagram vertex", vec![cur as u64, r as u64]))
                    }
                    Ordering::Less => continue,
                }
                // Strictly before the query point.
                match cmp_scalar(t, band, 1.0, 0.0, &exact_t, &|| Rat::one()) {
                    Ordering::Less => {}
                    Ordering::Equal => {
                        return Err(Tie::with("query on a cell boundary", vec![cur as u64, r as u64]))
                    }
                    Ordering::Greater => continue,
                }
                best = match best {
                    None => Some((t, band, i, r)),
                    Some(b) => {
                        let exact_b = || {
                            let arc = &cell.arcs[b.2];
                            seg_cross_t_rat(self, cur, arc.edge, arc.cone_own, arc.cone_other, a0, seg)
                                .expect("kept crossing exists exactly")
                        };
                        match cmp_scalar(t, band, b.0, b.1, &exact_t, &exact_b) {
                            Ordering::Less => Some((t, band, i, r)),
                            Ordering::Greater => Some(b),
                            Ordering::Equal => {
                                return Err(Tie::with("walk through a diagram vertex", vec![cur as u64]))
                            }
                        }
                    }
                };
            }
            match best {
                None => return Ok(cur),
                Some((t, band, i, r)) => {
                    let arc = &cell.arcs[i];
                    t_cur = (t, band);
                    t_cur_carrier = Some((cur, arc.edge, arc.cone_own, arc.cone_other));
                    entry = Some((cur, arc.cone_other, arc.cone_own));
                    cur = r;
                }
            }
        }
        // Pathological float drift: fall back to the exact linear scan.
        self.locate_brute(x)
    }

    /// Owner of `x` by exact-filtered linear scan; equidistant minima tie.
    pub fn locate_brute(&self, x: Point) -> GeomResult<SiteId> {
        let cands = self.brute_candidates(x);
        if cands.len() == 1 {
            return Ok(cands[0].0);
        }
        let xr = RPoint::of(x);
        let mut best: Option<(Rat, SiteId)> = None;
        let mut tied = false;
        for &(s, _, _) in &cands {
            let dv = self.gauge.unit().gauge_rat(&xr.sub(&RPoint::of(self.site(s))));
            best = match best {
                None => Some((dv, s)),
                Some((bv, bs)) => match dv.cmp(&bv) {
                    Ordering::Less => {
                        tied = false;
                        Some((dv, s))
                    }
                    Ordering::Equal => {
                        tied = true;
                        Some((bv, bs))
                    }
                    Ordering::Greater => Some((bv, bs)),
                },
            };
        }
        let (_, s) = best.expect("diagram has present sites");
        if tied {
            return Err(Tie::with("query equidistant from nearest sites", vec![s as u64]));
        }
        Ok(s)
    }

    /// Owner of `x`, resolving exact distance ties toward the lowest id.
    pub fn locate_lowest(&self, start: SiteId, x: Point) -> SiteId {
        match self.locate_from(start, x) {
            Ok(s) => s,
            Err(_) => {
                let cands = self.brute_candidates(x);
                if cands.len() == 1 {
                    return cands[0].0;
                }
                let xr = RPoint::of(x);
                cands
                    .iter()
                    .map(|&(s, _, _)| {
                        (self.gauge.unit().gauge_rat(&xr.sub(&RPoint::of(self.site(s)))), s)
                    })
                    .min()
                    .expect("diagram has present sites")
                    .1
            }
        }
    }

    /// Present sites whose distance to `x` is within the float filter band
    /// of the minimum, with their (value, scale) pairs.
    fn brute_candidates(&self, x: Point) -> Vec<(SiteId, f64, f64)> {
        let mut all: Vec<(SiteId, f64, f64)> = self
            .present_sites()
            .map(|s| {
                let (v, sc) = self.gauge.unit().gauge_scaled(x - self.site(s));
                (s, v, sc)
            })
            .collect();
        assert!(!all.is_empty(), "locate on an empty diagram");
        let (mut mv, mut msc) = (f64::INFINITY, 0.0f64);
        for &(_, v, sc) in &all {
            if v < mv {
                mv = v;
                msc = sc;
            }
        }
        all.retain(|&(_, v, sc)| v <= mv + FILTER_BAND * (sc + msc));
        all
    }
}

/// Builds the diagram, retrying ties with deterministic growing jitter on
/// every real site. Returns the diagram, the site positions actually used,
/// and the attempt count.
pub fn prepare(
    gauge: &ConvexGauge,
    frame: &BoundingFrame,
    real: &[Point],
    order: Option<&[usize]>,
) -> Result<(Diagram, Vec<Point>, u32), BuildError> {
    let mut pts = real.to_vec();
    let mut last_tie = None;
    for attempt in 0..MAX_JITTER_ATTEMPTS {
        match Diagram::build(gauge, frame, &pts, order) {
            Ok(d) => return Ok((d, pts, attempt)),
            Err(tie) => last_tie = Some(tie),
        }
        pts = jittered(frame, real, attempt);
    }
    Err(BuildError::Unresolvable {
        attempts: MAX_JITTER_ATTEMPTS,
        last: last_tie.expect("retries happen only after a tie"),
    })
}

/// The original positions nudged by the retry policy's offset for `attempt`
/// (doubling magnitude, deterministic per-site direction).
pub(crate) fn jittered(frame: &BoundingFrame, real: &[Point], attempt: u32) -> Vec<Point> {
    let mag = frame.half * JITTER_BASE * (1u64 << attempt.min(40)) as f64;
    real.iter()
        .enumerate()
        .map(|(i, p)| {
            let (dx, dy) = jitter_unit(i as u64, attempt as u64);
            *p + pt(dx, dy) * mag
        })
        .collect()
}

/// Deterministic unit-square offset for site `i` at retry `attempt`.
fn jitter_unit(i: u64, attempt: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64((attempt << 40) ^ i);
    (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// Crossing parameter of segment `a0 + t seg` with line `n . z = c`, with an
/// error band; `None` when (nearly) parallel.
fn seg_cross_t_f(line: (Point, f64), a0: Point, seg: Point) -> Option<(f64, f64)> {
    let den = line.0.dot(seg);
    let den_mag = (line.0.x * seg.x).abs() + (line.0.y * seg.y).abs();
    if den.abs() <= FILTER_BAND * den_mag.max(f64::MIN_POSITIVE) {
        return None;
    }
    let num = line.1 - line.0.dot(a0);
    let num_mag = line.1.abs() + (line.0.x * a0.x).abs() + (line.0.y * a0.y).abs();
    let t = num / den;
    let band = FILTER_BAND * (num_mag + t.abs() * den_mag) / den.abs();
    Some((t, band))
}

fn seg_cross_t_rat(
    d: &Diagram,
    own: SiteId,
    edge: Edge,
    cone_own: u8,
    cone_other: u8,
    a0: Point,
    seg: Point,
) -> Option<Rat> {
    let (n, c) = pred::carrier_line_rat(d, own, edge, cone_own, cone_other);
    let den = n.dot(&RPoint::of(seg));
    if den.is_zero() {
        return None;
    }
    Some((c - n.dot(&RPoint::of(a0))) / den)
}

/// Filtered scalar comparison with exact fallback; never `Equal` unless the
/// exact values agree.
fn cmp_scalar(
    a: f64,
    aband: f64,
    b: f64,
    bband: f64,
    exact_a: &dyn Fn() -> Rat,
    exact_b: &dyn Fn() -> Rat,
) -> Ordering {
    let diff = a - b;
    if diff.abs() > aband + bband {
        return if diff > 0.0 { Ordering::Greater } else { Ordering::Less };
    }
    exact_a().cmp(&exact_b())
}

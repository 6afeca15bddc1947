//! Conflict tests against vertex clearances and the breadth-first conflict
//! region search over the vertex adjacency of a diagram.
//!
//! A point `q` conflicts with a diagram vertex `v` when `q` lies in the
//! closed clearance homothet of `v`, the largest scaled copy of the
//! reflected gauge centered at `v` whose interior is empty of sites.
//! Equivalently, the gauge distance from `q` to `v` is at most the distance
//! from `v`'s defining sites to `v`. Conflict sets are connected in the
//! vertex adjacency, so a search from any conflicting seed finds all of
//! them.

use super::pred;
use super::{Diagram, SiteId, VertId};
use crate::geom::exact::RPoint;
use crate::geom::{Point, FILTER_BAND};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConflictError {
    #[error("seed vertex {seed} does not conflict with the query point")]
    SeedNotConflicting { seed: VertId },
}

/// Vertex adjacency snapshot: neighbors along boundary arcs plus the cells
/// incident to each vertex. Indexed by `VertId`; slots of dead ids are empty.
#[derive(Debug, Clone, Default)]
pub struct VertexGraph {
    pub adj: Vec<Vec<VertId>>,
    pub cells: Vec<Vec<SiteId>>,
}

impl VertexGraph {
    /// Lowest incident cell, usable as the clearance reference site.
    pub fn owner(&self, v: VertId) -> SiteId {
        self.cells[v as usize][0]
    }
}

/// Reusable visit marks for repeated conflict searches on one diagram.
#[derive(Debug, Clone, Default)]
pub struct ConflictScratch {
    seen: Vec<u32>,
    epoch: u32,
}

impl ConflictScratch {
    pub fn new() -> ConflictScratch {
        ConflictScratch::default()
    }

    fn begin(&mut self, n: usize) {
        if self.seen.len() < n {
            self.seen.resize(n, 0);
        }
        self.epoch += 1;
        if self.epoch == u32::MAX {
            self.seen.fill(0);
            self.epoch = 1;
        }
    }

    fn mark(&mut self, v: VertId) -> bool {
        let slot = &mut self.seen[v as usize];
        if *slot == self.epoch {
            return false;
        }
        *slot = self.epoch;
        true
    }
}

impl Diagram {
    /// Adjacency between consecutive boundary vertices of every present
    /// cell, deduplicated, with sorted incident-cell lists.
    pub fn vertex_graph(&self) -> VertexGraph {
        let n = self.verts.len();
        let mut g = VertexGraph { adj: vec![Vec::new(); n], cells: vec![Vec::new(); n] };
        for s in self.present_sites() {
            let cell = self.cell(s);
            let m = cell.arcs.len();
            for i in 0..m {
                let a = cell.arcs[i].v;
                let b = cell.arcs[(i + 1) % m].v;
                g.adj[a as usize].push(b);
                g.adj[b as usize].push(a);
                g.cells[a as usize].push(s);
            }
        }
        for l in &mut g.adj {
            l.sort_unstable();
            l.dedup();
        }
        for l in &mut g.cells {
            l.sort_unstable();
            l.dedup();
        }
        g
    }

    /// Closed conflict test: `q` inside or on the clearance homothet of
    /// vertex `v`. `owner` is any cell incident to `v`. Total and
    /// deterministic: the filtered comparison falls back to the exact
    /// rational position, and exact equality counts as a conflict.
    pub fn vertex_conflict(&self, q: Point, v: VertId, owner: SiteId) -> bool {
        let rec = self.vert(v);
        let g = self.gauge.unit();
        let (dq, sq) = g.gauge_scaled(rec.pos - q);
        let (dr, sr) = g.gauge_scaled(rec.pos - self.site(owner));
        let band = FILTER_BAND * (sq + sr).max(f64::MIN_POSITIVE) + 2.0 * g.lip() * rec.err;
        let diff = dq - dr;
        if diff.abs() > band {
            return diff < 0.0;
        }
        let xr = pred::vert_exact(self, &rec.key, &rec.spec);
        let a = g.gauge_rat(&xr.sub(&RPoint::of(q)));
        let b = g.gauge_rat(&xr.sub(&RPoint::of(self.site(owner))));
        a <= b
    }

    /// All vertices conflicting with `q`, by search from a conflicting seed.
    /// Output sorted by id.
    pub fn conflict_region(
        &self,
        g: &VertexGraph,
        q: Point,
        seed: VertId,
    ) -> Result<Vec<VertId>, ConflictError> {
        self.conflict_region_with(&mut ConflictScratch::new(), g, q, seed)
    }

    /// `conflict_region` against caller-owned scratch, for query batches.
    pub fn conflict_region_with(
        &self,
        sc: &mut ConflictScratch,
        g: &VertexGraph,
        q: Point,
        seed: VertId,
    ) -> Result<Vec<VertId>, ConflictError> {
        if !self.vertex_conflict(q, seed, g.owner(seed)) {
            return Err(ConflictError::SeedNotConflicting { seed });
        }
        sc.begin(self.verts.len());
        sc.mark(seed);
        let mut out = vec![seed];
        let mut queue = VecDeque::from([seed]);
        while let Some(v) = queue.pop_front() {
            for &w in &g.adj[v as usize] {
                if sc.mark(w) && self.vertex_conflict(q, w, g.owner(w)) {
                    out.push(w);
                    queue.push_back(w);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Linear-scan oracle for `conflict_region`: filter every live vertex.
    pub fn conflict_set_brute(&self, g: &VertexGraph, q: Point) -> Vec<VertId> {
        self.live_verts()
            .filter(|&(v, _)| self.vertex_conflict(q, v, g.owner(v)))
            .map(|(v, _)| v)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::ConvexGauge;
    use crate::geom::pt;
    use crate::vor::build::prepare;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_diagram(seed: u64, n: usize) -> Diagram {
        let gauge =
            ConvexGauge::new(&[[2.0, 0.0], [1.0, 2.0], [-1.5, 1.0], [-2.0, -1.0], [0.5, -2.0]])
                .unwrap();
        let frame = gauge.dummy_frame(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<_> =
            (0..n).map(|_| pt(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        prepare(&gauge, &frame, &pts, None).unwrap().0
    }

    #[test]
    fn region_matches_linear_scan() {
        for seed in 0..12u64 {
            let d = random_diagram(seed, 24);
            let g = d.vertex_graph();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            for _ in 0..40 {
                let q = pt(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2));
                let brute = d.conflict_set_brute(&g, q);
                if brute.is_empty() {
                    continue;
                }
                let got = d.conflict_region(&g, q, brute[0]).unwrap();
                assert_eq!(got, brute, "seed {seed} query {q:?}");
            }
        }
    }

    #[test]
    fn seed_must_conflict() {
        let d = random_diagram(3, 16);
        let g = d.vertex_graph();
        // A far corner vertex of the world box conflicts with nothing near
        // the middle of the frame.
        let far = d
            .live_verts()
            .max_by(|a, b| a.1.pos.norm_inf().total_cmp(&b.1.pos.norm_inf()))
            .unwrap()
            .0;
        let err = d.conflict_region(&g, pt(0.01, 0.02), far);
        assert_eq!(err, Err(ConflictError::SeedNotConflicting { seed: far }));
    }

    #[test]
    fn query_on_vertex_conflicts_with_it() {
        let d = random_diagram(7, 20);
        let g = d.vertex_graph();
        for (v, rec) in d.live_verts().take(30) {
            assert!(
                d.vertex_conflict(rec.pos, v, g.owner(v)),
                "vertex {v} does not conflict with its own position"
            );
        }
    }

    #[test]
    fn conflict_sets_are_connected() {
        let d = random_diagram(11, 28);
        let g = d.vertex_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..30 {
            let q = pt(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let set = d.conflict_set_brute(&g, q);
            if set.len() < 2 {
                continue;
            }
            // BFS inside the set from its first member must reach everything.
            let inside: std::collections::HashSet<_> = set.iter().copied().collect();
            let mut seen = std::collections::HashSet::from([set[0]]);
            let mut queue = VecDeque::from([set[0]]);
            while let Some(v) = queue.pop_front() {
                for &w in &g.adj[v as usize] {
                    if inside.contains(&w) && seen.insert(w) {
                        queue.push_back(w);
                    }
                }
            }
            assert_eq!(seen.len(), set.len(), "disconnected conflict set at {q:?}");
        }
    }
}

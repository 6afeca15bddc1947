//! Batch operations on diagrams: local merge of new points guided by a
//! conflict index, labeled splitting by pair deletion, and the quadratic
//! reference construction with the jitter-retry wrapper.

use super::build::{BisCache, BuildError, MAX_JITTER_ATTEMPTS};
use super::conflict::VertexGraph;
use super::{Diagram, SiteId, VertId, VertKey};
use crate::gauge::frame::BoundingFrame;
use crate::gauge::ConvexGauge;
use crate::geom::{GeomResult, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("conflict index entry {point} is inconsistent with the diagram: {reason}")]
    InconsistentConflictIndex { point: usize, reason: &'static str },
    #[error("geometric degeneracy while merging: {0}")]
    Geometry(#[from] crate::geom::Tie),
}

/// What a merge changed, in terms of the base diagram.
#[derive(Debug, Clone, Default)]
pub struct MergeReport {
    /// Keys of base vertices no longer present, sorted.
    pub destroyed: Vec<VertKey>,
    /// Base sites whose boundary cycle changed, sorted.
    pub touched_cells: Vec<SiteId>,
    pub inserted: usize,
}

impl Diagram {
    /// Appends a site to the universe without inserting it.
    pub fn push_site(&mut self, p: Point) -> SiteId {
        self.sites.push(p);
        self.cells.push(None);
        (self.sites.len() - 1) as SiteId
    }
}

/// Inserts the indexed points into a copy of `base`. Each index entry is a
/// point plus a nonempty list of `base` vertices it conflicts with; the first
/// one seeds the locate walk through its owning cell. Within a batch,
/// insertion destroys vertices and never recreates a destroyed key, so the
/// report's destroyed set is exactly the base vertices in conflict.
pub fn merge_local(
    base: &Diagram,
    graph: &VertexGraph,
    index: &[(Point, Vec<VertId>)],
) -> Result<(Diagram, MergeReport), MergeError> {
    for (i, (p, list)) in index.iter().enumerate() {
        let Some(&seed) = list.first() else {
            return Err(MergeError::InconsistentConflictIndex { point: i, reason: "empty conflict list" });
        };
        if base.verts.get(seed as usize).map_or(true, |v| v.is_none()) {
            return Err(MergeError::InconsistentConflictIndex { point: i, reason: "dead seed vertex" });
        }
        if !base.vertex_conflict(*p, seed, graph.owner(seed)) {
            return Err(MergeError::InconsistentConflictIndex { point: i, reason: "seed does not conflict" });
        }
    }

    let before: HashSet<VertKey> = base.live_verts().map(|(_, r)| r.key).collect();
    let base_cells: Vec<SiteId> = base.present_sites().collect();

    let mut d = base.clone();
    let mut cache = BisCache::new();
    for (p, list) in index {
        let id = d.push_site(*p);
        let hint = graph.owner(list[0]);
        d.insert_with(&mut cache, id, Some(hint))?;
    }

    let mut destroyed: Vec<VertKey> =
        before.iter().filter(|k| d.vert_by_key(k).is_none()).copied().collect();
    destroyed.sort_unstable();
    let touched_cells: Vec<SiteId> = base_cells
        .into_iter()
        .filter(|&s| {
            let old = base.cell(s);
            let new = d.cell(s);
            old.arcs.len() != new.arcs.len()
                || crate::vor::rotate_min(
                    old.arcs.iter().map(|a| (base.vert(a.v).key, a.edge)).collect(),
                ) != crate::vor::rotate_min(
                    new.arcs.iter().map(|a| (d.vert(a.v).key, a.edge)).collect(),
                )
        })
        .collect();
    let report = MergeReport { destroyed, touched_cells, inserted: index.len() };
    Ok((d, report))
}

/// Fresh incremental build of `members` (given in any order, inserted in id
/// order) over the same site universe as `d`. Positions are reused verbatim.
pub fn rebuild_subset(d: &Diagram, members: &[SiteId]) -> GeomResult<Diagram> {
    let mut out = Diagram::empty(d.gauge.clone(), d.frame.clone(), &d.sites[d.dummy_count..]);
    let mut cache = BisCache::new();
    let mut last = None;
    for id in 0..d.dummy_count as SiteId {
        out.insert_with(&mut cache, id, last)?;
        last = Some(id);
    }
    let mut ids: Vec<SiteId> = members.to_vec();
    ids.sort_unstable();
    ids.dedup();
    for id in ids {
        assert!(!d.is_dummy(id), "members must be real sites");
        out.insert_with(&mut cache, id, last)?;
        last = Some(id);
    }
    Ok(out)
}

/// Splits a diagram into the two labeled halves by repeated deletion of one
/// point of a random cross-label pair, the one closer to its own-label
/// nearest neighbor, then reinsertion into the halves while unwinding. The
/// nearest-neighbor hint recorded at deletion seeds each reinsertion's locate
/// walk. Any geometric tie aborts into fresh builds of both halves.
///
/// `labels[i]` labels real site `dummy_count + i`: `true` puts it in the
/// first (input) output, `false` in the second. Absent sites are ignored.
pub fn split_labeled(
    d: &Diagram,
    labels: &[bool],
    seed: u64,
) -> GeomResult<(Diagram, Diagram)> {
    assert_eq!(labels.len(), d.sites.len() - d.dummy_count, "one label per real site");
    let is_input = |s: SiteId| labels[s as usize - d.dummy_count];

    match split_by_deletion(d, labels, seed) {
        Ok(pair) => Ok(pair),
        Err(_) => {
            let a: Vec<SiteId> = d.present_real_sites().filter(|&s| is_input(s)).collect();
            let b: Vec<SiteId> = d.present_real_sites().filter(|&s| !is_input(s)).collect();
            Ok((rebuild_subset(d, &a)?, rebuild_subset(d, &b)?))
        }
    }
}

fn split_by_deletion(d: &Diagram, labels: &[bool], seed: u64) -> GeomResult<(Diagram, Diagram)> {
    let is_input = |s: SiteId| labels[s as usize - d.dummy_count];
    let mut work = d.clone();
    let mut cache = BisCache::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Deleted point, its label, and the own-label neighbor to reinsert from.
    let mut stack: Vec<(SiteId, bool, Option<SiteId>)> = Vec::new();

    let mut a_left: Vec<SiteId> = work.present_real_sites().filter(|&s| is_input(s)).collect();
    let mut b_left: Vec<SiteId> = work.present_real_sites().filter(|&s| !is_input(s)).collect();

    while !a_left.is_empty() && !b_left.is_empty() {
        let pa = a_left[rng.random_range(0..a_left.len())];
        let pb = b_left[rng.random_range(0..b_left.len())];
        let na = class_nn(&work, pa, &is_input, true);
        let nb = class_nn(&work, pb, &is_input, false);
        // Delete the point nearer to its own class; a singleton class (no
        // neighbor) keeps its point as long as possible.
        let take_a = match (&na, &nb) {
            (Some((da, sa)), Some((db, sb))) => (*da, *sa, pa) <= (*db, *sb, pb),
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => true,
        };
        let (p, hint, side) = if take_a {
            (pa, na.map(|(_, s)| s), true)
        } else {
            (pb, nb.map(|(_, s)| s), false)
        };
        work.delete_with(&mut cache, p)?;
        stack.push((p, side, hint));
        if side {
            a_left.retain(|&s| s != p);
        } else {
            b_left.retain(|&s| s != p);
        }
    }

    let (mut side_a, mut side_b) = if a_left.is_empty() && b_left.is_empty() {
        (work.clone(), work)
    } else if a_left.is_empty() {
        (rebuild_subset(d, &[])?, work)
    } else {
        (work, rebuild_subset(d, &[])?)
    };

    while let Some((p, side, hint)) = stack.pop() {
        let tgt = if side { &mut side_a } else { &mut side_b };
        let hint = hint.filter(|&s| tgt.is_present(s));
        tgt.insert_with(&mut cache, p, hint)?;
    }
    Ok((side_a, side_b))
}

/// Nearest present real site of the given label to `p` (excluded), under the
/// symmetric metric, by best-first expansion over cell adjacency from `p`'s
/// neighbors. Ties break toward the lower site id.
fn class_nn(
    d: &Diagram,
    p: SiteId,
    is_input: &dyn Fn(SiteId) -> bool,
    want_input: bool,
) -> Option<(TotalF64, SiteId)> {
    let x = d.site(p);
    let mut heap: BinaryHeap<Reverse<(TotalF64, SiteId)>> = BinaryHeap::new();
    let mut seen: HashSet<SiteId> = HashSet::from([p]);
    for s in d.neighbors(p) {
        if seen.insert(s) {
            heap.push(Reverse((TotalF64(d.gauge.metric(x, d.site(s))), s)));
        }
    }
    while let Some(Reverse((dist, s))) = heap.pop() {
        if !d.is_dummy(s) && is_input(s) == want_input {
            return Some((dist, s));
        }
        for t in d.neighbors(s) {
            if seen.insert(t) {
                heap.push(Reverse((TotalF64(d.gauge.metric(x, d.site(t))), t)));
            }
        }
    }
    None
}

/// f64 ordered by `total_cmp` so it can key heaps and comparisons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalF64(pub f64);

impl Eq for TotalF64 {}

impl PartialOrd for TotalF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TotalF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Quadratic reference construction with the same deterministic jitter-retry
/// policy as `prepare`: every cell is clipped against every other site, with
/// no incremental machinery shared beyond the bisector primitives. Returns
/// the diagram, the positions actually used, and the retry count (zero means
/// the input was used verbatim).
pub fn brute_force_voronoi(
    gauge: &ConvexGauge,
    frame: &BoundingFrame,
    real: &[Point],
) -> Result<(Diagram, Vec<Point>, u32), BuildError> {
    let mut pts = real.to_vec();
    let mut last_tie = None;
    for attempt in 0..MAX_JITTER_ATTEMPTS {
        match Diagram::build_scratch(gauge, frame, &pts) {
            Ok(d) => return Ok((d, pts, attempt)),
            Err(tie) => last_tie = Some(tie),
        }
        pts = super::build::jittered(frame, real, attempt);
    }
    Err(BuildError::Unresolvable {
        attempts: MAX_JITTER_ATTEMPTS,
        last: last_tie.expect("retries happen only after a tie"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::pt;
    use crate::vor::build::prepare;
    use rand::Rng;

    fn gauge() -> ConvexGauge {
        ConvexGauge::new(&[[2.0, 0.0], [1.0, 2.0], [-1.5, 1.0], [-2.0, -1.0], [0.5, -2.0]]).unwrap()
    }

    fn random_pts(seed: u64, n: usize) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| pt(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn merge_equals_fresh_build() {
        let g = gauge();
        let frame = g.dummy_frame(1.0).unwrap();
        for seed in 0..8u64 {
            let base_pts = random_pts(seed, 14);
            let new_pts = random_pts(seed ^ 0x5a5a, 6);
            let (base, base_used, _) = prepare(&g, &frame, &base_pts, None).unwrap();
            let graph = base.vertex_graph();
            let index: Vec<(Point, Vec<VertId>)> = new_pts
                .iter()
                .map(|&p| {
                    let set = base.conflict_set_brute(&graph, p);
                    assert!(!set.is_empty(), "every in-frame point conflicts somewhere");
                    (p, set)
                })
                .collect();
            let (merged, report) = merge_local(&base, &graph, &index).unwrap();
            assert_eq!(report.inserted, 6);

            let mut all = base_used.clone();
            all.extend_from_slice(&new_pts);
            let fresh = Diagram::build(&g, &frame, &all, None).unwrap();
            assert!(
                merged.combinatorial_equal(&fresh),
                "seed {seed}: {:?}",
                merged.diff(&fresh)
            );

            // Destroyed = exactly the base vertices in some conflict set.
            let mut expect: Vec<VertKey> = index
                .iter()
                .flat_map(|(_, l)| l.iter().map(|&v| base.vert(v).key))
                .collect();
            expect.sort_unstable();
            expect.dedup();
            assert_eq!(report.destroyed, expect, "seed {seed}");
        }
    }

    #[test]
    fn merge_rejects_bad_index() {
        let g = gauge();
        let frame = g.dummy_frame(1.0).unwrap();
        let (base, _, _) = prepare(&g, &frame, &random_pts(1, 10), None).unwrap();
        let graph = base.vertex_graph();
        let err = merge_local(&base, &graph, &[(pt(0.1, 0.1), vec![])]).unwrap_err();
        assert!(matches!(err, MergeError::InconsistentConflictIndex { point: 0, .. }));
        // A vertex on the far world box does not conflict with a point in ℬ.
        let far = base
            .live_verts()
            .max_by(|a, b| a.1.pos.norm_inf().total_cmp(&b.1.pos.norm_inf()))
            .unwrap()
            .0;
        let err = merge_local(&base, &graph, &[(pt(0.02, 0.03), vec![far])]).unwrap_err();
        assert!(matches!(err, MergeError::InconsistentConflictIndex { point: 0, .. }));
    }

    #[test]
    fn split_equals_fresh_builds() {
        let g = gauge();
        let frame = g.dummy_frame(1.0).unwrap();
        for seed in 0..8u64 {
            let pts = random_pts(seed.wrapping_mul(77).wrapping_add(5), 20);
            let (d, _, _) = prepare(&g, &frame, &pts, None).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
            let labels: Vec<bool> = (0..pts.len()).map(|_| rng.random_range(0..2) == 0).collect();
            let (ia, ib) = split_labeled(&d, &labels, seed).unwrap();

            let a: Vec<SiteId> = d.present_real_sites().filter(|&s| labels[s as usize - d.dummy_count]).collect();
            let b: Vec<SiteId> = d.present_real_sites().filter(|&s| !labels[s as usize - d.dummy_count]).collect();
            let fa = rebuild_subset(&d, &a).unwrap();
            let fb = rebuild_subset(&d, &b).unwrap();
            assert!(ia.combinatorial_equal(&fa), "seed {seed} input side: {:?}", ia.diff(&fa));
            assert!(ib.combinatorial_equal(&fb), "seed {seed} rest side: {:?}", ib.diff(&fb));
        }
    }

    #[test]
    fn split_all_one_side() {
        let g = gauge();
        let frame = g.dummy_frame(1.0).unwrap();
        let pts = random_pts(9, 12);
        let (d, _, _) = prepare(&g, &frame, &pts, None).unwrap();
        let labels = vec![true; pts.len()];
        let (ia, ib) = split_labeled(&d, &labels, 0).unwrap();
        assert!(ia.combinatorial_equal(&d), "{:?}", ia.diff(&d));
        assert_eq!(ib.present_real_sites().count(), 0);
        assert_eq!(ib.present_sites().count(), ib.dummy_count);
    }

    #[test]
    fn brute_force_matches_incremental() {
        let g = gauge();
        let frame = g.dummy_frame(1.0).unwrap();
        for seed in 20..26u64 {
            let pts = random_pts(seed, 24);
            let (fast, used, _) = prepare(&g, &frame, &pts, None).unwrap();
            let (slow, used2, attempts) = brute_force_voronoi(&g, &frame, &used).unwrap();
            assert_eq!(attempts, 0, "prepared positions need no further jitter");
            assert_eq!(used, used2);
            assert!(fast.combinatorial_equal(&slow), "seed {seed}: {:?}", fast.diff(&slow));
        }
    }
}

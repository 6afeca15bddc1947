//! Well-separated pair decomposition over compressed net-trees, the cone
//! frame used for candidate pruning, exact k-nearest-neighbor extraction,
//! and a cross-check of the 1-NN graph against a Voronoi diagram.

use thiserror::Error;

use super::compress::CompressedTree;
use super::powt_opt;
use crate::gauge::ConvexGauge;
use crate::geom::{pt, Point};
use crate::vor::{Diagram, SiteId};

/// Emission predicate for a candidate pair whose higher node sits at
/// `level`: the shared diameter bound must clear the separation demanded
/// for quality `c` at representative distance `dist`. Leaves (`None`)
/// always pass for positive distances.
pub fn well_separated(tau: i64, level: Option<i64>, dist: f64, c: f64) -> bool {
    let tf = tau as f64;
    (4.0 * tf / (tf - 1.0)) * powt_opt(tau, level) < dist / (c + 2.0)
}

/// Splits the node with the higher level (ties by smaller key) until the
/// pair is well-separated. Every unordered pair of distinct leaf points is
/// covered by exactly one emitted node pair.
pub fn wspd_build(g: &ConvexGauge, tx: &CompressedTree, c: f64) -> Vec<(u32, u32)> {
    debug_assert!(c >= 1.0);
    let mut out = Vec::new();
    let mut stack: Vec<(u32, u32)> = vec![(tx.root, tx.root)];
    while let Some((a, b)) = stack.pop() {
        if a == b {
            let ch = &tx.nodes[a as usize].children;
            for i in 0..ch.len() {
                stack.push((ch[i], ch[i]));
                for j in i + 1..ch.len() {
                    stack.push((ch[i], ch[j]));
                }
            }
            continue;
        }
        let (u, v) = ordered(tx, a, b);
        let nu = &tx.nodes[u as usize];
        let nv = &tx.nodes[v as usize];
        let dist = g.metric(tx.points[nu.rep as usize], tx.points[nv.rep as usize]);
        if well_separated(tx.tau, nu.level, dist, c) {
            out.push((u, v));
        } else {
            // reps of disjoint subtrees are distinct, so leaf pairs always
            // emit and the recursion bottoms out
            debug_assert!(!nu.children.is_empty());
            for &ch in &nu.children {
                stack.push((ch, v));
            }
        }
    }
    out
}

fn ordered(tx: &CompressedTree, a: u32, b: u32) -> (u32, u32) {
    let na = &tx.nodes[a as usize];
    let nb = &tx.nodes[b as usize];
    match na.level.cmp(&nb.level) {
        std::cmp::Ordering::Greater => (a, b),
        std::cmp::Ordering::Less => (b, a),
        std::cmp::Ordering::Equal => {
            if na.key <= nb.key {
                (a, b)
            } else {
                (b, a)
            }
        }
    }
}

const SPACING_LO: f64 = 0.125;
const SPACING_HI: f64 = 0.25;
const SPACING_TARGET: f64 = 0.1875;

/// Directions on the symmetric unit-ball boundary, clockwise, with
/// consecutive metric spacing in [1/8, 1/4].
#[derive(Debug, Clone)]
pub struct ConeFrame {
    pub axes: Vec<Point>,
}

impl ConeFrame {
    /// Greedy clockwise walk from an arbitrary boundary vertex placing
    /// marks at chord 3/16; the closing gap is merged into its
    /// predecessor when too small and the merged span is rebalanced when
    /// too wide.
    pub fn new(g: &ConvexGauge) -> ConeFrame {
        let verts = g.symmetric().verts();
        let n = verts.len();
        let mut walk: Vec<Point> = Vec::with_capacity(n + 1);
        walk.push(verts[0]);
        for i in (1..n).rev() {
            walk.push(verts[i]);
        }
        walk.push(verts[0]);

        let mut axes = vec![walk[0]];
        // (segment, param) of the last placed mark
        let mut marks: Vec<(usize, f64)> = vec![(0, 0.0)];
        let mut seg = 0usize;
        let mut t = 0.0f64;
        'walk: loop {
            let last = *axes.last().expect("at least the start mark");
            loop {
                if seg + 1 >= walk.len() {
                    break 'walk;
                }
                let a = walk[seg];
                let b = walk[seg + 1];
                if g.metric(last, b) >= SPACING_TARGET {
                    // chord from `last` is convex along the segment and
                    // below target at the entry param, so the upcrossing
                    // is unique
                    let (mut lo, mut hi) = (t, 1.0);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if g.metric(last, a + (b - a) * mid) < SPACING_TARGET {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    t = hi;
                    axes.push(a + (b - a) * hi);
                    marks.push((seg, hi));
                    continue 'walk;
                }
                seg += 1;
                t = 0.0;
            }
        }

        let gap = g.metric(*axes.last().expect("nonempty"), axes[0]);
        if axes.len() >= 3 && gap < SPACING_LO {
            axes.pop();
            marks.pop();
            let last = *axes.last().expect("nonempty");
            let merged = g.metric(last, axes[0]);
            if merged > SPACING_HI {
                let &(ms, mt) = marks.last().expect("nonempty");
                axes.push(rebalance(g, &walk, ms, mt, last, axes[0]));
            }
        }
        ConeFrame { axes }
    }

    /// Cone index of `dir`: scale to the boundary, then pick the nearest
    /// axis under the metric (ties to the lowest index). The zero vector
    /// maps to cone 0.
    pub fn cone_of(&self, g: &ConvexGauge, dir: Point) -> usize {
        let s = g.metric(pt(0.0, 0.0), dir);
        if s <= 0.0 {
            return 0;
        }
        let u = dir * (1.0 / s);
        let mut best = f64::INFINITY;
        let mut arg = 0usize;
        for (i, &ax) in self.axes.iter().enumerate() {
            let d = g.metric(ax, u);
            if d < best {
                best = d;
                arg = i;
            }
        }
        arg
    }
}

/// Boundary point on the arc from `(ms, mt)` to the end of `walk` whose
/// chords to `from` and `to` balance.
fn rebalance(g: &ConvexGauge, walk: &[Point], ms: usize, mt: f64, from: Point, to: Point) -> Point {
    let mut arc: Vec<Point> = Vec::new();
    let a = walk[ms];
    let b = walk[ms + 1];
    arc.push(a + (b - a) * mt);
    arc.extend_from_slice(&walk[ms + 1..]);
    let mut cum = vec![0.0f64];
    for w in arc.windows(2) {
        let step = (w[1] - w[0]).norm_inf();
        cum.push(cum.last().expect("nonempty") + step);
    }
    let total = *cum.last().expect("nonempty");
    let at = |s: f64| -> Point {
        let target = s * total;
        let i = cum.partition_point(|&x| x < target).clamp(1, cum.len() - 1);
        let span = cum[i] - cum[i - 1];
        let frac = if span > 0.0 { (target - cum[i - 1]) / span } else { 0.0 };
        arc[i - 1] + (arc[i] - arc[i - 1]) * frac
    };
    let bal = |p: Point| g.metric(from, p) - g.metric(p, to);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    debug_assert!(bal(at(lo)) <= 0.0 && bal(at(hi)) >= 0.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if bal(at(mid)) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Keeps, per cone around `q0`, the `k` candidates nearest to `q0` (ties by
/// point id). Input ids may repeat; the output is deduplicated and
/// id-sorted.
pub fn cone_prune(
    g: &ConvexGauge,
    frame: &ConeFrame,
    q0: Point,
    pts: &[Point],
    cands: &[u32],
    k: usize,
) -> Vec<u32> {
    let mut ids: Vec<u32> = cands.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut buckets: Vec<Vec<(f64, u32)>> = vec![Vec::new(); frame.axes.len()];
    for &p in &ids {
        let x = pts[p as usize];
        let cone = frame.cone_of(g, x - q0);
        buckets[cone].push((g.metric(q0, x), p));
    }
    let mut keep: Vec<u32> = Vec::new();
    for mut b in buckets {
        b.sort_by(|x, y| x.partial_cmp(y).expect("finite distances"));
        keep.extend(b.into_iter().take(k).map(|(_, p)| p));
    }
    keep.sort_unstable();
    keep
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KnnError {
    #[error("k = {k} requested but only {n} points are present")]
    KTooLarge { k: usize, n: usize },
}

/// Exact k-nearest-neighbor lists under the symmetric metric over the leaf
/// points of a compressed tree.
#[derive(Debug, Clone)]
pub struct KnnGraph {
    /// Leaf point ids, ascending.
    pub points: Vec<u32>,
    /// Positions, parallel to `points`.
    pub pos: Vec<Point>,
    /// The k nearest of each point ordered by (distance, id), parallel to
    /// `points`.
    pub neighbors: Vec<Vec<u32>>,
}

/// Candidate sets flow down the tree in preorder: a node inherits its
/// parent's pruned set, absorbs the far side of every decomposition pair
/// whose far side holds at most k points, and is cone-pruned around its
/// first leaf point. A point's k nearest are then read off the leaves
/// whose candidate sets retained it.
pub fn knn_graph(g: &ConvexGauge, tx: &CompressedTree, k: usize) -> Result<KnnGraph, KnnError> {
    let selected: Vec<(u32, u32)> = tx
        .leaf_comp
        .iter()
        .enumerate()
        .filter_map(|(p, c)| c.map(|cn| (p as u32, cn)))
        .collect();
    let n = selected.len();
    if k >= n {
        return Err(KnnError::KTooLarge { k, n });
    }
    let pairs = wspd_build(g, tx, 4.0);
    let counts = tx.leaf_counts();
    let mut feeds: Vec<Vec<u32>> = vec![Vec::new(); tx.nodes.len()];
    for &(u, v) in &pairs {
        if counts[v as usize] as usize <= k {
            feeds[u as usize].push(v);
        }
        if counts[u as usize] as usize <= k {
            feeds[v as usize].push(u);
        }
    }
    let frame = ConeFrame::new(g);
    let mut cand: Vec<Vec<u32>> = vec![Vec::new(); tx.nodes.len()];
    let mut stack = vec![tx.root];
    while let Some(u) = stack.pop() {
        let mut cu: Vec<u32> = match tx.nodes[u as usize].parent {
            Some(p) => cand[p as usize].clone(),
            None => Vec::new(),
        };
        for &w in &feeds[u as usize] {
            cu.extend(tx.leaf_points(w));
        }
        let q0 = tx.points[tx.first_leaf_point(u) as usize];
        cand[u as usize] = cone_prune(g, &frame, q0, &tx.points, &cu, k);
        for &ch in &tx.nodes[u as usize].children {
            stack.push(ch);
        }
    }
    let mut lsets: Vec<Vec<u32>> = vec![Vec::new(); tx.points.len()];
    for &(pid, cn) in &selected {
        for &p in &cand[cn as usize] {
            lsets[p as usize].push(pid);
        }
    }
    let mut points = Vec::with_capacity(n);
    let mut pos = Vec::with_capacity(n);
    let mut neighbors = Vec::with_capacity(n);
    for &(pid, _) in &selected {
        let x = tx.points[pid as usize];
        let mut ds: Vec<(f64, u32)> = lsets[pid as usize]
            .iter()
            .map(|&v| (g.metric(x, tx.points[v as usize]), v))
            .collect();
        ds.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        debug_assert!(ds.len() >= k, "candidate inversion lost a neighbor of {pid}");
        neighbors.push(ds.into_iter().take(k).map(|(_, v)| v).collect());
        points.push(pid);
        pos.push(x);
    }
    Ok(KnnGraph { points, pos, neighbors })
}

/// Audit of an undirected 1-NN graph against a diagram over the same
/// points.
#[derive(Debug, Clone)]
pub struct NnReport {
    pub edges: usize,
    pub max_degree: usize,
    /// 1-NN edges (as point-id pairs) whose cells are not adjacent.
    pub violations: Vec<(u32, u32)>,
}

/// Checks that every 1-NN edge joins Voronoi neighbors and reports the
/// maximum degree. Real site `i` of `d_r` must be `graph.points[i]`.
pub fn nn_graph_checks(graph: &KnnGraph, d_r: &Diagram) -> NnReport {
    let n = graph.points.len();
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let nb = graph.neighbors[i].first().copied().expect("1-NN graph has a neighbor");
        let j = graph
            .points
            .binary_search(&nb)
            .expect("neighbor is a graph point");
        edges.push((i.min(j), i.max(j)));
    }
    edges.sort_unstable();
    edges.dedup();
    let mut deg = vec![0usize; n];
    let mut violations = Vec::new();
    for &(i, j) in &edges {
        deg[i] += 1;
        deg[j] += 1;
        let si = (d_r.dummy_count + i) as SiteId;
        let sj = (d_r.dummy_count + j) as SiteId;
        debug_assert!(
            (d_r.site(si) - graph.pos[i]).norm_inf() <= 1e-6,
            "diagram sites are not aligned with the graph points"
        );
        if !d_r.neighbors(si).contains(&sj) {
            violations.push((graph.points[i], graph.points[j]));
        }
    }
    NnReport {
        edges: edges.len(),
        max_degree: deg.iter().copied().max().unwrap_or(0),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use super::super::cluster::partition_clusters;
    use super::super::compress::{compress_to_subset, CompressedTree};
    use super::super::build_net_tree;
    use super::*;
    use crate::gauge::test_gauges;
    use crate::vor::build::prepare;

    fn random_points(seed: u64, n: usize, half: f64) -> Vec<Point> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| pt(rng.random_range(-half..half), rng.random_range(-half..half)))
            .collect()
    }

    fn full_tx(g: &ConvexGauge, pts: &[Point]) -> CompressedTree {
        let t = build_net_tree(g, pts, 11).expect("net tree builds");
        CompressedTree::from_full(&t)
    }

    fn brute_knn(g: &ConvexGauge, ids: &[u32], pts: &[Point], k: usize) -> Vec<Vec<u32>> {
        ids.iter()
            .map(|&i| {
                let mut ds: Vec<(f64, u32)> = ids
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (g.metric(pts[i as usize], pts[j as usize]), j))
                    .collect();
                ds.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                ds.into_iter().take(k).map(|(_, j)| j).collect()
            })
            .collect()
    }

    #[test]
    fn separation_predicate_matches_hand_arithmetic() {
        // tau = 11, level 0, c = 4: threshold is 6 * 44/10 = 26.4
        assert!(well_separated(11, Some(0), 30.0, 4.0));
        assert!(!well_separated(11, Some(0), 20.0, 4.0));
        assert!(!well_separated(11, Some(0), 26.4, 4.0));
        assert!(well_separated(11, Some(0), 26.5, 4.0));
        // leaves always emit at positive distance
        assert!(well_separated(11, None, 1e-12, 4.0));
        assert!(!well_separated(11, None, 0.0, 4.0));
    }

    #[test]
    fn two_points_make_one_pair() {
        let g = &test_gauges()[0];
        let tx = full_tx(g, &[pt(0.0, 0.0), pt(5.0, 0.0)]);
        let pairs = wspd_build(g, &tx, 4.0);
        assert_eq!(pairs.len(), 1);
        let (u, v) = pairs[0];
        let mut ends = [tx.leaf_points(u), tx.leaf_points(v)].concat();
        ends.sort_unstable();
        assert_eq!(ends, vec![0, 1]);

        let graph = knn_graph(g, &tx, 1).expect("k below n");
        assert_eq!(graph.points, vec![0, 1]);
        assert_eq!(graph.neighbors, vec![vec![1], vec![0]]);
    }

    fn check_wspd(g: &ConvexGauge, tx: &CompressedTree, c: f64) {
        let n = tx.points.len();
        let pairs = wspd_build(g, tx, c);
        let mut covered = vec![false; n * n];
        let mut diam = vec![None::<f64>; tx.nodes.len()];
        let mut diam_of = |u: u32| -> f64 {
            if let Some(d) = diam[u as usize] {
                return d;
            }
            let ps = tx.leaf_points(u);
            let mut best = 0.0f64;
            for i in 0..ps.len() {
                for j in i + 1..ps.len() {
                    best = best.max(g.metric(
                        tx.points[ps[i] as usize],
                        tx.points[ps[j] as usize],
                    ));
                }
            }
            diam[u as usize] = Some(best);
            best
        };
        for &(u, v) in &pairs {
            let pu = tx.leaf_points(u);
            let pv = tx.leaf_points(v);
            let mut sep = f64::INFINITY;
            for &x in &pu {
                for &y in &pv {
                    assert!(!covered[x as usize * n + y as usize], "pair covered twice");
                    covered[x as usize * n + y as usize] = true;
                    covered[y as usize * n + x as usize] = true;
                    sep = sep.min(g.metric(tx.points[x as usize], tx.points[y as usize]));
                }
            }
            let dm = diam_of(u).max(diam_of(v));
            assert!(
                c * dm <= sep * (1.0 + 1e-9),
                "separation violated: c*diam = {} vs sep = {}",
                c * dm,
                sep
            );
        }
        for x in 0..n {
            for y in 0..n {
                assert_eq!(covered[x * n + y], x != y, "coverage hole at ({x},{y})");
            }
        }
    }

    #[test]
    fn coverage_and_separation_are_exhaustive() {
        for (gi, g) in test_gauges().iter().enumerate() {
            let pts = random_points(40 + gi as u64, 256, 500.0);
            let tx = full_tx(g, &pts);
            for c in [1.0, 4.0] {
                check_wspd(g, &tx, c);
            }
        }
        // tightly spread points force the decomposition down to leaf pairs
        let g = &test_gauges()[0];
        let pts = random_points(77, 256, 8.0);
        let tx = full_tx(g, &pts);
        check_wspd(g, &tx, 4.0);
    }

    #[test]
    fn knn_matches_brute_force_on_full_trees() {
        for (gi, g) in test_gauges().iter().enumerate() {
            for (n, half) in [(57usize, 30.0), (256, 500.0)] {
                let pts = random_points(90 + gi as u64 + n as u64, n, half);
                let tx = full_tx(g, &pts);
                let ids: Vec<u32> = (0..n as u32).collect();
                for k in 1..=3usize {
                    let graph = knn_graph(g, &tx, k).expect("k below n");
                    assert_eq!(graph.points, ids);
                    let brute = brute_knn(g, &ids, &pts, k);
                    assert_eq!(graph.neighbors, brute, "gauge {gi}, n {n}, k {k}");
                }
            }
        }
    }

    #[test]
    fn knn_on_a_compressed_subset_matches_brute_force() {
        let g = &test_gauges()[2];
        let pts = random_points(123, 200, 400.0);
        let t = build_net_tree(g, &pts, 11).expect("net tree builds");
        let mut cl = partition_clusters(&t, 8);
        let mut r: Vec<u32> = (0..pts.len() as u32).step_by(3).collect();
        for c in &cl.list {
            r.push(t.nodes[c.root as usize].rep);
        }
        r.sort_unstable();
        r.dedup();
        let tx = compress_to_subset(&t, &mut cl, &r).expect("valid subset");
        for k in [1usize, 3] {
            let graph = knn_graph(g, &tx, k).expect("k below n");
            assert_eq!(graph.points, r);
            let brute = brute_knn(g, &r, &pts, k);
            assert_eq!(graph.neighbors, brute, "k {k}");
        }
    }

    #[test]
    fn k_too_large_is_rejected() {
        let g = &test_gauges()[0];
        let pts = random_points(5, 5, 50.0);
        let tx = full_tx(g, &pts);
        assert_eq!(knn_graph(g, &tx, 5).unwrap_err(), KnnError::KTooLarge { k: 5, n: 5 });
        assert!(knn_graph(g, &tx, 4).is_ok());
    }

    #[test]
    fn cone_frame_spacing_stays_in_band() {
        let origin = pt(0.0, 0.0);
        for g in &test_gauges() {
            let frame = ConeFrame::new(g);
            let m = frame.axes.len();
            assert!((16..=64).contains(&m), "unexpected frame size {m}");
            for (i, &ax) in frame.axes.iter().enumerate() {
                assert!(
                    (g.metric(origin, ax) - 1.0).abs() <= 1e-9,
                    "axis {i} off the boundary"
                );
                let next = frame.axes[(i + 1) % m];
                let gap = g.metric(ax, next);
                assert!(
                    (SPACING_LO - 1e-9..=SPACING_HI + 1e-9).contains(&gap),
                    "spacing {gap} out of band after axis {i}"
                );
            }
        }
    }

    #[test]
    fn cone_prune_keeps_exactly_k_in_a_crowded_cone() {
        let g = &test_gauges()[0];
        let frame = ConeFrame::new(g);
        let q0 = pt(0.0, 0.0);
        let k = 3usize;
        let pts: Vec<Point> = (1..=2 * k as i32 + 3)
            .map(|i| pt(i as f64, i as f64 * 1e-3))
            .collect();
        let cone = frame.cone_of(g, pts[0] - q0);
        for p in &pts {
            assert_eq!(frame.cone_of(g, *p - q0), cone, "candidates span two cones");
        }
        let cands: Vec<u32> = (0..pts.len() as u32).collect();
        let kept = cone_prune(g, &frame, q0, &pts, &cands, k);
        assert_eq!(kept, vec![0, 1, 2]);
        let worst_kept = kept
            .iter()
            .map(|&p| g.metric(q0, pts[p as usize]))
            .fold(0.0f64, f64::max);
        for &p in &cands {
            if !kept.contains(&p) {
                assert!(g.metric(q0, pts[p as usize]) > worst_kept);
            }
        }
    }

    #[test]
    fn one_nn_edges_are_voronoi_neighbor_pairs() {
        for (gi, g) in test_gauges().iter().enumerate().take(2) {
            let pts = random_points(200 + gi as u64, 256, 8.0);
            let frame = g.dummy_frame_seeded(12.0, 7).expect("frame fits");
            let (d, used, attempts) = prepare(g, &frame, &pts, None).expect("diagram builds");
            assert_eq!(attempts, 0, "positions must match the tree's input");
            drop(used);
            let tx = full_tx(g, &pts);
            let graph = knn_graph(g, &tx, 1).expect("k below n");
            let report = nn_graph_checks(&graph, &d);
            assert!(
                report.violations.is_empty(),
                "non-adjacent 1-NN edges: {:?}",
                report.violations
            );
            assert!(report.edges >= 128);
            assert!((1..=16).contains(&report.max_degree));
        }
    }
}

//! Net-tree over a point set under the symmetric polygon metric, plus the
//! structures layered on it: greedy leaf clusters with order indices and
//! constant-time ancestor queries, subset compression, well-separated pair
//! decomposition, and exact k-nearest-neighbor extraction.

pub mod cluster;
pub mod compress;
pub mod veb;
pub mod wspd;

use crate::gauge::ConvexGauge;
use crate::geom::Point;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetTreeError {
    #[error("tau = {tau} is too small; the tree invariants need tau >= 11")]
    TauTooSmall { tau: i64 },
    #[error("points must be pairwise distinct")]
    DuplicatePoints,
    #[error("no points given")]
    Empty,
    #[error("ball-coverage repair did not converge after {repairs} reattachments")]
    Unstable { repairs: usize },
}

/// One node of a net-tree. The first child always continues the
/// representative's chain, so `children[0]` has the same rep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetNode {
    /// Index into `NetTree::points`.
    pub rep: u32,
    /// `None` plays the role of -infinity on leaves.
    pub level: Option<i64>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

impl NetNode {
    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetTree {
    pub tau: i64,
    pub points: Vec<Point>,
    pub nodes: Vec<NetNode>,
    pub root: NodeId,
    /// Leaf node of each point; the leaf <-> point map is a bijection.
    pub leaf_of: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetStats {
    pub nodes: usize,
    pub leaves: usize,
    pub internal: usize,
    pub depth: usize,
    pub max_children: usize,
    pub repairs: usize,
}

#[inline]
fn powt(tau: i64, level: i64) -> f64 {
    (tau as f64).powi(level.clamp(-160, 160) as i32)
}

#[inline]
fn powt_opt(tau: i64, level: Option<i64>) -> f64 {
    level.map_or(0.0, |l| powt(tau, l))
}

/// Subtree cover radius factor: every point of `P_v` lies within
/// `cover_factor * tau^level` of the representative.
#[inline]
fn cover_factor(tau: i64) -> f64 {
    2.0 * tau as f64 / (tau as f64 - 1.0)
}

/// Ball ingestion factor: every point within
/// `ball_factor * tau^(parent level - 1)` of the representative must belong
/// to the subtree.
#[inline]
fn ball_factor(tau: i64) -> f64 {
    (tau as f64 - 5.0) / (2.0 * tau as f64 - 2.0)
}

/// Point-attachment state the explicit tree is rebuilt from. Point 0 anchors
/// the hierarchy; every other point attaches to a coarser point at a level.
struct Attach {
    /// Largest level at which the point still acts as a net center;
    /// `None` means plus infinity (the anchor point).
    top: Vec<Option<i64>>,
    parent_pt: Vec<u32>,
    level: Vec<i64>,
}

pub fn build_net_tree(
    g: &ConvexGauge,
    points: &[Point],
    tau: i64,
) -> Result<NetTree, NetTreeError> {
    if tau < 11 {
        return Err(NetTreeError::TauTooSmall { tau });
    }
    if points.is_empty() {
        return Err(NetTreeError::Empty);
    }
    let n = points.len();
    if n == 1 {
        return Ok(NetTree {
            tau,
            points: points.to_vec(),
            nodes: vec![NetNode { rep: 0, level: None, parent: None, children: Vec::new() }],
            root: 0,
            leaf_of: vec![0],
        });
    }

    let mut st = initial_attachment(g, points, tau)?;
    let mut tree = rebuild_explicit(points, tau, &st);
    let max_repairs = 16 * n + 64;
    let mut repairs = 0;
    while let Some((node, x)) = first_ball_violation(&tree, g) {
        if repairs >= max_repairs {
            return Err(NetTreeError::Unstable { repairs });
        }
        repair_attachment(g, points, tau, &mut st, &tree, node, x);
        tree = rebuild_explicit(points, tau, &st);
        repairs += 1;
    }
    debug_assert!(verify_net_tree(&tree, g).is_ok());
    Ok(tree)
}

/// Farthest-first traversal; nets are radius-prefixes of the chosen order,
/// and each point attaches to its nearest strictly coarser point.
fn initial_attachment(
    g: &ConvexGauge,
    points: &[Point],
    tau: i64,
) -> Result<Attach, NetTreeError> {
    let n = points.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut radius = vec![f64::INFINITY; n];
    let mut chosen = vec![false; n];
    let mut cur = 0usize;
    for step in 0..n {
        chosen[cur] = true;
        if step > 0 && radius[cur] <= 0.0 {
            return Err(NetTreeError::DuplicatePoints);
        }
        let mut next = usize::MAX;
        let mut far = -1.0;
        for i in 0..n {
            if chosen[i] {
                continue;
            }
            let d = g.metric(points[cur], points[i]);
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > far {
                far = dist[i];
                next = i;
            }
        }
        if next == usize::MAX {
            break;
        }
        radius[next] = dist[next];
        cur = next;
    }

    // top[i]: largest level with tau^level < radius[i].
    let mut top: Vec<Option<i64>> = vec![None; n];
    for i in 1..n {
        let r = radius[i];
        let mut l = (r.ln() / (tau as f64).ln()).floor() as i64;
        while powt(tau, l + 1) < r {
            l += 1;
        }
        while powt(tau, l) >= r {
            l -= 1;
        }
        top[i] = Some(l);
    }
    top[0] = None; // anchor: plus infinity

    let mut parent_pt = vec![u32::MAX; n];
    let mut level = vec![0i64; n];
    for i in 1..n {
        let li = top[i].unwrap() + 1;
        let mut best = f64::INFINITY;
        let mut who = usize::MAX;
        for j in 0..n {
            if j == i || !coarser_at(&top, j, li) {
                continue;
            }
            let d = g.metric(points[i], points[j]);
            if d < best {
                best = d;
                who = j;
            }
        }
        debug_assert!(who != usize::MAX && best <= powt(tau, li) * (1.0 + 1e-9));
        parent_pt[i] = who as u32;
        level[i] = li;
    }
    Ok(Attach { top, parent_pt, level })
}

/// Whether point `j` is still a net center at level `l`.
#[inline]
fn coarser_at(top: &[Option<i64>], j: usize, l: i64) -> bool {
    match top[j] {
        None => true,
        Some(t) => t >= l,
    }
}

/// Materializes the chain tree: each center gets one explicit node per
/// distinct attachment level, the chain continuation first among children.
fn rebuild_explicit(points: &[Point], tau: i64, st: &Attach) -> NetTree {
    let n = points.len();
    let mut att: Vec<Vec<(i64, u32)>> = vec![Vec::new(); n];
    for i in 1..n {
        att[st.parent_pt[i] as usize].push((st.level[i], i as u32));
    }
    for list in &mut att {
        list.sort_unstable();
    }

    let mut nodes: Vec<NetNode> = Vec::with_capacity(2 * n);
    let mut leaf_of = vec![0 as NodeId; n];
    for (i, node) in leaf_of.iter_mut().enumerate() {
        *node = nodes.len() as NodeId;
        nodes.push(NetNode { rep: i as u32, level: None, parent: None, children: Vec::new() });
    }
    // Chain tops are needed by the centers they attach to, so process points
    // in post-order of the attachment forest.
    let mut order: Vec<u32> = Vec::with_capacity(n);
    let mut stack = vec![0u32];
    while let Some(c) = stack.pop() {
        order.push(c);
        for &(_, i) in &att[c as usize] {
            stack.push(i);
        }
    }
    let mut chain_top = vec![0 as NodeId; n];
    for &c in order.iter().rev() {
        let c = c as usize;
        let mut cur = leaf_of[c];
        let mut k = 0;
        while k < att[c].len() {
            let lvl = att[c][k].0;
            let id = nodes.len() as NodeId;
            let mut children = vec![cur];
            while k < att[c].len() && att[c][k].0 == lvl {
                children.push(chain_top[att[c][k].1 as usize]);
                k += 1;
            }
            nodes.push(NetNode { rep: c as u32, level: Some(lvl), parent: None, children });
            for ci in nodes[id as usize].children.clone() {
                nodes[ci as usize].parent = Some(id);
            }
            cur = id;
        }
        chain_top[c] = cur;
    }
    NetTree { tau, points: points.to_vec(), nodes, root: chain_top[0], leaf_of }
}

/// Preorder entry/exit stamps for O(1) subtree membership.
fn euler_intervals(t: &NetTree) -> (Vec<u32>, Vec<u32>) {
    let m = t.nodes.len();
    let mut tin = vec![0u32; m];
    let mut tout = vec![0u32; m];
    let mut clock = 0u32;
    let mut stack = vec![(t.root, false)];
    while let Some((v, exiting)) = stack.pop() {
        if exiting {
            tout[v as usize] = clock;
            continue;
        }
        tin[v as usize] = clock;
        clock += 1;
        stack.push((v, true));
        for &c in t.nodes[v as usize].children.iter().rev() {
            stack.push((c, false));
        }
    }
    (tin, tout)
}

#[inline]
fn in_subtree(tin: &[u32], tout: &[u32], anc: NodeId, leaf: NodeId) -> bool {
    tin[anc as usize] <= tin[leaf as usize] && tin[leaf as usize] < tout[anc as usize]
}

/// First (node, point) pair violating the ball-ingestion property, scanning
/// nodes then points in index order.
fn first_ball_violation(t: &NetTree, g: &ConvexGauge) -> Option<(NodeId, u32)> {
    let (tin, tout) = euler_intervals(t);
    let bf = ball_factor(t.tau);
    for (vi, v) in t.nodes.iter().enumerate() {
        let Some(p) = v.parent else { continue };
        let lp = t.nodes[p as usize].level.expect("internal parent");
        let radius = bf * powt(t.tau, lp - 1);
        let rep = t.points[v.rep as usize];
        for (x, &leaf) in t.leaf_of.iter().enumerate() {
            if g.metric(t.points[x], rep) <= radius
                && !in_subtree(&tin, &tout, vi as NodeId, leaf)
            {
                return Some((vi as NodeId, x as u32));
            }
        }
    }
    None
}

/// Reattaches the violating point under the node's representative, at the
/// lowest level that keeps the attachment within covering distance.
fn repair_attachment(
    g: &ConvexGauge,
    points: &[Point],
    tau: i64,
    st: &mut Attach,
    t: &NetTree,
    node: NodeId,
    x: u32,
) {
    let c = t.nodes[node as usize].rep;
    debug_assert_ne!(c, x);
    debug_assert_ne!(x, 0);
    let d = g.metric(points[x as usize], points[c as usize]);
    let mut l = st.top[x as usize].unwrap() + 1;
    while powt(tau, l) < d {
        l += 1;
    }
    debug_assert!(coarser_at(&st.top, c as usize, l));
    st.parent_pt[x as usize] = c;
    st.level[x as usize] = l;
}

/// Checks the structural and metric net-tree properties, labeled (a)-(f):
/// (a) representative inside own subtree, (b) levels strictly increase toward
/// the root with leaves at -infinity, (c) internal arity in [2, bound],
/// (d) subtree within the cover radius of its representative, (e) ball around
/// the representative swallowed by the subtree, (f) some child shares the
/// representative. Returns the first violation.
pub fn verify_net_tree(t: &NetTree, g: &ConvexGauge) -> Result<NetStats, String> {
    let n = t.points.len();
    if t.leaf_of.len() != n {
        return Err("(a) leaf map size differs from point count".into());
    }
    for (i, &leaf) in t.leaf_of.iter().enumerate() {
        let node = &t.nodes[leaf as usize];
        if !node.is_leaf() || node.rep as usize != i || node.level.is_some() {
            return Err(format!("(a) point {i} has no proper leaf"));
        }
    }
    let (tin, tout) = euler_intervals(t);
    let mut seen = vec![false; t.nodes.len()];
    let mut depth = 0usize;
    let mut max_children = 0usize;
    let mut stack = vec![(t.root, 1usize)];
    let mut visited = 0usize;
    while let Some((v, dep)) = stack.pop() {
        if seen[v as usize] {
            return Err("(b) node reachable twice".into());
        }
        seen[v as usize] = true;
        visited += 1;
        depth = depth.max(dep);
        let node = &t.nodes[v as usize];
        max_children = max_children.max(node.children.len());
        for &c in &node.children {
            if t.nodes[c as usize].parent != Some(v) {
                return Err("(b) child parent pointer mismatch".into());
            }
            stack.push((c, dep + 1));
        }
    }
    if visited != t.nodes.len() || t.nodes[t.root as usize].parent.is_some() {
        return Err("(b) dangling nodes or bad root".into());
    }

    // (a): the representative's leaf lies inside the subtree.
    for (vi, v) in t.nodes.iter().enumerate() {
        if !in_subtree(&tin, &tout, vi as NodeId, t.leaf_of[v.rep as usize]) {
            return Err(format!("(a) node {vi}: representative {} outside subtree", v.rep));
        }
    }
    // (b): strict level increase toward the root.
    for (vi, v) in t.nodes.iter().enumerate() {
        if v.is_leaf() != v.level.is_none() {
            return Err(format!("(b) node {vi}: leaf/level mismatch"));
        }
        if let Some(p) = v.parent {
            let lp = t.nodes[p as usize].level;
            if lp.is_none() || v.level >= lp {
                return Err(format!("(b) node {vi}: level not below parent"));
            }
        }
    }
    // (c): internal arity.
    let arity_cap = ((2 * t.tau + 1) * (2 * t.tau + 1) + 1) as usize;
    for (vi, v) in t.nodes.iter().enumerate() {
        if !v.is_leaf() && (v.children.len() < 2 || v.children.len() > arity_cap) {
            return Err(format!("(c) node {vi}: arity {}", v.children.len()));
        }
    }
    // (d): cover radius, walked leaf-to-root.
    let cf = cover_factor(t.tau);
    for (x, &leaf) in t.leaf_of.iter().enumerate() {
        let p = t.points[x];
        let mut cur = t.nodes[leaf as usize].parent;
        while let Some(v) = cur {
            let node = &t.nodes[v as usize];
            let bound = cf * powt_opt(t.tau, node.level);
            let d = g.metric(t.points[node.rep as usize], p);
            if d > bound * (1.0 + 1e-9) {
                return Err(format!("(d) node {v}: point {x} at {d:.6} exceeds {bound:.6}"));
            }
            cur = node.parent;
        }
    }
    // (e): ball ingestion.
    let bf = ball_factor(t.tau);
    for (vi, v) in t.nodes.iter().enumerate() {
        let Some(p) = v.parent else { continue };
        let lp = t.nodes[p as usize].level.expect("internal parent");
        let radius = bf * powt(t.tau, lp - 1);
        let rep = t.points[v.rep as usize];
        for (x, &leaf) in t.leaf_of.iter().enumerate() {
            if g.metric(t.points[x], rep) <= radius
                && !in_subtree(&tin, &tout, vi as NodeId, leaf)
            {
                return Err(format!("(e) node {vi}: point {x} inside ball but outside subtree"));
            }
        }
    }
    // (f): representative chain continues into some child.
    for (vi, v) in t.nodes.iter().enumerate() {
        if !v.is_leaf() && !v.children.iter().any(|&c| t.nodes[c as usize].rep == v.rep) {
            return Err(format!("(f) node {vi}: no child keeps the representative"));
        }
    }

    let leaves = t.nodes.iter().filter(|v| v.is_leaf()).count();
    Ok(NetStats {
        nodes: t.nodes.len(),
        leaves,
        internal: t.nodes.len() - leaves,
        depth,
        max_children,
        repairs: 0,
    })
}

impl NetTree {
    /// Leaf node ids in left-to-right order.
    pub fn leaves_inorder(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            let node = &self.nodes[v as usize];
            if node.is_leaf() {
                out.push(v);
            }
            for &c in node.children.iter().rev() {
                stack.push(c);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::test_gauges;
    use crate::geom::pt;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn sq() -> ConvexGauge {
        test_gauges().remove(0)
    }

    #[test]
    fn single_point_is_one_leaf() {
        let g = sq();
        let t = build_net_tree(&g, &[pt(0.3, -0.2)], 11).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.root, 0);
        assert!(t.nodes[0].is_leaf());
        verify_net_tree(&t, &g).unwrap();
    }

    #[test]
    fn rejects_small_tau_and_duplicates() {
        let g = sq();
        assert_eq!(
            build_net_tree(&g, &[pt(0.0, 0.0)], 10).unwrap_err(),
            NetTreeError::TauTooSmall { tau: 10 }
        );
        assert_eq!(
            build_net_tree(&g, &[pt(0.0, 0.0), pt(0.0, 0.0)], 11).unwrap_err(),
            NetTreeError::DuplicatePoints
        );
    }

    #[test]
    fn two_far_points_make_one_root() {
        let g = sq();
        let a = pt(0.0, 0.0);
        let b = pt(500.0, 40.0);
        let t = build_net_tree(&g, &[a, b], 11).unwrap();
        assert_eq!(t.nodes.len(), 3);
        let root = &t.nodes[t.root as usize];
        assert_eq!(root.children.len(), 2);
        let l = root.level.unwrap();
        let d = g.metric(a, b);
        assert!(powt(11, l - 1) < d && d <= powt(11, l));
        verify_net_tree(&t, &g).unwrap();
    }

    #[test]
    fn random_trees_satisfy_all_properties() {
        for (gi, g) in test_gauges().into_iter().enumerate() {
            for seed in 0..3u64 {
                let mut rng = StdRng::seed_from_u64(900 + seed);
                let n = 512;
                let pts: Vec<Point> = (0..n)
                    .map(|_| pt(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)))
                    .collect();
                let t = build_net_tree(&g, &pts, 11).unwrap();
                let stats = verify_net_tree(&t, &g)
                    .unwrap_or_else(|e| panic!("gauge {gi} seed {seed}: {e}"));
                assert_eq!(stats.leaves, n);
                assert!(stats.max_children >= 2);
            }
        }
    }

    #[test]
    fn clumped_points_keep_properties() {
        let g = sq();
        let mut rng = StdRng::seed_from_u64(77);
        let mut pts = Vec::new();
        for c in 0..8 {
            let cx = (c as f64) * 211.0 - 800.0;
            for _ in 0..40 {
                pts.push(pt(
                    cx + rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5) + (c % 3) as f64 * 150.0,
                ));
            }
        }
        let t = build_net_tree(&g, &pts, 11).unwrap();
        verify_net_tree(&t, &g).unwrap();
    }

    #[test]
    fn verify_flags_unary_node() {
        let g = sq();
        let pts = vec![pt(0.0, 0.0), pt(50.0, 3.0), pt(-40.0, 9.0), pt(7.0, 88.0)];
        let mut t = build_net_tree(&g, &pts, 11).unwrap();
        // Splice a unary node above the first leaf.
        let leaf = t.leaf_of[0];
        let parent = t.nodes[leaf as usize].parent.unwrap();
        let lvl = t.nodes[parent as usize].level.map(|l| l - 1);
        let mid = t.nodes.len() as NodeId;
        t.nodes.push(NetNode {
            rep: t.nodes[leaf as usize].rep,
            level: lvl,
            parent: Some(parent),
            children: vec![leaf],
        });
        let slot = t.nodes[parent as usize].children.iter().position(|&c| c == leaf).unwrap();
        t.nodes[parent as usize].children[slot] = mid;
        t.nodes[leaf as usize].parent = Some(mid);
        let err = verify_net_tree(&t, &g).unwrap_err();
        assert!(err.starts_with("(c)"), "{err}");
    }

    #[test]
    fn verify_flags_leaf_in_wrong_subtree() {
        let g = sq();
        // A tight clump and a far clump; rehoming a clump member under the
        // root leaves every cover radius intact but breaks ball ingestion.
        let pts = vec![
            pt(0.0, 0.0),
            pt(0.4, 0.1),
            pt(-0.3, 0.2),
            pt(0.1, -0.4),
            pt(900.0, 0.0),
            pt(900.5, 0.3),
            pt(899.6, -0.2),
        ];
        let t = build_net_tree(&g, &pts, 11).unwrap();
        for x in 1..4u32 {
            let mut t2 = t.clone();
            let leaf = t2.leaf_of[x as usize];
            let parent = t2.nodes[leaf as usize].parent.unwrap();
            if t2.nodes[parent as usize].children.len() < 3 || parent == t2.root {
                continue;
            }
            let slot =
                t2.nodes[parent as usize].children.iter().position(|&c| c == leaf).unwrap();
            t2.nodes[parent as usize].children.remove(slot);
            t2.nodes[leaf as usize].parent = Some(t2.root);
            let root = t2.root;
            t2.nodes[root as usize].children.push(leaf);
            let err = verify_net_tree(&t2, &g).unwrap_err();
            assert!(err.starts_with("(e)"), "{err}");
            return;
        }
        panic!("no suitable leaf to rehome");
    }
}

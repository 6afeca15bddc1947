//! Greedy leaf clusters over a net-tree.
//!
//! Scanning leaves left to right, each round selects the next `m` unclustered
//! leaves, finds the lowest node whose subtree contains them all, and turns
//! the not-yet-clustered part of that subtree into a cluster. Clusters are
//! disjoint and cover every leaf; nodes never assigned (common ancestors of
//! cluster roots) form the skeleton.
//!
//! A later cluster can wholly enclose an earlier one. The enclosed cluster
//! dangles from a single node of the host; that attachment is recorded as a
//! `Slot::Pocket` between the host's own leaves, because under compression
//! the enclosed cluster behaves like one always-selected leaf.

use super::veb::Veb;
use super::{NetTree, NodeId};
use thiserror::Error;

pub const NO_CLUSTER: u32 = u32::MAX;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClusterError {
    #[error("nodes {u} and {v} lie in different clusters")]
    DifferentClusters { u: NodeId, v: NodeId },
    #[error("node {0} lies in the skeleton, not in a cluster")]
    NotClustered(NodeId),
}

/// One inorder position inside a cluster: either a member leaf or the
/// attachment point of an earlier cluster nested below this one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Leaf(NodeId),
    /// 0-based index into `Clusters::list` of the enclosed cluster.
    Pocket(u32),
}

#[derive(Debug)]
pub struct Cluster {
    /// 1-based index, matching the formation order.
    pub index: u32,
    pub root: NodeId,
    /// Member nodes in preorder.
    pub nodes: Vec<NodeId>,
    /// Member leaves in inorder.
    pub leaves: Vec<NodeId>,
    /// Inorder sequence of leaves and pockets; the vEB universe.
    pub slots: Vec<Slot>,
    /// Scratch set over slot ranks, drained after each compression.
    pub eb: Veb,
    // Euler tour over member nodes (pocket stubs appear as one extra-depth
    // entry) with a sparse range-minimum table for NCA queries.
    euler_node: Vec<NodeId>,
    euler_depth: Vec<u32>,
    sparse: Vec<Vec<u32>>,
    /// Euler position of each slot, indexed by slot rank.
    slot_pos: Vec<u32>,
}

#[derive(Debug)]
pub struct Clusters {
    pub list: Vec<Cluster>,
    /// 0-based cluster index per node; `NO_CLUSTER` marks the skeleton.
    pub of_node: Vec<u32>,
    /// Traversal indices within the owning cluster, 1-based; 0 on skeleton.
    pub pre: Vec<u32>,
    pub inord: Vec<u32>,
    pub post: Vec<u32>,
    /// First Euler occurrence within the owning cluster's tour.
    first_occ: Vec<u32>,
    /// Slot rank of each member leaf within its cluster.
    pub leaf_slot: Vec<u32>,
}

impl Clusters {
    /// O(1) ancestor-or-self test for two nodes of the same cluster.
    #[inline]
    pub fn is_ancestor(&self, anc: NodeId, node: NodeId) -> bool {
        self.of_node[anc as usize] == self.of_node[node as usize]
            && self.of_node[anc as usize] != NO_CLUSTER
            && self.pre[anc as usize] <= self.pre[node as usize]
            && self.post[anc as usize] >= self.post[node as usize]
    }
}

impl Cluster {
    /// Nearest common ancestor of two Euler positions.
    fn nca_pos(&self, a: u32, b: u32) -> NodeId {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let len = (hi - lo + 1) as usize;
        let k = usize::BITS - 1 - len.leading_zeros();
        let row = &self.sparse[k as usize];
        let x = row[lo as usize];
        let y = row[hi as usize + 1 - (1 << k)];
        let p = if self.euler_depth[x as usize] <= self.euler_depth[y as usize] { x } else { y };
        self.euler_node[p as usize]
    }

    /// NCA of two slots (leaf or pocket positions) of this cluster.
    pub(crate) fn nca_slots(&self, a: u32, b: u32) -> NodeId {
        self.nca_pos(self.slot_pos[a as usize], self.slot_pos[b as usize])
    }
}

/// Nearest common ancestor of two member nodes of the same cluster.
pub fn nca_query(cl: &Clusters, u: NodeId, v: NodeId) -> Result<NodeId, ClusterError> {
    let cu = cl.of_node[u as usize];
    let cv = cl.of_node[v as usize];
    if cu == NO_CLUSTER {
        return Err(ClusterError::NotClustered(u));
    }
    if cv == NO_CLUSTER {
        return Err(ClusterError::NotClustered(v));
    }
    if cu != cv {
        return Err(ClusterError::DifferentClusters { u, v });
    }
    let c = &cl.list[cu as usize];
    Ok(c.nca_pos(cl.first_occ[u as usize], cl.first_occ[v as usize]))
}

/// Groups leaves left to right into clusters of roughly `m` and builds the
/// per-cluster index and NCA structures.
pub fn partition_clusters(t: &NetTree, m: usize) -> Clusters {
    let m = m.max(1);
    let nn = t.nodes.len();
    let mut cl = Clusters {
        list: Vec::new(),
        of_node: vec![NO_CLUSTER; nn],
        pre: vec![0; nn],
        inord: vec![0; nn],
        post: vec![0; nn],
        first_occ: vec![0; nn],
        leaf_slot: vec![0; nn],
    };

    let leaves = t.leaves_inorder();
    // Rightmost leaf rank of every subtree, for the pointer sweep.
    let mut max_rank = vec![0u32; nn];
    for (r, &leaf) in leaves.iter().enumerate() {
        let mut cur = Some(leaf);
        while let Some(v) = cur {
            max_rank[v as usize] = r as u32;
            cur = t.nodes[v as usize].parent;
        }
    }
    let mut depth = vec![0u32; nn];
    let mut stack = vec![t.root];
    while let Some(v) = stack.pop() {
        for &c in &t.nodes[v as usize].children {
            depth[c as usize] = depth[v as usize] + 1;
            stack.push(c);
        }
    }

    let mut ptr = 0usize;
    while ptr < leaves.len() {
        let last = (ptr + m - 1).min(leaves.len() - 1);
        let v = nca_walk(t, &depth, leaves[ptr], leaves[last]);
        debug_assert_eq!(cl.of_node[v as usize], NO_CLUSTER);
        let cluster = carve_cluster(t, v, &mut cl);
        ptr = max_rank[v as usize] as usize + 1;
        cl.list.push(cluster);
    }
    cl
}

/// Lowest common ancestor by depth walk on the full tree.
fn nca_walk(t: &NetTree, depth: &[u32], mut a: NodeId, mut b: NodeId) -> NodeId {
    while depth[a as usize] > depth[b as usize] {
        a = t.nodes[a as usize].parent.unwrap();
    }
    while depth[b as usize] > depth[a as usize] {
        b = t.nodes[b as usize].parent.unwrap();
    }
    while a != b {
        a = t.nodes[a as usize].parent.unwrap();
        b = t.nodes[b as usize].parent.unwrap();
    }
    a
}

/// Claims every unassigned node of `subtree(root)` for a new cluster and
/// records traversal indices, slots, and the Euler tour with pocket stubs.
fn carve_cluster(t: &NetTree, root: NodeId, cl: &mut Clusters) -> Cluster {
    let index = cl.list.len() as u32;
    let mut nodes = Vec::new();
    let mut leaves = Vec::new();
    let mut slots = Vec::new();
    let mut slot_pos = Vec::new();
    let mut euler_node = Vec::new();
    let mut euler_depth = Vec::new();
    let mut pre_clock = 0u32;
    let mut in_clock = 0u32;
    let mut post_clock = 0u32;

    enum Step {
        Enter(NodeId, u32),
        /// Continue at child slot `usize` after a child subtree finished.
        Visit(NodeId, u32, usize),
        /// Re-emit the node when control returns from a member child.
        Emit(NodeId, u32),
    }
    let mut stack = vec![Step::Enter(root, 0)];
    while let Some(step) = stack.pop() {
        match step {
            Step::Enter(v, d) => {
                cl.of_node[v as usize] = index;
                nodes.push(v);
                pre_clock += 1;
                cl.pre[v as usize] = pre_clock;
                cl.first_occ[v as usize] = euler_node.len() as u32;
                euler_node.push(v);
                euler_depth.push(d);
                if t.nodes[v as usize].is_leaf() {
                    in_clock += 1;
                    cl.inord[v as usize] = in_clock;
                    cl.leaf_slot[v as usize] = slots.len() as u32;
                    slot_pos.push(cl.first_occ[v as usize]);
                    slots.push(Slot::Leaf(v));
                    leaves.push(v);
                    post_clock += 1;
                    cl.post[v as usize] = post_clock;
                } else {
                    stack.push(Step::Visit(v, d, 0));
                }
            }
            Step::Visit(v, d, next) => {
                if next == 1 {
                    in_clock += 1;
                    cl.inord[v as usize] = in_clock;
                }
                let children = &t.nodes[v as usize].children;
                if next == children.len() {
                    post_clock += 1;
                    cl.post[v as usize] = post_clock;
                    continue;
                }
                let c = children[next];
                stack.push(Step::Visit(v, d, next + 1));
                if cl.of_node[c as usize] == NO_CLUSTER {
                    stack.push(Step::Emit(v, d));
                    stack.push(Step::Enter(c, d + 1));
                } else {
                    // Pocket: earlier cluster nested below v.
                    slot_pos.push(euler_node.len() as u32);
                    euler_node.push(v);
                    euler_depth.push(d + 1);
                    euler_node.push(v);
                    euler_depth.push(d);
                    slots.push(Slot::Pocket(cl.of_node[c as usize]));
                }
            }
            Step::Emit(v, d) => {
                euler_node.push(v);
                euler_depth.push(d);
            }
        }
    }

    let sparse = build_sparse(&euler_depth);
    let universe = slots.len();
    Cluster {
        index: index + 1,
        root,
        nodes,
        leaves,
        slots,
        eb: Veb::new(universe.max(1)),
        euler_node,
        euler_depth,
        sparse,
        slot_pos,
    }
}

/// Sparse range-minimum table over Euler depths; row k answers spans of 2^k.
fn build_sparse(depth: &[u32]) -> Vec<Vec<u32>> {
    let n = depth.len();
    let mut table: Vec<Vec<u32>> = vec![(0..n as u32).collect()];
    let mut span = 1;
    while 2 * span <= n {
        let prev = table.last().unwrap();
        let mut row = Vec::with_capacity(n - 2 * span + 1);
        for i in 0..=(n - 2 * span) {
            let a = prev[i];
            let b = prev[i + span];
            row.push(if depth[a as usize] <= depth[b as usize] { a } else { b });
        }
        table.push(row);
        span *= 2;
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::test_gauges;
    use crate::geom::pt;
    use crate::net::{build_net_tree, NetNode};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Left-deep caterpillar with `n` leaves: root = N_n (children N_{n-1},
    /// leaf_n), down to N_2 (children leaf_1, leaf_2). Leaf inorder is
    /// leaf_1, .., leaf_n. Levels descend toward the bottom.
    fn caterpillar(n: usize) -> NetTree {
        assert!(n >= 2);
        let mut nodes: Vec<NetNode> = (0..n)
            .map(|i| NetNode { rep: i as u32, level: None, parent: None, children: Vec::new() })
            .collect();
        let leaf_of: Vec<NodeId> = (0..n as u32).collect();
        let mut below = 0 as NodeId; // N_2 gets leaves 0 and 1
        for i in 1..n {
            let id = nodes.len() as NodeId;
            nodes.push(NetNode {
                rep: 0,
                level: Some(i as i64),
                parent: None,
                children: vec![below, leaf_of[i]],
            });
            nodes[below as usize].parent = Some(id);
            nodes[i].parent = Some(id);
            below = id;
        }
        NetTree { tau: 11, points: vec![pt(0.0, 0.0); n], nodes, root: below, leaf_of }
    }

    fn leaf_sets(t: &NetTree, cl: &Clusters) -> Vec<Vec<u32>> {
        cl.list
            .iter()
            .map(|c| c.leaves.iter().map(|&l| t.nodes[l as usize].rep).collect())
            .collect()
    }

    #[test]
    fn caterpillar_clusters_of_three() {
        let t = caterpillar(7);
        let cl = partition_clusters(&t, 3);
        assert_eq!(leaf_sets(&t, &cl), vec![vec![0, 1, 2], vec![3, 4, 5], vec![6]]);
        assert_eq!(cl.list[0].slots.len(), 3);
        // The second cluster hosts the first as a pocket before its leaves.
        assert_eq!(cl.list[1].slots[0], Slot::Pocket(0));
        assert_eq!(cl.list[1].slots.len(), 4);
        assert_eq!(cl.list[2].slots, vec![Slot::Leaf(t.leaf_of[6])]);
        // Only the root (common ancestor of cluster roots) stays skeleton.
        for (v, &c) in cl.of_node.iter().enumerate() {
            assert_eq!(c == NO_CLUSTER, v as NodeId == t.root, "node {v}");
        }
    }

    #[test]
    fn one_cluster_when_m_covers_everything() {
        let t = caterpillar(5);
        let cl = partition_clusters(&t, 5);
        assert_eq!(cl.list.len(), 1);
        assert_eq!(cl.list[0].root, t.root);
        assert_eq!(cl.list[0].nodes.len(), t.nodes.len());
    }

    #[test]
    fn indices_are_dense_and_decide_ancestry() {
        let g = test_gauges().remove(2);
        let mut rng = StdRng::seed_from_u64(5150);
        let pts: Vec<_> = (0..300)
            .map(|_| pt(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)))
            .collect();
        let t = build_net_tree(&g, &pts, 11).unwrap();
        let cl = partition_clusters(&t, 16);

        let mut seen_leaves = 0usize;
        for c in &cl.list {
            seen_leaves += c.leaves.len();
            let k = c.nodes.len() as u32;
            let mut pre: Vec<u32> = c.nodes.iter().map(|&v| cl.pre[v as usize]).collect();
            let mut post: Vec<u32> = c.nodes.iter().map(|&v| cl.post[v as usize]).collect();
            pre.sort_unstable();
            post.sort_unstable();
            assert_eq!(pre, (1..=k).collect::<Vec<_>>());
            assert_eq!(post, (1..=k).collect::<Vec<_>>());
            for &v in &c.nodes {
                assert_eq!(cl.of_node[v as usize], c.index - 1);
            }
        }
        assert_eq!(seen_leaves, pts.len());

        // Ancestry agrees with parent walks, inside and across clusters.
        let mut checked = 0;
        for _ in 0..4000 {
            let a = rng.random_range(0..t.nodes.len()) as NodeId;
            let b = rng.random_range(0..t.nodes.len()) as NodeId;
            if cl.of_node[a as usize] == NO_CLUSTER || cl.of_node[b as usize] == NO_CLUSTER {
                continue;
            }
            let mut walk_anc = false;
            let mut cur = Some(b);
            while let Some(v) = cur {
                if v == a {
                    walk_anc = true;
                    break;
                }
                cur = t.nodes[v as usize].parent;
            }
            let same = cl.of_node[a as usize] == cl.of_node[b as usize];
            assert_eq!(cl.is_ancestor(a, b), walk_anc && same, "a={a} b={b}");
            checked += 1;
        }
        assert!(checked > 1000);
    }

    #[test]
    fn nca_matches_naive_walk() {
        let g = test_gauges().remove(0);
        let mut rng = StdRng::seed_from_u64(616);
        // Well-separated clumps keep the early leaf batches inside large
        // subtrees, so the greedy rule yields several clusters before one
        // batch straddles a boundary and the tail collapses into one.
        let centers = [pt(-300.0, -300.0), pt(300.0, -280.0), pt(-280.0, 310.0), pt(290.0, 300.0)];
        let pts: Vec<_> = (0..256)
            .map(|i| {
                let c = centers[i % centers.len()];
                c + pt(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))
            })
            .collect();
        let t = build_net_tree(&g, &pts, 11).unwrap();
        let cl = partition_clusters(&t, 10);
        assert!(cl.list.len() >= 2, "expected plural clusters, got {}", cl.list.len());
        let mut depth = vec![0u32; t.nodes.len()];
        let mut stack = vec![t.root];
        while let Some(v) = stack.pop() {
            for &c in &t.nodes[v as usize].children {
                depth[c as usize] = depth[v as usize] + 1;
                stack.push(c);
            }
        }
        let mut inside = 0;
        let mut crossing = 0;
        for _ in 0..10_000 {
            let u = rng.random_range(0..t.nodes.len()) as NodeId;
            let v = rng.random_range(0..t.nodes.len()) as NodeId;
            let cu = cl.of_node[u as usize];
            let cv = cl.of_node[v as usize];
            if cu == NO_CLUSTER || cv == NO_CLUSTER {
                continue;
            }
            if cu != cv {
                assert_eq!(nca_query(&cl, u, v), Err(ClusterError::DifferentClusters { u, v }));
                crossing += 1;
                continue;
            }
            let got = nca_query(&cl, u, v).unwrap();
            let want = nca_walk(&t, &depth, u, v);
            assert_eq!(got, want, "u={u} v={v}");
            inside += 1;
        }
        assert!(inside > 500, "too few in-cluster pairs: {inside}");
        assert!(crossing > 100, "too few crossing pairs: {crossing} (clusters: {})", cl.list.len());
    }

    #[test]
    fn ancestors_in_caterpillar_nca() {
        let t = caterpillar(7);
        let cl = partition_clusters(&t, 3);
        // Cluster 2 holds leaves 3,4,5 and the spine above them.
        let l4 = t.leaf_of[3];
        let l5 = t.leaf_of[4];
        let n5 = t.nodes[l5 as usize].parent.unwrap();
        assert_eq!(nca_query(&cl, l4, l5).unwrap(), n5);
        assert_eq!(nca_query(&cl, n5, l4).unwrap(), n5);
        // Siblings in cluster 1.
        let (l1, l2) = (t.leaf_of[0], t.leaf_of[1]);
        let n2 = t.nodes[l1 as usize].parent.unwrap();
        assert_eq!(nca_query(&cl, l1, l2).unwrap(), n2);
        assert!(nca_query(&cl, l1, l4).is_err());
    }
}

//! Compression of a net-tree to a subset of its leaves: the minimal subtree
//! spanning the selected leaves with unary internal nodes bypassed.
//!
//! The skeleton above the cluster roots is copied wholesale; it survives any
//! valid selection because the selection must contain the representative leaf
//! of every cluster root. Inside each cluster the selected slot ranks are
//! sorted through the cluster's vEB set and the compressed piece is grown
//! with a stack over the rightmost path, splicing in nearest common
//! ancestors. Pocket slots (earlier clusters nested inside) are always
//! selected, which is exactly what keeps their attachment nodes alive.

use super::cluster::{Clusters, Slot, NO_CLUSTER};
use super::{NetTree, NodeId};
use crate::geom::Point;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompressError {
    #[error("selection misses the representative leaf of cluster {cluster} root")]
    MissingClusterRootRep { cluster: u32 },
    #[error("selected point {0} does not exist")]
    UnknownPoint(u32),
}

#[derive(Debug, Clone)]
pub struct CompNode {
    /// Net-tree node this one descends from.
    pub orig: NodeId,
    pub rep: u32,
    pub level: Option<i64>,
    pub parent: Option<u32>,
    pub children: Vec<u32>,
    /// Deterministic total order: (preorder within cluster, cluster index);
    /// skeleton nodes use the full-tree preorder and `NO_CLUSTER`.
    pub key: (u32, u32),
}

impl CompNode {
    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CompressedTree {
    pub tau: i64,
    /// Full point array of the source tree; representatives may fall outside
    /// the selected subset.
    pub points: Vec<Point>,
    pub nodes: Vec<CompNode>,
    pub root: u32,
    /// Compressed leaf per original point; `None` when unselected.
    pub leaf_comp: Vec<Option<u32>>,
}

impl CompressedTree {
    /// Number of leaves below each node.
    pub fn leaf_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.nodes.len()];
        // Children precede parents in reverse creation order only within
        // pieces; walk explicitly instead.
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            order.push(v);
            for &c in &self.nodes[v as usize].children {
                stack.push(c);
            }
        }
        for &v in order.iter().rev() {
            let node = &self.nodes[v as usize];
            counts[v as usize] = if node.is_leaf() {
                1
            } else {
                node.children.iter().map(|&c| counts[c as usize]).sum()
            };
        }
        counts
    }

    /// Point indices of the leaves under `u`, left to right.
    pub fn leaf_points(&self, u: u32) -> Vec<u32> {
        let mut out = Vec::new();
        let mut stack = vec![u];
        while let Some(v) = stack.pop() {
            let node = &self.nodes[v as usize];
            if node.is_leaf() {
                out.push(node.rep);
            }
            for &c in node.children.iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    /// Deterministic anchor inside `P_u`: the leftmost leaf's point.
    pub fn first_leaf_point(&self, u: u32) -> u32 {
        let mut v = u;
        while !self.nodes[v as usize].is_leaf() {
            v = self.nodes[v as usize].children[0];
        }
        self.nodes[v as usize].rep
    }

    /// Identity compression: the tree itself, relabeled. Net-trees have no
    /// unary internal nodes, so selecting every leaf changes nothing.
    pub fn from_full(t: &NetTree) -> CompressedTree {
        let pre = global_preorder(t);
        let mut nodes = Vec::with_capacity(t.nodes.len());
        let mut map = vec![u32::MAX; t.nodes.len()];
        let mut stack = vec![t.root];
        let mut order = Vec::with_capacity(t.nodes.len());
        while let Some(v) = stack.pop() {
            order.push(v);
            for &c in &t.nodes[v as usize].children {
                stack.push(c);
            }
        }
        for &v in &order {
            let n = &t.nodes[v as usize];
            map[v as usize] = nodes.len() as u32;
            nodes.push(CompNode {
                orig: v,
                rep: n.rep,
                level: n.level,
                parent: None,
                children: Vec::new(),
                key: (pre[v as usize], NO_CLUSTER),
            });
        }
        for &v in &order {
            let id = map[v as usize];
            let children: Vec<u32> =
                t.nodes[v as usize].children.iter().map(|&c| map[c as usize]).collect();
            for &c in &children {
                nodes[c as usize].parent = Some(id);
            }
            nodes[id as usize].children = children;
        }
        let mut leaf_comp = vec![None; t.points.len()];
        for (p, &leaf) in t.leaf_of.iter().enumerate() {
            leaf_comp[p] = Some(map[leaf as usize]);
        }
        CompressedTree {
            tau: t.tau,
            points: t.points.clone(),
            nodes,
            root: map[t.root as usize],
            leaf_comp,
        }
    }
}

fn global_preorder(t: &NetTree) -> Vec<u32> {
    let mut pre = vec![0u32; t.nodes.len()];
    let mut clock = 0u32;
    let mut stack = vec![t.root];
    while let Some(v) = stack.pop() {
        clock += 1;
        pre[v as usize] = clock;
        for &c in t.nodes[v as usize].children.iter().rev() {
            stack.push(c);
        }
    }
    pre
}

/// A piece node before global assembly.
#[derive(Debug, Clone)]
enum PieceNode {
    Orig(NodeId),
    Pocket(u32),
}

struct Piece {
    kind: Vec<PieceNode>,
    children: Vec<Vec<usize>>,
    root: usize,
}

pub fn compress_to_subset(
    t: &NetTree,
    cl: &mut Clusters,
    r: &[u32],
) -> Result<CompressedTree, CompressError> {
    let n = t.points.len();
    let mut in_r = vec![false; n];
    for &p in r {
        if p as usize >= n {
            return Err(CompressError::UnknownPoint(p));
        }
        in_r[p as usize] = true;
    }
    for c in &cl.list {
        let rep = t.nodes[c.root as usize].rep;
        if !in_r[rep as usize] {
            return Err(CompressError::MissingClusterRootRep { cluster: c.index });
        }
    }

    // Sort each cluster's selected slots through its vEB set and build the
    // piece with the rightmost-path stack.
    let mut pieces: Vec<Piece> = Vec::with_capacity(cl.list.len());
    for ci in 0..cl.list.len() {
        let seq = {
            let c = &mut cl.list[ci];
            for (rank, slot) in c.slots.iter().enumerate() {
                let take = match slot {
                    Slot::Pocket(_) => true,
                    Slot::Leaf(l) => in_r[t.nodes[*l as usize].rep as usize],
                };
                if take {
                    c.eb.insert(rank as u32);
                }
            }
            let mut seq = Vec::new();
            while let Some(rank) = c.eb.extract_min() {
                seq.push(rank);
            }
            debug_assert!(c.eb.is_empty());
            debug_assert!(!seq.is_empty(), "cluster root rep guarantees a slot");
            seq
        };
        let piece = build_piece(&cl.list[ci], &cl.pre, &cl.post, &seq);
        pieces.push(piece);
    }

    // Materialize pieces in formation order; pockets refer only to earlier
    // clusters, so their compressed roots already exist.
    let pre = global_preorder(t);
    let mut nodes: Vec<CompNode> = Vec::new();
    let mut piece_root: Vec<u32> = Vec::with_capacity(pieces.len());
    for (ci, piece) in pieces.iter().enumerate() {
        let root = materialize(t, cl, piece, ci as u32, &piece_root, &mut nodes);
        piece_root.push(root);
    }

    // Copy the skeleton and wire cluster roots under it.
    let mut skel_map = vec![u32::MAX; t.nodes.len()];
    let mut order = Vec::new();
    let mut stack = vec![t.root];
    while let Some(v) = stack.pop() {
        if cl.of_node[v as usize] != NO_CLUSTER {
            continue;
        }
        order.push(v);
        for &c in &t.nodes[v as usize].children {
            stack.push(c);
        }
    }
    for &v in &order {
        let nd = &t.nodes[v as usize];
        skel_map[v as usize] = nodes.len() as u32;
        nodes.push(CompNode {
            orig: v,
            rep: nd.rep,
            level: nd.level,
            parent: None,
            children: Vec::new(),
            key: (pre[v as usize], NO_CLUSTER),
        });
    }
    for &v in &order {
        let id = skel_map[v as usize];
        let mut children = Vec::new();
        for &c in &t.nodes[v as usize].children {
            let child = match cl.of_node[c as usize] {
                NO_CLUSTER => skel_map[c as usize],
                ci => {
                    debug_assert_eq!(cl.list[ci as usize].root, c);
                    piece_root[ci as usize]
                }
            };
            debug_assert!(nodes[child as usize].parent.is_none());
            nodes[child as usize].parent = Some(id);
            children.push(child);
        }
        nodes[id as usize].children = children;
    }

    let root = match cl.of_node[t.root as usize] {
        NO_CLUSTER => skel_map[t.root as usize],
        ci => piece_root[ci as usize],
    };
    let mut leaf_comp = vec![None; n];
    for (id, node) in nodes.iter().enumerate() {
        if node.is_leaf() {
            debug_assert!(in_r[node.rep as usize]);
            leaf_comp[node.rep as usize] = Some(id as u32);
        }
    }
    Ok(CompressedTree { tau: t.tau, points: t.points.clone(), nodes, root, leaf_comp })
}

/// Stack construction of one cluster's compressed piece from sorted slot
/// ranks: scan left to right, connect each slot through the NCA with its
/// predecessor, maintaining the rightmost root-to-leaf path on the stack.
fn build_piece(c: &super::cluster::Cluster, pre: &[u32], post: &[u32], seq: &[u32]) -> Piece {
    fn make(kind: &mut Vec<PieceNode>, children: &mut Vec<Vec<usize>>, k: PieceNode) -> usize {
        kind.push(k);
        children.push(Vec::new());
        kind.len() - 1
    }
    let slot_node = |rank: u32| -> PieceNode {
        match c.slots[rank as usize] {
            Slot::Leaf(l) => PieceNode::Orig(l),
            Slot::Pocket(ci) => PieceNode::Pocket(ci),
        }
    };
    let strict_ancestor = |o: NodeId, x: NodeId| -> bool {
        o != x && pre[o as usize] <= pre[x as usize] && post[o as usize] >= post[x as usize]
    };

    let mut kind: Vec<PieceNode> = Vec::new();
    let mut children: Vec<Vec<usize>> = Vec::new();
    let mut root = make(&mut kind, &mut children, slot_node(seq[0]));
    let mut stack = vec![root];
    for win in seq.windows(2) {
        let (prev, q) = (win[0], win[1]);
        let x = c.nca_slots(prev, q);
        let q_id = make(&mut kind, &mut children, slot_node(q));
        let mut last_popped = None;
        loop {
            match stack.last() {
                None => {
                    // x becomes the new root over the old one.
                    let x_id = make(&mut kind, &mut children, PieceNode::Orig(x));
                    children[x_id].push(root);
                    children[x_id].push(q_id);
                    root = x_id;
                    stack.push(x_id);
                    stack.push(q_id);
                    break;
                }
                Some(&top) => {
                    let is_x = matches!(kind[top], PieceNode::Orig(o) if o == x);
                    if is_x {
                        children[top].push(q_id);
                        stack.push(q_id);
                        break;
                    }
                    let is_anc =
                        matches!(kind[top], PieceNode::Orig(o) if strict_ancestor(o, x));
                    if is_anc {
                        // Splice x between top and the node just popped.
                        let y = last_popped.expect("first stack top is never an ancestor");
                        let x_id = make(&mut kind, &mut children, PieceNode::Orig(x));
                        let slot = children[top]
                            .iter()
                            .position(|&ch| ch == y)
                            .expect("y was top's rightmost child");
                        children[top][slot] = x_id;
                        children[x_id].push(y);
                        children[x_id].push(q_id);
                        stack.push(x_id);
                        stack.push(q_id);
                        break;
                    }
                    last_popped = Some(stack.pop().unwrap());
                }
            }
        }
    }
    Piece { kind, children, root }
}

/// Expands one piece into compressed nodes; pockets resolve to the already
/// materialized roots of earlier clusters.
fn materialize(
    t: &NetTree,
    cl: &Clusters,
    piece: &Piece,
    ci: u32,
    piece_root: &[u32],
    nodes: &mut Vec<CompNode>,
) -> u32 {
    let mut map = vec![u32::MAX; piece.kind.len()];
    let mut order = Vec::with_capacity(piece.kind.len());
    let mut stack = vec![piece.root];
    while let Some(p) = stack.pop() {
        order.push(p);
        for &c in &piece.children[p] {
            stack.push(c);
        }
    }
    for &p in &order {
        map[p] = match piece.kind[p] {
            PieceNode::Orig(o) => {
                let nd = &t.nodes[o as usize];
                let id = nodes.len() as u32;
                nodes.push(CompNode {
                    orig: o,
                    rep: nd.rep,
                    level: nd.level,
                    parent: None,
                    children: Vec::new(),
                    key: (cl.pre[o as usize], ci),
                });
                id
            }
            PieceNode::Pocket(cj) => piece_root[cj as usize],
        };
    }
    for &p in &order {
        if matches!(piece.kind[p], PieceNode::Pocket(_)) {
            debug_assert!(piece.children[p].is_empty());
            continue;
        }
        let id = map[p];
        let children: Vec<u32> = piece.children[p].iter().map(|&c| map[c]).collect();
        for &c in &children {
            debug_assert!(nodes[c as usize].parent.is_none());
            nodes[c as usize].parent = Some(id);
        }
        nodes[id as usize].children = children;
    }
    map[piece.root]
}

//! Voronoi diagrams of point sites under a convex gauge distance.
//!
//! A diagram always carries a ring of dummy sites on the frame polygon, so
//! every real site's cell is bounded; dummy cells are truncated by the world
//! box. Cell boundaries are stored as closed counterclockwise cycles of
//! straight segments: bisector bends are first-class vertices, so every arc
//! between consecutive vertices lies on a single linear piece of a bisector
//! or on a wall.
//!
//! Vertices are identified by construction-order-independent keys: the sorted
//! site triple plus the fan cones that pin down which circumscribing solution
//! it is, or the canonical bend / wall-crossing index of a bisector piece.
//! Every key also determines the exact rational position of its vertex, which
//! is what predicates fall back to when floating point toleranced comparisons
//! are inconclusive.

pub mod build;
pub mod clip;
pub mod conflict;
pub mod ops;
pub mod pred;
pub mod svg;

use crate::gauge::frame::BoundingFrame;
use crate::gauge::ConvexGauge;
use crate::geom::{pt, Point};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub type SiteId = u32;
pub type VertId = u32;

pub const NO_VERT: VertId = u32::MAX;

/// Construction-order-independent identity of a diagram vertex.
///
/// `cones[i]` is the fan cone (in the unit polygon) of `v - sites[i]`, which
/// distinguishes multiple circumscribing homothets of the same site triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VertKey {
    Three { sites: [SiteId; 3], cones: [u8; 3] },
    /// Bend `k` (canonical index) of the bisector of the sorted pair.
    Bend { pair: [SiteId; 2], k: i32 },
    /// Crossing of canonical piece `piece` of the pair's bisector with a wall.
    WallX { pair: [SiteId; 2], side: u8, piece: i32 },
    /// World box corner shared by walls `side` and `side + 1 mod 4`.
    Corner { side: u8 },
}

impl VertKey {
    pub fn sites(&self) -> &[SiteId] {
        match self {
            VertKey::Three { sites, .. } => sites,
            VertKey::Bend { pair, .. } => pair,
            VertKey::WallX { pair, .. } => pair,
            VertKey::Corner { .. } => &[],
        }
    }
}

/// Recipe for recomputing the exact position of a vertex. Cone indices are
/// stored for the concrete bisector piece the vertex was found on; for sorted
/// pair `[a, b]`, `cones.0` belongs to `a` and `cones.1` to `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExactSpec {
    /// Solvable from the key alone (site triple plus cones).
    Three,
    /// Piece `(cones)` of the pair bisector crossed with the fan ray `ray` of
    /// the first (`true`) or second (`false`) site of the sorted pair.
    Bend { cones: (u8, u8), ray_of_first: bool, ray: u8 },
    /// Piece `(cones)` of the pair bisector crossed with wall `side`.
    WallX { cones: (u8, u8), side: u8 },
    Corner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexRec {
    pub key: VertKey,
    pub spec: ExactSpec,
    pub pos: Point,
    /// Conservative absolute error bound on `pos`.
    pub err: f64,
    /// Number of cell boundaries referencing this vertex.
    pub refs: u32,
}

/// What lies on the far side of a boundary arc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Edge {
    Site(SiteId),
    Wall(u8),
}

/// Boundary arc starting at vertex `v` and running to the next arc's vertex.
/// For site arcs, `cone_own` / `cone_other` are the fan cones of `z - owner`
/// and `z - other` on the arc's interior (constant since bends are vertices).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub v: VertId,
    pub edge: Edge,
    pub cone_own: u8,
    pub cone_other: u8,
}

/// Closed counterclockwise boundary of one cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Cell {
    pub arcs: Vec<Arc>,
}

impl Cell {
    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    /// Site neighbors in boundary order, deduplicated, sorted.
    pub fn neighbor_sites(&self) -> Vec<SiteId> {
        let mut out: Vec<SiteId> = self
            .arcs
            .iter()
            .filter_map(|a| match a.edge {
                Edge::Site(s) => Some(s),
                Edge::Wall(_) => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "DiagramData", into = "DiagramData")]
pub struct Diagram {
    pub gauge: ConvexGauge,
    pub frame: BoundingFrame,
    /// Dummy sites first (`0..dummy_count`), then the real sites.
    pub sites: Vec<Point>,
    pub dummy_count: usize,
    /// Cell per site id; `None` while the site is not inserted.
    pub cells: Vec<Option<Cell>>,
    pub verts: Vec<Option<VertexRec>>,
    free_verts: Vec<VertId>,
    #[serde(skip)]
    vert_index: HashMap<VertKey, VertId>,
    /// Running count of vertex records created (not reference bumps).
    /// Not serialized; a deserialized diagram starts at zero.
    #[serde(skip)]
    pub creations: u64,
}

#[derive(Serialize, Deserialize)]
struct DiagramData {
    gauge: ConvexGauge,
    frame: BoundingFrame,
    sites: Vec<Point>,
    dummy_count: usize,
    cells: Vec<Option<Cell>>,
    verts: Vec<Option<VertexRec>>,
    free_verts: Vec<VertId>,
}

impl From<DiagramData> for Diagram {
    fn from(d: DiagramData) -> Diagram {
        let mut idx = HashMap::new();
        for (i, v) in d.verts.iter().enumerate() {
            if let Some(rec) = v {
                idx.insert(rec.key, i as VertId);
            }
        }
        Diagram {
            gauge: d.gauge,
            frame: d.frame,
            sites: d.sites,
            dummy_count: d.dummy_count,
            cells: d.cells,
            verts: d.verts,
            free_verts: d.free_verts,
            vert_index: idx,
            creations: 0,
        }
    }
}

impl From<Diagram> for DiagramData {
    fn from(d: Diagram) -> DiagramData {
        DiagramData {
            gauge: d.gauge,
            frame: d.frame,
            sites: d.sites,
            dummy_count: d.dummy_count,
            cells: d.cells,
            verts: d.verts,
            free_verts: d.free_verts,
        }
    }
}

impl Diagram {
    /// Empty diagram over a fixed site universe: frame dummies first, then
    /// `real`. No cells yet; callers insert sites (dummies are inserted by
    /// the standard constructors in `build`).
    pub fn empty(gauge: ConvexGauge, frame: BoundingFrame, real: &[Point]) -> Diagram {
        let mut sites = frame.dummies.clone();
        let dummy_count = sites.len();
        sites.extend_from_slice(real);
        let cells = vec![None; sites.len()];
        Diagram {
            gauge,
            frame,
            sites,
            dummy_count,
            cells,
            verts: Vec::new(),
            free_verts: Vec::new(),
            vert_index: HashMap::new(),
            creations: 0,
        }
    }

    #[inline]
    pub fn site(&self, id: SiteId) -> Point {
        self.sites[id as usize]
    }

    #[inline]
    pub fn is_dummy(&self, id: SiteId) -> bool {
        (id as usize) < self.dummy_count
    }

    #[inline]
    pub fn is_present(&self, id: SiteId) -> bool {
        self.cells[id as usize].is_some()
    }

    pub fn present_sites(&self) -> impl Iterator<Item = SiteId> + '_ {
        (0..self.sites.len() as SiteId).filter(|&i| self.is_present(i))
    }

    pub fn present_real_sites(&self) -> impl Iterator<Item = SiteId> + '_ {
        (self.dummy_count as SiteId..self.sites.len() as SiteId).filter(|&i| self.is_present(i))
    }

    #[inline]
    pub fn cell(&self, id: SiteId) -> &Cell {
        self.cells[id as usize].as_ref().expect("site not inserted")
    }

    #[inline]
    pub fn vert(&self, v: VertId) -> &VertexRec {
        self.verts[v as usize].as_ref().expect("stale vertex id")
    }

    pub fn vert_by_key(&self, key: &VertKey) -> Option<VertId> {
        self.vert_index.get(key).copied()
    }

    pub fn live_verts(&self) -> impl Iterator<Item = (VertId, &VertexRec)> + '_ {
        self.verts
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.as_ref().map(|rec| (i as VertId, rec)))
    }

    pub fn neighbors(&self, id: SiteId) -> Vec<SiteId> {
        self.cell(id).neighbor_sites()
    }

    /// Interns a vertex, bumping its reference count.
    pub(crate) fn intern_vert(&mut self, key: VertKey, spec: ExactSpec, pos: Point, err: f64) -> VertId {
        if let Some(&id) = self.vert_index.get(&key) {
            let rec = self.verts[id as usize].as_mut().expect("index points at live vertex");
            rec.refs += 1;
            debug_assert!(
                (rec.pos - pos).norm_inf() <= 1e-6 * (1.0 + pos.norm_inf()),
                "key {key:?} reinterned at a different position: {:?} vs {pos:?}",
                rec.pos
            );
            return id;
        }
        let rec = VertexRec { key, spec, pos, err, refs: 1 };
        self.creations += 1;
        let id = match self.free_verts.pop() {
            Some(id) => {
                self.verts[id as usize] = Some(rec);
                id
            }
            None => {
                self.verts.push(Some(rec));
                (self.verts.len() - 1) as VertId
            }
        };
        self.vert_index.insert(key, id);
        id
    }

    /// Adds a reference to an already-live vertex.
    pub(crate) fn retain_vert(&mut self, id: VertId) {
        self.verts[id as usize].as_mut().expect("retain of dead vertex").refs += 1;
    }

    pub(crate) fn release_vert(&mut self, id: VertId) {
        let rec = self.verts[id as usize].as_mut().expect("release of dead vertex");
        rec.refs -= 1;
        if rec.refs == 0 {
            let key = rec.key;
            self.verts[id as usize] = None;
            self.vert_index.remove(&key);
            self.free_verts.push(id);
        }
    }

    /// Replaces a cell boundary, maintaining vertex reference counts.
    /// `None` removes the cell.
    pub(crate) fn set_cell(&mut self, id: SiteId, cell: Option<Cell>) {
        if let Some(old) = self.cells[id as usize].take() {
            for arc in &old.arcs {
                self.release_vert(arc.v);
            }
        }
        // New boundaries arrive with refcounts already bumped by interning.
        self.cells[id as usize] = cell;
    }

    /// World box corners in counterclockwise order; corner `i` joins wall `i`
    /// and wall `i + 1 mod 4`. Wall `i` runs corner `i - 1` to corner `i`.
    pub fn corner(&self, side: u8) -> Point {
        let w = self.frame.world;
        match side % 4 {
            0 => pt(w, -w),
            1 => pt(w, w),
            2 => pt(-w, w),
            _ => pt(-w, -w),
        }
    }

    /// Site triples of all three-site vertices, each sorted, list sorted.
    pub fn triangulate(&self) -> Vec<[SiteId; 3]> {
        let mut out: Vec<[SiteId; 3]> = self
            .live_verts()
            .filter_map(|(_, rec)| match rec.key {
                VertKey::Three { sites, .. } => Some(sites),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Fan triangle of the triangulated diagram containing `x`: the owning
    /// cell plus the arc index whose wedge `(site, v_j, v_{j+1})` holds `x`.
    ///
    /// Canonical under ties: location falls back to the lowest equidistant
    /// site, and a point on a fan edge goes to the first containing wedge in
    /// cycle order. Both resolutions depend only on the diagram, not on the
    /// hint, so independent callers agree on the answer.
    pub fn triangle_of(&self, hint: SiteId, x: Point) -> (SiteId, usize) {
        let owner = match self.locate_from(hint, x) {
            Ok(s) => s,
            Err(_) => self.locate_lowest(hint, x),
        };
        let cell = self.cell(owner);
        let s = self.site(owner);
        let m = cell.arcs.len();
        let mut best = 0usize;
        let mut best_pen = f64::INFINITY;
        for j in 0..m {
            let a = self.vert(cell.arcs[j].v).pos;
            let b = self.vert(cell.arcs[(j + 1) % m].v).pos;
            // Worst signed-area deficit over the wedge's three sides,
            // normalized; nonpositive means inside.
            let scale = (a - s).norm_inf().max((b - s).norm_inf()).max(1e-300);
            let pen = [(s, a), (a, b), (b, s)]
                .iter()
                .map(|&(p, q)| -(q - p).cross(x - p) / scale)
                .fold(f64::NEG_INFINITY, f64::max);
            if pen <= 0.0 {
                return (owner, j);
            }
            if pen < best_pen {
                best_pen = pen;
                best = j;
            }
        }
        debug_assert!(
            best_pen <= 1e-7 * (1.0 + x.norm_inf()),
            "point {x:?} outside every wedge of its own cell {owner} (deficit {best_pen})"
        );
        (owner, best)
    }

    /// Vertex ids of the fan triangle `(owner, j)`.
    pub fn triangle_verts(&self, owner: SiteId, j: usize) -> (VertId, VertId) {
        let cell = self.cell(owner);
        (cell.arcs[j].v, cell.arcs[(j + 1) % cell.arcs.len()].v)
    }

    /// Structural equality: same present sites, same vertex key set with
    /// positions within tolerance, same boundary cycles up to rotation.
    pub fn combinatorial_equal(&self, other: &Diagram) -> bool {
        self.diff(other).is_none()
    }

    /// First structural difference, described; `None` when equal.
    pub fn diff(&self, other: &Diagram) -> Option<String> {
        let mine: Vec<SiteId> = self.present_sites().collect();
        let theirs: Vec<SiteId> = other.present_sites().collect();
        if mine != theirs {
            return Some(format!("present sites differ: {} vs {}", mine.len(), theirs.len()));
        }
        let mut my_keys: Vec<(VertKey, Point)> = self.live_verts().map(|(_, r)| (r.key, r.pos)).collect();
        let mut their_keys: Vec<(VertKey, Point)> = other.live_verts().map(|(_, r)| (r.key, r.pos)).collect();
        my_keys.sort_by(|a, b| a.0.cmp(&b.0));
        their_keys.sort_by(|a, b| a.0.cmp(&b.0));
        if my_keys.len() != their_keys.len() {
            return Some(format!("vertex counts differ: {} vs {}", my_keys.len(), their_keys.len()));
        }
        for ((ka, pa), (kb, pb)) in my_keys.iter().zip(&their_keys) {
            if ka != kb {
                return Some(format!("vertex keys diverge: {ka:?} vs {kb:?}"));
            }
            let tol = 1e-9 * (1.0 + pa.norm_inf().max(pb.norm_inf()));
            if (*pa - *pb).norm_inf() > tol {
                return Some(format!("vertex {ka:?} moved: {pa:?} vs {pb:?}"));
            }
        }
        for s in mine {
            let ca = self.cycle_keys(s);
            let cb = other.cycle_keys(s);
            if ca != cb {
                return Some(format!("cell {s} boundary differs:\n  {ca:?}\n  {cb:?}"));
            }
        }
        None
    }

    /// Boundary cycle as (vertex key, edge) pairs, rotated to the smallest.
    fn cycle_keys(&self, s: SiteId) -> Vec<(VertKey, Edge)> {
        let cell = self.cell(s);
        let seq: Vec<(VertKey, Edge)> = cell.arcs.iter().map(|a| (self.vert(a.v).key, a.edge)).collect();
        rotate_min(seq)
    }

    /// Total boundary complexity (sum of arc counts over present cells).
    pub fn complexity(&self) -> usize {
        self.cells.iter().flatten().map(|c| c.arcs.len()).sum()
    }

    /// Signed area of a cell (positive for the counterclockwise boundaries
    /// the construction maintains).
    pub fn cell_area(&self, id: SiteId) -> f64 {
        let cell = self.cell(id);
        let n = cell.arcs.len();
        let mut s = 0.0;
        for i in 0..n {
            let p = self.vert(cell.arcs[i].v).pos;
            let q = self.vert(cell.arcs[(i + 1) % n].v).pos;
            s += p.cross(q);
        }
        s / 2.0
    }
}

/// Rotates a cyclic sequence to start at its minimum element.
pub(crate) fn rotate_min<T: Ord + Clone>(seq: Vec<T>) -> Vec<T> {
    if seq.is_empty() {
        return seq;
    }
    let k = (0..seq.len())
        .min_by(|&i, &j| {
            let a = seq[i..].iter().chain(&seq[..i]);
            let b = seq[j..].iter().chain(&seq[..j]);
            a.cmp(b)
        })
        .unwrap();
    let mut out = Vec::with_capacity(seq.len());
    out.extend_from_slice(&seq[k..]);
    out.extend_from_slice(&seq[..k]);
    out
}

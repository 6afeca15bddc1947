//! Training phase: sample harvesting, the site net S, triangulated
//! Vor_Q(S), point-location structures, the net-tree with clusters, the
//! m^2-division with its boundary-site diagram Vor_Q(B), and the trained
//! model that the operation phase consumes.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gauge::frame::BoundingFrame;
use crate::gauge::{ConvexGauge, GaugeError};
use crate::geom::{pt, Point};
use crate::loc::{all_triangles, build_li, build_ls, tri_corners, LocateError, Locator, TriId};
use crate::mix::MixtureModel;
use crate::net::cluster::{partition_clusters, Clusters};
use crate::net::{build_net_tree, NetTree, NetTreeError};
use crate::vor::build::{prepare, BuildError};
use crate::vor::conflict::{ConflictScratch, VertexGraph};
use crate::vor::{Diagram, SiteId, VertId, VertKey};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_TAU: i64 = 11;
pub const DEFAULT_NET_OVERSAMPLE: f64 = 4.0;
/// Gate on the fresh-instance mean of sum_v |Z_v|^2 / n after training.
pub const DEFAULT_ZSQ_GATE: f64 = 50.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("m^2 = {} exceeds n = {n}; the division needs m = o(sqrt n)", m * m)]
    MTooLarge { m: usize, n: usize },
    #[error("epsilon {0} outside (0, 1)")]
    BadEpsilon(f64),
    #[error("gauge rejected the mixture frame: {0}")]
    Frame(#[from] GaugeError),
    #[error("site diagram construction failed: {0}")]
    Build(#[from] BuildError),
    #[error("net tree construction failed: {0}")]
    NetTree(#[from] NetTreeError),
    #[error("conflict-load gate failed after {retries} redraws: mean {mean:.3} > gate {gate}")]
    ZsqGate { mean: f64, gate: f64, retries: u32 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epsilon: f64,
    pub tau: i64,
    /// c0 in the net sample size ceil(c0 * mn * ln(mn)).
    pub net_oversample: f64,
    pub seed: u64,
    pub zsq_gate: f64,
    /// Fresh instances drawn for the post-training conflict-load check.
    pub zsq_instances: usize,
    /// Allowed S redraws when the check fails.
    pub redraws: u32,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epsilon: DEFAULT_EPSILON,
            tau: DEFAULT_TAU,
            net_oversample: DEFAULT_NET_OVERSAMPLE,
            seed: 0,
            zsq_gate: DEFAULT_ZSQ_GATE,
            zsq_instances: 200,
            redraws: 3,
        }
    }
}

/// Instance coordinates pooled column-wise: one batch of ceil(m ln(mn))
/// instances contributes its first coordinates, the next batch its second
/// coordinates, and so on through index n.
pub fn harvest_samples(mix: &MixtureModel, rng: &mut impl Rng) -> Vec<Point> {
    let mn = (mix.m * mix.n) as f64;
    let batch = ((mix.m as f64) * mn.ln()).ceil().max(1.0) as usize;
    let mut x = Vec::with_capacity(mix.n * batch);
    for j in 0..mix.n {
        for _ in 0..batch {
            x.push(mix.sample_instance(rng)[j]);
        }
    }
    x
}

/// Site net: a uniform sample of ceil(c0 * mn * ln(mn)) points of `x`
/// without replacement (all of `x` when the quota exceeds it), deduplicated.
/// With the default c0 the quota always exceeds |x| = mn ln(mn), so S is the
/// whole harvest; smaller c0 trades net quality for size.
pub fn build_eps_net(
    x: &[Point],
    m: usize,
    n: usize,
    c0: f64,
    rng: &mut impl Rng,
) -> Vec<Point> {
    let mn = (m * n) as f64;
    let quota = (c0 * mn * mn.ln()).ceil().max(1.0) as usize;
    let mut picked: Vec<Point> = if quota >= x.len() {
        x.to_vec()
    } else {
        rand::seq::index::sample(rng, x.len(), quota).iter().map(|i| x[i]).collect()
    };
    picked.sort_by(|a, b| a.lex_key().partial_cmp(&b.lex_key()).unwrap());
    picked.dedup();
    picked
}

/// Canonical fan triangle of `d` containing `p`: the locator answer when the
/// point is strictly interior to it, the deterministic wedge walk otherwise,
/// so boundary points resolve identically everywhere.
pub fn canonical_triangle(d: &Diagram, hint: SiteId, p: Point) -> TriId {
    let (s, j) = d.triangle_of(hint, p);
    (s, j as u32)
}

fn strictly_inside(c: &[Point; 3], q: Point) -> bool {
    (0..3).all(|e| (c[(e + 1) % 3] - c[e]).cross(q - c[e]) > 0.0)
}

/// Locator answer canonicalized: exact interior hits stand, anything else
/// (boundary, miss) re-resolves through the wedge walk.
pub fn canonicalize_hit(d: &Diagram, hit: Option<TriId>, p: Point) -> TriId {
    if let Some(t) = hit {
        let c = tri_corners(d, t);
        if strictly_inside(&c, p) {
            return t;
        }
        return canonical_triangle(d, t.0, p);
    }
    let hint = d.present_sites().next().expect("dummy cells always present");
    canonical_triangle(d, hint, p)
}

/// Per-index distribution-sensitive locator: positive-frequency triangles
/// weighted by max(floor, estimated probability), floor = (mn)^(-epsilon).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistLocator {
    /// Positive observation counts per triangle, sorted by triangle id.
    pub counts: Vec<(TriId, u32)>,
    /// Instances observed; sum of counts equals this exactly.
    pub total: u32,
    pub floor: f64,
    /// W_i: total weight over the kept triangles.
    pub w_total: f64,
    pub locator: Locator,
}

impl DistLocator {
    pub fn weight(&self, t: TriId) -> f64 {
        match self.counts.binary_search_by_key(&t, |&(id, _)| id) {
            Ok(i) => (self.counts[i].1 as f64 / self.total as f64).max(self.floor),
            Err(_) => 0.0,
        }
    }

    pub fn locate(&self, q: Point) -> Result<(Option<TriId>, u32), LocateError> {
        self.locator.locate(q)
    }
}

/// Triangle hit counts per instance index over `count` fresh instances.
/// Counts are integers so the per-index ratios sum to one exactly.
pub fn estimate_frequencies(
    vor_s: &Diagram,
    mix: &MixtureModel,
    count: u32,
    rng: &mut impl Rng,
) -> Vec<Vec<(TriId, u32)>> {
    let hint = vor_s.present_sites().next().expect("dummies present");
    let mut tables: Vec<HashMap<TriId, u32>> = vec![HashMap::new(); mix.n];
    for _ in 0..count {
        let inst = mix.sample_instance(rng);
        for (i, &p) in inst.iter().enumerate() {
            let t = canonical_triangle(vor_s, hint, p);
            *tables[i].entry(t).or_insert(0) += 1;
        }
    }
    tables
        .into_iter()
        .map(|t| {
            let mut v: Vec<(TriId, u32)> = t.into_iter().collect();
            v.sort_unstable_by_key(|&(id, _)| id);
            v
        })
        .collect()
}

/// Builds the weighted locator for one instance index from its counts.
pub fn build_index_locator(
    vor_s: &Diagram,
    counts: Vec<(TriId, u32)>,
    total: u32,
    floor: f64,
    seed: u64,
) -> DistLocator {
    let kept: Vec<(TriId, f64)> = counts
        .iter()
        .map(|&(t, c)| (t, (c as f64 / total as f64).max(floor)))
        .collect();
    let w_total: f64 = kept.iter().map(|&(_, w)| w).sum();
    let locator = build_li(vor_s, &kept, seed);
    DistLocator { counts, total, floor, w_total, locator }
}

/// One boundary vertex of a region, with its twin in Vor_Q(B) whose
/// clearance homothet (empty of B) drives the arrangement tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryVert {
    pub vs: VertId,
    pub vb: VertId,
    /// Lowest cell of `vb` in Vor_Q(B); reference site for the clearance.
    pub owner_b: SiteId,
}

/// Bucket grid over the boundary homothets of one region. Buckets hold
/// indices into the region's boundary list whose homothet bounding box
/// touches the cell; the exact conflict test decides membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearGrid {
    pub lo: Point,
    pub cell: f64,
    pub nx: u32,
    pub ny: u32,
    pub buckets: Vec<Vec<u32>>,
}

impl ClearGrid {
    fn cell_of(&self, q: Point) -> Option<usize> {
        let ix = ((q.x - self.lo.x) / self.cell).floor();
        let iy = ((q.y - self.lo.y) / self.cell).floor();
        if ix < 0.0 || iy < 0.0 || ix >= self.nx as f64 || iy >= self.ny as f64 {
            return None;
        }
        Some(iy as usize * self.nx as usize + ix as usize)
    }

    /// Candidate boundary indices for `q`; a superset of the true
    /// conflicting set, empty when `q` misses every homothet box.
    pub fn candidates(&self, q: Point) -> &[u32] {
        match self.cell_of(q) {
            Some(c) => &self.buckets[c],
            None => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: u32,
    /// Vor_Q(S) vertex ids in the region, sorted.
    pub verts: Vec<VertId>,
    /// Region-boundary vertices: shared with another region or on a wall.
    pub boundary: Vec<BoundaryVert>,
    /// Shared (separator) boundary count, the part the O(m) bound governs.
    pub shared_boundary: u32,
    /// Fan triangles with a vertex in the region.
    pub tris: Vec<TriId>,
    /// Uniform locator over `tris`; None answers mean "outside the region".
    pub interior: Locator,
    pub grid: ClearGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Division {
    pub regions: Vec<Region>,
    /// First region containing each Vor_Q(S) vertex; u32::MAX on dead slots.
    pub region_of_vert: Vec<u32>,
}

pub const NO_REGION: u32 = u32::MAX;

fn is_wall_vert(key: &VertKey) -> bool {
    matches!(key, VertKey::WallX { .. } | VertKey::Corner { .. })
}

/// Connected components of `piece` under `adj`, each sorted.
fn components(adj: &[Vec<VertId>], piece: &[VertId]) -> Vec<Vec<VertId>> {
    let inside: HashMap<VertId, bool> = piece.iter().map(|&v| (v, false)).collect();
    let mut seen = inside;
    let mut out = Vec::new();
    for &start in piece {
        if seen[&start] {
            continue;
        }
        let mut comp = vec![start];
        *seen.get_mut(&start).unwrap() = true;
        let mut head = 0;
        while head < comp.len() {
            let v = comp[head];
            head += 1;
            for &w in &adj[v as usize] {
                if let Some(flag) = seen.get_mut(&w) {
                    if !*flag {
                        *flag = true;
                        comp.push(w);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Splits one connected piece along a middle BFS level. Both sides keep the
/// cut level, so separator vertices are shared; both sides are strictly
/// smaller. Falls back to an id-halving when the BFS is too shallow to cut.
fn bfs_split(adj: &[Vec<VertId>], piece: &[VertId]) -> (Vec<VertId>, Vec<VertId>) {
    let mut level: HashMap<VertId, u32> = HashMap::new();
    let mut order = vec![piece[0]];
    level.insert(piece[0], 0);
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        let lv = level[&v];
        for &w in &adj[v as usize] {
            if piece.binary_search(&w).is_ok() && !level.contains_key(&w) {
                level.insert(w, lv + 1);
                order.push(w);
            }
        }
    }
    debug_assert_eq!(order.len(), piece.len(), "piece must be connected");
    let lmax = *level.values().max().unwrap();
    if lmax < 2 {
        let mid = piece.len() / 2;
        return (piece[..mid].to_vec(), piece[mid..].to_vec());
    }
    // Level of the median vertex, clamped so both strict sides are nonempty.
    let mut counts = vec![0usize; lmax as usize + 1];
    for &l in level.values() {
        counts[l as usize] += 1;
    }
    let half = piece.len() / 2;
    let mut acc = 0;
    let mut cut = 1;
    for (l, &c) in counts.iter().enumerate() {
        acc += c;
        if acc > half {
            cut = (l as u32).clamp(1, lmax - 1);
            break;
        }
    }
    let mut a: Vec<VertId> = piece.iter().copied().filter(|v| level[v] <= cut).collect();
    let mut b: Vec<VertId> = piece.iter().copied().filter(|v| level[v] >= cut).collect();
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// Vertex sets of the division: recursive BFS-level separators until every
/// region has at most max(m^2, 4) vertices, then a bounded number of extra
/// splits on regions whose shared boundary exceeds 4m.
fn division_pieces(adj: &[Vec<VertId>], live: Vec<VertId>, m: usize) -> Vec<Vec<VertId>> {
    let cap = (m * m).max(4);
    let mut stack = components(adj, &live);
    let mut regions: Vec<Vec<VertId>> = Vec::new();
    while let Some(p) = stack.pop() {
        if p.len() <= cap {
            regions.push(p);
            continue;
        }
        // The far side of a previous level cut can be disconnected.
        let comps = components(adj, &p);
        if comps.len() > 1 {
            stack.extend(comps);
            continue;
        }
        let (a, b) = bfs_split(adj, &p);
        stack.push(a);
        stack.push(b);
    }

    let bcap = 4 * m.max(1);
    for _round in 0..4 {
        let mut membership: HashMap<VertId, u32> = HashMap::new();
        for r in &regions {
            for &v in r {
                *membership.entry(v).or_insert(0) += 1;
            }
        }
        let mut next: Vec<Vec<VertId>> = Vec::new();
        let mut split_any = false;
        for r in regions {
            let shared = r.iter().filter(|v| membership[v] >= 2).count();
            if shared > bcap && r.len() > 4 {
                let comps = components(adj, &r);
                if comps.len() > 1 {
                    next.extend(comps);
                } else {
                    let (a, b) = bfs_split(adj, &r);
                    next.push(a);
                    next.push(b);
                }
                split_any = true;
            } else {
                next.push(r);
            }
        }
        regions = next;
        if !split_any {
            break;
        }
    }
    regions.sort();
    regions
}

/// Builds the m^2-division of `vor_s`, the boundary-site subset B, the
/// diagram Vor_Q(B) with per-vertex "also in Vor_Q(S)" labels, and the
/// per-region interior locators and clearance-homothet grids.
pub fn build_m2_division(
    vor_s: &Diagram,
    m: usize,
    seed: u64,
) -> Result<(Division, Vec<SiteId>, Diagram, Vec<bool>), TrainError> {
    let graph = vor_s.vertex_graph();
    let live: Vec<VertId> = vor_s.live_verts().map(|(v, _)| v).collect();
    let pieces = division_pieces(&graph.adj, live, m);

    let mut region_of_vert = vec![NO_REGION; vor_s.verts.len()];
    let mut membership: HashMap<VertId, u32> = HashMap::new();
    for (ri, r) in pieces.iter().enumerate() {
        for &v in r {
            *membership.entry(v).or_insert(0) += 1;
            let slot = &mut region_of_vert[v as usize];
            if *slot == NO_REGION {
                *slot = ri as u32;
            }
        }
    }

    // Boundary: separator vertices plus wall vertices; the world walls close
    // every region like an outer separator.
    let boundary_sets: Vec<Vec<VertId>> = pieces
        .iter()
        .map(|r| {
            r.iter()
                .copied()
                .filter(|&v| {
                    membership[&v] >= 2
                        || is_wall_vert(&vor_s.vert(v).key)
                        || graph.adj[v as usize]
                            .iter()
                            .any(|w| region_of_vert[*w as usize] == NO_REGION)
                })
                .collect()
        })
        .collect();

    let mut b_sites: Vec<SiteId> = boundary_sets
        .iter()
        .flatten()
        .flat_map(|&v| graph.cells[v as usize].iter().copied())
        .filter(|&s| !vor_s.is_dummy(s))
        .collect();
    b_sites.sort_unstable();
    b_sites.dedup();

    let vor_b = crate::vor::ops::rebuild_subset(vor_s, &b_sites)
        .map_err(|tie| BuildError::Unresolvable { attempts: 0, last: tie })?;
    let graph_b = vor_b.vertex_graph();
    let vb_in_vs: Vec<bool> = vor_b
        .verts
        .iter()
        .map(|slot| {
            slot.as_ref().map_or(false, |rec| vor_s.vert_by_key(&rec.key).is_some())
        })
        .collect();

    // Triangles attach to every region holding one of their two base verts.
    let mut tris_of: Vec<Vec<TriId>> = vec![Vec::new(); pieces.len()];
    for t in all_triangles(vor_s) {
        let (va, vb) = vor_s.triangle_verts(t.0, t.1 as usize);
        let ra = region_of_vert[va as usize];
        let rb = region_of_vert[vb as usize];
        if ra != NO_REGION {
            tris_of[ra as usize].push(t);
        }
        if rb != NO_REGION && rb != ra {
            tris_of[rb as usize].push(t);
        }
    }

    let mut regions = Vec::with_capacity(pieces.len());
    for (ri, verts) in pieces.iter().enumerate() {
        let shared = verts.iter().filter(|v| membership[*v] >= 2).count() as u32;
        let boundary: Vec<BoundaryVert> = boundary_sets[ri]
            .iter()
            .map(|&vs| {
                let key = vor_s.vert(vs).key;
                let vb = vor_b
                    .vert_by_key(&key)
                    .expect("region boundary vertices persist in Vor_Q(B)");
                BoundaryVert { vs, vb, owner_b: graph_b.cells[vb as usize][0] }
            })
            .collect();
        let grid = clearance_grid(&vor_b, &boundary);
        let kept: Vec<(TriId, f64)> = tris_of[ri].iter().map(|&t| (t, 1.0)).collect();
        let interior = build_li(vor_s, &kept, seed ^ (ri as u64).wrapping_mul(0x9e37_79b9));
        regions.push(Region {
            id: ri as u32,
            verts: verts.clone(),
            boundary,
            shared_boundary: shared,
            tris: tris_of[ri].clone(),
            interior,
            grid,
        });
    }

    Ok((Division { regions, region_of_vert }, b_sites, vor_b, vb_in_vs))
}

/// Grid over the boundary clearance homothets. Each homothet is the largest
/// B-empty copy of the reflected gauge centered at the vertex; its bounding
/// box comes from the gauge polygon's extent scaled by the clearance radius.
fn clearance_grid(vor_b: &Diagram, boundary: &[BoundaryVert]) -> ClearGrid {
    let q = vor_b.gauge.unit();
    let (mut qxmin, mut qxmax, mut qymin, mut qymax) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &v in q.verts() {
        qxmin = qxmin.min(v.x);
        qxmax = qxmax.max(v.x);
        qymin = qymin.min(v.y);
        qymax = qymax.max(v.y);
    }
    let mut boxes = Vec::with_capacity(boundary.len());
    let (mut lox, mut loy, mut hix, mut hiy) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for bv in boundary {
        let c = vor_b.vert(bv.vb).pos;
        let r = q.gauge(c - vor_b.site(bv.owner_b)) + 1e-9;
        // {x : gauge(c - x) <= r} = c - r*Q.
        let bb = (c.x - r * qxmax, c.y - r * qymax, c.x - r * qxmin, c.y - r * qymin);
        lox = lox.min(bb.0);
        loy = loy.min(bb.1);
        hix = hix.max(bb.2);
        hiy = hiy.max(bb.3);
        boxes.push(bb);
    }
    if boundary.is_empty() {
        return ClearGrid { lo: pt(0.0, 0.0), cell: 1.0, nx: 0, ny: 0, buckets: Vec::new() };
    }
    let side = (boundary.len() as f64).sqrt().ceil() as u32 + 1;
    let cell = ((hix - lox).max(hiy - loy) / side as f64).max(1e-12);
    let nx = ((hix - lox) / cell).ceil().max(1.0) as u32;
    let ny = ((hiy - loy) / cell).ceil().max(1.0) as u32;
    let mut buckets = vec![Vec::new(); nx as usize * ny as usize];
    for (i, bb) in boxes.iter().enumerate() {
        let ix0 = (((bb.0 - lox) / cell).floor() as i64).clamp(0, nx as i64 - 1);
        let iy0 = (((bb.1 - loy) / cell).floor() as i64).clamp(0, ny as i64 - 1);
        let ix1 = (((bb.2 - lox) / cell).floor() as i64).clamp(0, nx as i64 - 1);
        let iy1 = (((bb.3 - loy) / cell).floor() as i64).clamp(0, ny as i64 - 1);
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                buckets[iy as usize * nx as usize + ix as usize].push(i as u32);
            }
        }
    }
    ClearGrid { lo: pt(lox, loy), cell, nx, ny, buckets }
}

/// Boundary vertices of `region` whose clearance homothet contains `q`,
/// via the grid prefilter and the exact conflict test, sorted.
pub fn conflicting_boundary(vor_b: &Diagram, region: &Region, q: Point) -> Vec<u32> {
    let mut out: Vec<u32> = region
        .grid
        .candidates(q)
        .iter()
        .copied()
        .filter(|&i| {
            let bv = region.boundary[i as usize];
            vor_b.vertex_conflict(q, bv.vb, bv.owner_b)
        })
        .collect();
    out.sort_unstable();
    out
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub n: usize,
    pub m: usize,
    pub epsilon: f64,
    pub tau: i64,
    pub net_oversample: f64,
    pub seed: u64,
    /// Sites are the frame dummies followed by the net S.
    pub vor_s: Diagram,
    pub l_s: Locator,
    /// One distribution-sensitive locator per instance index.
    pub l: Vec<DistLocator>,
    /// Net-tree over the real sites of `vor_s` (dummies excluded).
    pub net_tree: NetTree,
    pub division: Division,
    pub b_sites: Vec<SiteId>,
    pub vor_b: Diagram,
    /// Per Vor_Q(B) vertex id: also a vertex of Vor_Q(S).
    pub vb_in_vs: Vec<bool>,
    /// Mean of sum_v |Z_v|^2 / n over the post-training check instances.
    pub zsq_mean: f64,
    /// Recorded deviations from the construction the guarantees assume.
    pub notes: Vec<String>,
    /// Cluster partition with vEB scratch; rebuilt after deserialization.
    #[serde(skip)]
    pub clusters: Option<Clusters>,
}

impl TrainedModel {
    pub fn gauge(&self) -> &ConvexGauge {
        &self.vor_s.gauge
    }

    pub fn frame(&self) -> &BoundingFrame {
        &self.vor_s.frame
    }

    /// Net points (the real sites of `vor_s`, in site order).
    pub fn net_points(&self) -> &[Point] {
        &self.vor_s.sites[self.vor_s.dummy_count..]
    }

    pub fn ensure_clusters(&mut self) -> &mut Clusters {
        if self.clusters.is_none() {
            self.clusters = Some(partition_clusters(&self.net_tree, self.m.max(1)));
        }
        self.clusters.as_mut().unwrap()
    }

    /// Step-1 point query: the index locator first, the uniform locator when
    /// it answers None, both canonicalized through the wedge walk on
    /// non-interior hits. Returns the triangle, the comparisons spent, and
    /// whether the uniform structure was consulted.
    pub fn locate_point(&self, i: usize, p: Point) -> Result<(TriId, u32, bool), LocateError> {
        let (hit, d1) = self.l[i].locate(p)?;
        if hit.is_some() {
            return Ok((canonicalize_hit(&self.vor_s, hit, p), d1, false));
        }
        let (hit2, d2) = self.l_s.locate(p)?;
        Ok((canonicalize_hit(&self.vor_s, hit2, p), d1 + d2, true))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let bytes = serde_json::to_vec(self).expect("model serializes");
        std::fs::write(path, bytes)
    }

    pub fn load(path: &Path) -> std::io::Result<TrainedModel> {
        let bytes = std::fs::read(path)?;
        let mut model: TrainedModel = serde_json::from_slice(&bytes)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        model.ensure_clusters();
        Ok(model)
    }
}

/// Conflict set of `p` seeded from its triangle: `p` conflicts with at
/// least one of the triangle's two base vertices, and the conflict region
/// grows from whichever does.
pub fn conflicts_from_triangle(
    d: &Diagram,
    graph: &VertexGraph,
    sc: &mut ConflictScratch,
    t: TriId,
    p: Point,
) -> Vec<VertId> {
    let (u, v) = d.triangle_verts(t.0, t.1 as usize);
    let seed = if d.vertex_conflict(p, u, graph.owner(u)) {
        u
    } else {
        debug_assert!(
            d.vertex_conflict(p, v, graph.owner(v)),
            "a contained point conflicts with a base vertex of its triangle"
        );
        v
    };
    d.conflict_region_with(sc, graph, p, seed)
        .expect("seed verified by the conflict test")
}

/// Mean over fresh instances of sum_v |Z_v|^2 / n, the conflict-load
/// statistic the training gate bounds.
pub fn mean_conflict_load(
    vor_s: &Diagram,
    mix: &MixtureModel,
    instances: usize,
    rng: &mut impl Rng,
) -> f64 {
    let graph = vor_s.vertex_graph();
    let mut sc = ConflictScratch::new();
    let hint = vor_s.present_sites().next().expect("dummies present");
    let mut acc = 0.0;
    for _ in 0..instances {
        let inst = mix.sample_instance(rng);
        let mut z: HashMap<VertId, u32> = HashMap::new();
        for &p in &inst {
            let t = canonical_triangle(vor_s, hint, p);
            for v in conflicts_from_triangle(vor_s, &graph, &mut sc, t, p) {
                *z.entry(v).or_insert(0) += 1;
            }
        }
        let zsq: u64 = z.values().map(|&c| c as u64 * c as u64).sum();
        acc += zsq as f64 / mix.n as f64;
    }
    acc / instances.max(1) as f64
}

/// Full training pass. Draws the harvest, builds every structure, then
/// checks the conflict load on fresh instances, redrawing S when the gate
/// fails.
pub fn train(
    gauge: &ConvexGauge,
    mix: &MixtureModel,
    cfg: &TrainConfig,
) -> Result<TrainedModel, TrainError> {
    let (m, n) = (mix.m, mix.n);
    if m * m > n {
        return Err(TrainError::MTooLarge { m, n });
    }
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
        return Err(TrainError::BadEpsilon(cfg.epsilon));
    }
    let frame = gauge.dummy_frame(mix.half)?;
    let mn = (m * n) as f64;
    let floor = mn.powf(-cfg.epsilon);
    let freq_count = (mn.powf(cfg.epsilon).ceil() as u32).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut last_mean = f64::INFINITY;
    for _attempt in 0..=cfg.redraws {
        let x = harvest_samples(mix, &mut rng);
        let net = build_eps_net(&x, m, n, cfg.net_oversample, &mut rng);
        let (vor_s, net_used, _) = prepare(gauge, &frame, &net, None)?;
        let l_s = build_ls(&vor_s, rng.random());
        let tables = estimate_frequencies(&vor_s, mix, freq_count, &mut rng);
        let l: Vec<DistLocator> = tables
            .into_iter()
            .map(|counts| build_index_locator(&vor_s, counts, freq_count, floor, rng.random()))
            .collect();
        let net_tree = build_net_tree(gauge, &net_used, cfg.tau)?;
        let (division, b_sites, vor_b, vb_in_vs) =
            build_m2_division(&vor_s, m, rng.random())?;

        let zsq_mean = mean_conflict_load(&vor_s, mix, cfg.zsq_instances, &mut rng);
        if zsq_mean > cfg.zsq_gate {
            last_mean = zsq_mean;
            continue;
        }

        let mut model = TrainedModel {
            version: FORMAT_VERSION,
            n,
            m,
            epsilon: cfg.epsilon,
            tau: cfg.tau,
            net_oversample: cfg.net_oversample,
            seed: cfg.seed,
            vor_s,
            l_s,
            l,
            net_tree,
            division,
            b_sites,
            vor_b,
            vb_in_vs,
            zsq_mean,
            notes: vec![
                "net is a uniform harvest sample, not an optimal-size epsilon-net; \
                 |S| = O(mn log mn)"
                    .to_string(),
            ],
            clusters: None,
        };
        model.ensure_clusters();
        return Ok(model);
    }
    Err(TrainError::ZsqGate { mean: last_mean, gate: cfg.zsq_gate, retries: cfg.redraws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mix::{preset_mixtures, Sampler};

    fn gauge() -> ConvexGauge {
        ConvexGauge::new(&[[2.0, 0.0], [1.0, 2.0], [-1.5, 1.0], [-2.0, -1.0], [0.5, -2.0]])
            .unwrap()
    }

    fn square() -> ConvexGauge {
        ConvexGauge::new(&[[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]).unwrap()
    }

    fn point_mass_mixture(n: usize) -> MixtureModel {
        let comps = vec![(0..n)
            .map(|j| Sampler::PointMass { at: pt(-6.0 + 1.3 * j as f64, 3.0 - 0.9 * j as f64), jitter: 0.0 })
            .collect()];
        MixtureModel::new(8.0, vec![1.0], 0.5, comps, 99).unwrap()
    }

    #[test]
    fn harvest_is_column_ordered_and_sized() {
        let mix = point_mass_mixture(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = harvest_samples(&mix, &mut rng);
        let mn = 3.0f64;
        let batch = (1.0 * mn.ln()).ceil() as usize;
        assert_eq!(x.len(), 3 * batch);
        for j in 0..3usize {
            let expect = pt(-6.0 + 1.3 * j as f64, 3.0 - 0.9 * j as f64);
            for k in 0..batch {
                assert_eq!(x[j * batch + k], expect, "column {j} entry {k}");
            }
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(x, harvest_samples(&mix, &mut rng2), "deterministic under the seed");
    }

    #[test]
    fn net_of_a_constant_sample_is_one_point() {
        let x = vec![pt(1.0, 2.0); 40];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = build_eps_net(&x, 2, 4, 4.0, &mut rng);
        assert_eq!(net, vec![pt(1.0, 2.0)]);
    }

    #[test]
    fn subsampled_net_hits_every_heavy_homothet() {
        let g = gauge();
        let mix = preset_mixtures("clustered", 16, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = harvest_samples(&mix, &mut rng);
        // c0 = 0.5 forces a strict subsample so the check is not vacuous.
        let net = build_eps_net(&x, 4, 16, 0.5, &mut rng);
        assert!(net.len() < x.len());
        // The quota keeps about half the harvest, so a homothet holding k
        // samples is missed with probability near 2^-k; k = 24 makes every
        // trial a sure hit under the fixed seed.
        let heavy = 24;
        let q = g.unit();
        let mut checked = 0;
        for _ in 0..1000 {
            let c = pt(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
            let r = rng.random_range(0.5..6.0);
            let inside = |p: Point| q.gauge(c - p) <= r;
            let hits = x.iter().filter(|&&p| inside(p)).count();
            if hits < heavy {
                continue;
            }
            checked += 1;
            assert!(
                net.iter().any(|&s| inside(s)),
                "homothet at {c:?} r {r} holds {hits} samples but no net point"
            );
        }
        assert!(checked > 50, "need informative homothets, got {checked}");
    }

    #[test]
    fn point_mass_frequencies_concentrate() {
        let g = square();
        let mix = point_mass_mixture(4);
        let frame = g.dummy_frame(8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = harvest_samples(&mix, &mut rng);
        let net = build_eps_net(&x, 1, 4, 4.0, &mut rng);
        let (vor_s, _, _) = prepare(&g, &frame, &net, None).unwrap();
        let tables = estimate_frequencies(&vor_s, &mix, 32, &mut rng);
        assert_eq!(tables.len(), 4);
        for t in &tables {
            assert_eq!(t.len(), 1, "every index hits one triangle");
            assert_eq!(t[0].1, 32, "counts sum to the instance total exactly");
        }
    }

    #[test]
    fn division_covers_verts_and_boundary_survives_in_vor_b() {
        let g = gauge();
        let frame = g.dummy_frame(8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Point> =
            (0..80).map(|_| pt(rng.random_range(-7.0..7.0), rng.random_range(-7.0..7.0))).collect();
        let (vor_s, _, _) = prepare(&g, &frame, &pts, None).unwrap();
        let m = 3usize;
        let (division, b_sites, vor_b, vb_in_vs) = build_m2_division(&vor_s, m, 11).unwrap();

        let mut covered: Vec<VertId> = division.regions.iter().flat_map(|r| r.verts.clone()).collect();
        covered.sort_unstable();
        covered.dedup();
        let live: Vec<VertId> = vor_s.live_verts().map(|(v, _)| v).collect();
        assert_eq!(covered, live, "regions cover every live vertex");

        for r in &division.regions {
            assert!(r.verts.len() <= (m * m).max(4), "region {} size {}", r.id, r.verts.len());
            for bv in &r.boundary {
                let key = vor_s.vert(bv.vs).key;
                let vb = vor_b.vert_by_key(&key).expect("boundary vertex in Vor_Q(B)");
                assert_eq!(vb, bv.vb);
                assert!(vb_in_vs[bv.vb as usize], "a shared key is labeled present");
            }
        }
        assert!(!b_sites.is_empty(), "wall-adjacent cells always contribute");
        for &s in &b_sites {
            assert!(!vor_s.is_dummy(s));
        }
    }

    #[test]
    fn clearance_grid_matches_direct_conflict_scans() {
        let g = square();
        let frame = g.dummy_frame(8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Point> =
            (0..60).map(|_| pt(rng.random_range(-7.0..7.0), rng.random_range(-7.0..7.0))).collect();
        let (vor_s, _, _) = prepare(&g, &frame, &pts, None).unwrap();
        let (division, _, vor_b, _) = build_m2_division(&vor_s, 3, 13).unwrap();
        let mut tested = 0;
        for _ in 0..1000 {
            let q = pt(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
            for r in &division.regions {
                let got = conflicting_boundary(&vor_b, r, q);
                let want: Vec<u32> = (0..r.boundary.len() as u32)
                    .filter(|&i| {
                        let bv = r.boundary[i as usize];
                        vor_b.vertex_conflict(q, bv.vb, bv.owner_b)
                    })
                    .collect();
                assert_eq!(got, want, "region {} at {q:?}", r.id);
                tested += want.len();
            }
        }
        assert!(tested > 100, "conflicts actually occurred ({tested})");
    }

    #[test]
    fn train_rejects_bad_parameters() {
        let g = square();
        let mix = preset_mixtures("adversarial_uniform", 8, 4).unwrap();
        match train(&g, &mix, &TrainConfig::default()) {
            Err(TrainError::MTooLarge { m: 4, n: 8 }) => {}
            other => panic!("expected MTooLarge, got {other:?}"),
        }
        let mix2 = preset_mixtures("adversarial_uniform", 16, 2).unwrap();
        let cfg = TrainConfig { epsilon: 1.5, ..TrainConfig::default() };
        match train(&g, &mix2, &cfg) {
            Err(TrainError::BadEpsilon(e)) => assert_eq!(e, 1.5),
            other => panic!("expected BadEpsilon, got {other:?}"),
        }
    }

    #[test]
    fn trained_model_round_trips_byte_identically() {
        let g = gauge();
        let mix = preset_mixtures("clustered", 16, 2).unwrap();
        let cfg = TrainConfig { zsq_instances: 40, ..TrainConfig::default() };
        let model = train(&g, &mix, &cfg).unwrap();
        assert_eq!(model.l.len(), 16);
        assert!(model.zsq_mean <= cfg.zsq_gate);
        assert_eq!(model.net_points().len(), model.net_tree.points.len());

        let dir = std::env::temp_dir().join("sivor_train_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        model.save(&path).unwrap();
        let loaded = TrainedModel::load(&path).unwrap();
        let path2 = dir.join("model2.json");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        assert!(loaded.clusters.is_some(), "clusters rebuilt on load");
    }

    #[test]
    fn locate_point_prefers_a_well_covered_index_locator() {
        let g = square();
        let mix = preset_mixtures("low_entropy", 16, 2).unwrap();
        let cfg = TrainConfig { zsq_instances: 40, ..TrainConfig::default() };
        let mut model = train(&g, &mix, &cfg).unwrap();
        // Re-estimate with a budget large enough to see nearly all of each
        // index's support, so misses are rare and the index structure is
        // exercised rather than the fallback.
        let mut rng = ChaCha8Rng::seed_from_u64(400);
        let count = 400;
        let tables = estimate_frequencies(&model.vor_s, &mix, count, &mut rng);
        let floor = (32f64).powf(-0.5);
        model.l = tables
            .into_iter()
            .map(|c| build_index_locator(&model.vor_s, c, count, floor, rng.random()))
            .collect();

        let hint = model.vor_s.present_sites().next().unwrap();
        let mut via_index = 0;
        let mut total = 0;
        for _ in 0..50 {
            let inst = mix.sample_instance(&mut rng);
            for (i, &p) in inst.iter().enumerate() {
                let (t, _, used_ls) = model.locate_point(i, p).unwrap();
                assert_eq!(t, canonical_triangle(&model.vor_s, hint, p));
                total += 1;
                if !used_ls {
                    via_index += 1;
                }
            }
        }
        assert!(
            via_index * 10 > total * 9,
            "well-covered indices rarely fall back ({via_index}/{total})"
        );
    }
}


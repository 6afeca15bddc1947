//! Trapezoidal-map point location over the fan triangulation of a diagram.
//!
//! Segments are the kept triangles' edges; a randomized incremental build
//! produces a search DAG of x-nodes (endpoint, lexicographic vertical) and
//! y-nodes (segment side). Vertical walls are sheared symbolically: all
//! comparisons are lexicographic in (x, y), so equal-x endpoints need no
//! perturbation. Queries land in a trapezoid and read the face above its
//! bottom segment; trapezoids outside every kept triangle answer `None`.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::exact::{rat, sign, RPoint};
use crate::geom::{pt, Point};
use crate::vor::{Diagram, SiteId};

/// Fan triangle handle: owning site and arc index within its cell.
pub type TriId = (SiteId, u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LocateError {
    #[error("query point lies outside the world box")]
    OutsideFrame,
}

/// Relative filter band for the float fast path of the sign predicates.
/// True rounding error is a few ulps; anything inside the band re-runs
/// exactly, so the constant only trades speed, not correctness.
const BAND: f64 = 1e-12;

fn sgn(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else {
        -1
    }
}

/// Sign of cross(b - a, c - a), exact. Scale bound covers the rounding of
/// the differences as well as the products.
fn cross_sign(a: Point, b: Point, c: Point) -> i8 {
    let v = (b - a).cross(c - a);
    let mag = (a.x.abs() + b.x.abs() + c.x.abs()) * (a.y.abs() + b.y.abs() + c.y.abs());
    if v.abs() > BAND * mag {
        return sgn(v);
    }
    let ra = RPoint::of(a);
    sign(&RPoint::of(b).sub(&ra).cross(&RPoint::of(c).sub(&ra)))
}

/// Sign of cross(q - p, b - a), exact: orientation of direction (a, b)
/// against direction (p, q). Breaks endpoint ties in the descent.
fn dir_cross_sign(p: Point, q: Point, a: Point, b: Point) -> i8 {
    let v = (q - p).cross(b - a);
    let mag = (p.x.abs() + q.x.abs() + a.x.abs() + b.x.abs())
        * (p.y.abs() + q.y.abs() + a.y.abs() + b.y.abs());
    if v.abs() > BAND * mag {
        return sgn(v);
    }
    let d1 = RPoint::of(q).sub(&RPoint::of(p));
    let d2 = RPoint::of(b).sub(&RPoint::of(a));
    sign(&d1.cross(&d2))
}

/// Side of segment (p, q) seen from the point of segment (a, b) at abscissa
/// `x0`, exact. Requires a.x < b.x; the crossing point itself is never
/// constructed, the sign comes from the cleared-denominator form
/// (b.x - a.x) * cross(q-p, a-p) + (x0 - a.x) * cross(q-p, b-a).
fn seg_side_at_x(p: Point, q: Point, a: Point, b: Point, x0: f64) -> i8 {
    debug_assert!(a.x < b.x);
    let d = q - p;
    let n = (b.x - a.x) * d.cross(a - p) + (x0 - a.x) * d.cross(b - a);
    let xs = p.x.abs() + q.x.abs() + a.x.abs() + b.x.abs() + x0.abs();
    let ys = p.y.abs() + q.y.abs() + a.y.abs() + b.y.abs();
    if n.abs() > BAND * xs * xs * ys {
        return sgn(n);
    }
    let (rp, rq) = (RPoint::of(p), RPoint::of(q));
    let (ra, rb) = (RPoint::of(a), RPoint::of(b));
    let rd = rq.sub(&rp);
    let c1 = rd.cross(&ra.sub(&rp));
    let c2 = rd.cross(&rb.sub(&ra));
    let exact_n = (rat(b.x) - rat(a.x)) * c1 + (rat(x0) - rat(a.x)) * c2;
    sign(&exact_n)
}

fn lex_lt(p: Point, q: Point) -> bool {
    (p.x, p.y) < (q.x, q.y)
}

/// One triangulation edge, endpoints in lexicographic order, with the face
/// label on each side (`None` where no kept triangle touches).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Seg {
    a: Point,
    b: Point,
    above: Option<TriId>,
    below: Option<TriId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Node {
    X { at: Point, left: u32, right: u32 },
    Y { seg: u32, above: u32, below: u32 },
    Leaf { trap: u32 },
}

/// Trapezoid of the refinement. `leftp`/`rightp` generate the walls; `top`
/// and `bot` are segment indices, `None` at the outer boundary. `leaf` is
/// the DAG node currently representing the trapezoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Trap {
    top: Option<u32>,
    bot: Option<u32>,
    leftp: Point,
    rightp: Point,
    leaf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Locator {
    nodes: Vec<Node>,
    traps: Vec<Trap>,
    segs: Vec<Seg>,
    root: u32,
    world: f64,
}

/// Descent argument. `Start` stands for a point just after `a` along the
/// segment towards `b`; `Cross` for the point of the segment at abscissa
/// `x0` pushed the same way. Both resolve wall and segment ties exactly.
enum Probe {
    Point(Point),
    Start { a: Point, b: Point },
    Cross { a: Point, b: Point, x0: f64 },
}

fn right_of_wall(at: Point, probe: &Probe) -> bool {
    match *probe {
        Probe::Point(q) => q.x > at.x || (q.x == at.x && q.y >= at.y),
        Probe::Start { a, b } => {
            if a.x != at.x {
                a.x > at.x
            } else if b.x > a.x {
                // The push has positive x; any real advance beats the shear.
                true
            } else {
                a.y >= at.y
            }
        }
        Probe::Cross { x0, .. } => x0 >= at.x,
    }
}

impl Locator {
    fn above_seg(&self, si: u32, probe: &Probe) -> bool {
        let s = &self.segs[si as usize];
        let side = match *probe {
            Probe::Point(q) => cross_sign(s.a, s.b, q),
            Probe::Start { a, .. } => cross_sign(s.a, s.b, a),
            Probe::Cross { a, b, x0 } => seg_side_at_x(s.a, s.b, a, b, x0),
        };
        match (side, probe) {
            (1, _) => true,
            (-1, _) => false,
            (_, Probe::Point(_)) => true,
            (_, Probe::Start { a, b } | Probe::Cross { a, b, .. }) => {
                dir_cross_sign(s.a, s.b, *a, *b) >= 0
            }
        }
    }

    fn descend(&self, probe: &Probe) -> (u32, u32) {
        let mut n = self.root;
        let mut depth = 0u32;
        loop {
            match self.nodes[n as usize] {
                Node::Leaf { trap } => return (trap, depth),
                Node::X { at, left, right } => {
                    depth += 1;
                    n = if right_of_wall(at, probe) { right } else { left };
                }
                Node::Y { seg, above, below } => {
                    depth += 1;
                    n = if self.above_seg(seg, probe) { above } else { below };
                }
            }
        }
    }

    fn push_node(&mut self, n: Node) -> u32 {
        self.nodes.push(n);
        (self.nodes.len() - 1) as u32
    }

    fn new_trap(&mut self, top: Option<u32>, bot: Option<u32>, leftp: Point, rightp: Point) -> u32 {
        let trap = self.traps.len() as u32;
        let leaf = self.push_node(Node::Leaf { trap });
        self.traps.push(Trap { top, bot, leftp, rightp, leaf });
        trap
    }

    fn insert(&mut self, si: u32) {
        let (a, b) = {
            let s = &self.segs[si as usize];
            (s.a, s.b)
        };
        debug_assert!(lex_lt(a, b));

        // Trapezoids crossed left to right. The walk re-descends at each
        // right wall instead of keeping neighbor pointers; the stop rule is
        // on real x, so a segment ending on a shared-x wall does not probe
        // past its own endpoint.
        let mut crossed = vec![self.descend(&Probe::Start { a, b }).0];
        loop {
            let t = &self.traps[*crossed.last().unwrap() as usize];
            if b.x <= t.rightp.x {
                break;
            }
            let x0 = t.rightp.x;
            crossed.push(self.descend(&Probe::Cross { a, b, x0 }).0);
        }
        let k = crossed.len() - 1;
        let first = self.traps[crossed[0] as usize];
        let last = self.traps[crossed[k] as usize];
        let has_left = lex_lt(first.leftp, a);
        let has_right = lex_lt(b, last.rightp);
        let left_piece = has_left.then(|| self.new_trap(first.top, first.bot, first.leftp, a));
        let right_piece = has_right.then(|| self.new_trap(last.top, last.bot, b, last.rightp));

        // Pieces flanking the segment, merged while the far boundary stays
        // the same. Merged pieces share one trapezoid and one leaf.
        let mut above_of = vec![0u32; k + 1];
        let mut below_of = vec![0u32; k + 1];
        for i in 0..=k {
            let t = self.traps[crossed[i] as usize];
            let wl = if i == 0 { a } else { t.leftp };
            let wr = if i == k {
                if has_right {
                    b
                } else {
                    t.rightp
                }
            } else {
                t.rightp
            };
            if i > 0 && self.traps[above_of[i - 1] as usize].top == t.top {
                above_of[i] = above_of[i - 1];
                self.traps[above_of[i] as usize].rightp = wr;
            } else {
                above_of[i] = self.new_trap(t.top, Some(si), wl, wr);
            }
            if i > 0 && self.traps[below_of[i - 1] as usize].bot == t.bot {
                below_of[i] = below_of[i - 1];
                self.traps[below_of[i] as usize].rightp = wr;
            } else {
                below_of[i] = self.new_trap(Some(si), t.bot, wl, wr);
            }
        }

        // Replace each dead trapezoid's leaf in place so parent links hold.
        for i in 0..=k {
            let y = self.push_node(Node::Y {
                seg: si,
                above: self.traps[above_of[i] as usize].leaf,
                below: self.traps[below_of[i] as usize].leaf,
            });
            let mut sub = y;
            if i == k {
                if let Some(r) = right_piece {
                    let leaf = self.traps[r as usize].leaf;
                    sub = self.push_node(Node::X { at: b, left: sub, right: leaf });
                }
            }
            if i == 0 {
                if let Some(l) = left_piece {
                    let leaf = self.traps[l as usize].leaf;
                    sub = self.push_node(Node::X { at: a, left: leaf, right: sub });
                }
            }
            let old = self.traps[crossed[i] as usize].leaf;
            self.nodes[old as usize] = self.nodes[sub as usize];
        }
    }

    fn build(world: f64, segs: Vec<Seg>, order: &[u32]) -> Locator {
        let mut l = Locator { nodes: Vec::new(), traps: Vec::new(), segs, root: 0, world };
        let g = world + 1.0;
        l.new_trap(None, None, pt(-g, -g), pt(g, g));
        l.root = l.traps[0].leaf;
        for &si in order {
            l.insert(si);
        }
        l
    }

    /// Face containing `q` and the number of comparisons spent finding it.
    /// `None` means the point is inside the world box but outside every
    /// kept triangle.
    pub fn locate(&self, q: Point) -> Result<(Option<TriId>, u32), LocateError> {
        if !(q.x.abs() <= self.world && q.y.abs() <= self.world) {
            return Err(LocateError::OutsideFrame);
        }
        let (trap, depth) = self.descend(&Probe::Point(q));
        let face = self.traps[trap as usize].bot.and_then(|s| self.segs[s as usize].above);
        Ok((face, depth))
    }

    pub fn segment_count(&self) -> usize {
        self.segs.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// Corners of fan triangle `t`, counterclockwise, apex first.
pub fn tri_corners(d: &Diagram, t: TriId) -> [Point; 3] {
    let (va, vb) = d.triangle_verts(t.0, t.1 as usize);
    [d.site(t.0), d.vert(va).pos, d.vert(vb).pos]
}

/// All fan triangles of the diagram's present cells.
pub fn all_triangles(d: &Diagram) -> Vec<TriId> {
    let mut out = Vec::new();
    for s in d.present_sites() {
        for j in 0..d.cell(s).arcs.len() {
            out.push((s, j as u32));
        }
    }
    out
}

fn norm_bits(x: f64) -> u64 {
    // Collapses -0.0 so shared endpoints always dedup.
    (if x == 0.0 { 0.0 } else { x }).to_bits()
}

/// Edge soup of the given triangles, deduped, labeled with the adjacent
/// faces and the max adjacent weight. Edges lying along a world wall are
/// dropped: the wall band is cut off by the locate bounds check, and wall
/// collinearity is the one place equal-x endpoints would stack up.
fn gather_segments(d: &Diagram, tris: &[(TriId, f64)]) -> (Vec<Seg>, Vec<f64>) {
    let world = d.frame.world;
    let mut index: HashMap<((u64, u64), (u64, u64)), u32> = HashMap::new();
    let mut segs = Vec::new();
    let mut weights = Vec::new();
    for &(t, w) in tris {
        let c = tri_corners(d, t);
        if cross_sign(c[0], c[1], c[2]) <= 0 {
            debug_assert!(false, "degenerate fan wedge {t:?}");
            continue;
        }
        for e in 0..3 {
            let p = c[e];
            let q = c[(e + 1) % 3];
            if (p.x == q.x && p.x.abs() == world) || (p.y == q.y && p.y.abs() == world) {
                continue;
            }
            let (lo, hi, left_is_above) = if lex_lt(p, q) { (p, q, true) } else { (q, p, false) };
            let key = ((norm_bits(lo.x), norm_bits(lo.y)), (norm_bits(hi.x), norm_bits(hi.y)));
            let id = *index.entry(key).or_insert_with(|| {
                segs.push(Seg { a: lo, b: hi, above: None, below: None });
                weights.push(0.0f64);
                (segs.len() - 1) as u32
            });
            let slot = &mut segs[id as usize];
            if left_is_above {
                debug_assert!(slot.above.is_none(), "two triangles left of {lo:?}-{hi:?}");
                slot.above = Some(t);
            } else {
                debug_assert!(slot.below.is_none(), "two triangles right of {lo:?}-{hi:?}");
                slot.below = Some(t);
            }
            weights[id as usize] = weights[id as usize].max(w);
        }
    }
    (segs, weights)
}

/// Uniform-shuffle locator over the whole triangulation. Expected query
/// depth O(log |segments|) regardless of the query distribution.
pub fn build_ls(d: &Diagram, seed: u64) -> Locator {
    let tris: Vec<(TriId, f64)> = all_triangles(d).into_iter().map(|t| (t, 1.0)).collect();
    let (segs, _) = gather_segments(d, &tris);
    let mut order: Vec<u32> = (0..segs.len() as u32).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Locator::build(d.frame.world, segs, &order)
}

/// Weighted locator over `kept` triangles only. Segments insert by weight
/// class (floor of log2 of the max adjacent weight), heaviest class first,
/// shuffled within a class, so heavy faces end up near the DAG root.
pub fn build_li(d: &Diagram, kept: &[(TriId, f64)], seed: u64) -> Locator {
    let (segs, weights) = gather_segments(d, kept);
    let class = |w: f64| {
        if w > 0.0 {
            w.log2().floor() as i64
        } else {
            i64::MIN
        }
    };
    let mut order: Vec<u32> = (0..segs.len() as u32).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(class(weights[i as usize])));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lo = 0;
    while lo < order.len() {
        let c = class(weights[order[lo] as usize]);
        let mut hi = lo + 1;
        while hi < order.len() && class(weights[order[hi] as usize]) == c {
            hi += 1;
        }
        order[lo..hi].shuffle(&mut rng);
        lo = hi;
    }
    Locator::build(d.frame.world, segs, &order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::ConvexGauge;
    use crate::vor::build::prepare;
    use rand::Rng;

    fn gauges() -> Vec<ConvexGauge> {
        vec![
            ConvexGauge::new(&[[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]).unwrap(),
            ConvexGauge::new(&[[2.0, 0.0], [1.0, 2.0], [-1.5, 1.0], [-2.0, -1.0], [0.5, -2.0]])
                .unwrap(),
        ]
    }

    fn sample_diagram(g: &ConvexGauge, n: usize, seed: u64) -> Diagram {
        let f = g.dummy_frame(8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point> = (0..n)
            .map(|_| pt(rng.random_range(-7.5..7.5), rng.random_range(-7.5..7.5)))
            .collect();
        let (d, _, attempts) = prepare(g, &f, &pts, None).unwrap();
        assert_eq!(attempts, 0);
        d
    }

    /// Strictly interior to the triangle: every edge sign positive.
    fn strictly_inside(c: &[Point; 3], q: Point) -> bool {
        (0..3).all(|e| cross_sign(c[e], c[(e + 1) % 3], q) > 0)
    }

    fn inside_closed(c: &[Point; 3], q: Point) -> bool {
        (0..3).all(|e| cross_sign(c[e], c[(e + 1) % 3], q) >= 0)
    }

    #[test]
    fn full_locator_agrees_with_the_canonical_walk() {
        for (gi, g) in gauges().into_iter().enumerate() {
            let d = sample_diagram(&g, 64, 40 + gi as u64);
            let l = build_ls(&d, 11);
            let hint = d.present_sites().next().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(90 + gi as u64);
            let mut strict = 0usize;
            for _ in 0..10_000 {
                let q = pt(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
                let (face, _) = l.locate(q).unwrap();
                let face = face.expect("interior of the box is fully covered");
                let c = tri_corners(&d, face);
                assert!(inside_closed(&c, q), "locator face {face:?} misses {q:?}");
                if strictly_inside(&c, q) {
                    let (cs, cj) = d.triangle_of(hint, q);
                    assert_eq!(face, (cs, cj as u32), "walk disagrees at {q:?}");
                    strict += 1;
                }
            }
            assert!(strict > 9_900, "almost all random queries are interior, got {strict}");
        }
    }

    #[test]
    fn queries_outside_the_world_box_are_rejected() {
        let g = &gauges()[0];
        let d = sample_diagram(g, 12, 3);
        let l = build_ls(&d, 5);
        let w = d.frame.world;
        assert_eq!(l.locate(pt(w + 1.0, 0.0)), Err(LocateError::OutsideFrame));
        assert_eq!(l.locate(pt(0.0, -w - 0.125)), Err(LocateError::OutsideFrame));
        assert!(l.locate(pt(0.0, 0.0)).is_ok());
    }

    #[test]
    fn querying_a_site_lands_in_its_own_fan() {
        let g = &gauges()[1];
        let d = sample_diagram(g, 32, 17);
        let l = build_ls(&d, 23);
        for s in d.present_real_sites().take(10) {
            let (face, _) = l.locate(d.site(s)).unwrap();
            let face = face.expect("sites are interior");
            assert_eq!(face.0, s, "site {s} located in cell {}", face.0);
        }
    }

    #[test]
    fn sparse_locator_answers_none_off_the_kept_set() {
        let g = &gauges()[0];
        let d = sample_diagram(&g, 24, 9);
        let s0 = d.present_real_sites().next().unwrap();
        let kept: Vec<(TriId, f64)> =
            (0..d.cell(s0).arcs.len()).map(|j| ((s0, j as u32), 1.0)).collect();
        let l = build_li(&d, &kept, 31);
        for &(t, _) in &kept {
            let c = tri_corners(&d, t);
            let centroid = (c[0] + c[1] + c[2]) / 3.0;
            if !strictly_inside(&c, centroid) {
                continue;
            }
            let (face, _) = l.locate(centroid).unwrap();
            assert_eq!(face, Some(t));
        }
        // Any other site's position is outside cell s0, hence unkept.
        for s in d.present_real_sites().skip(1).take(8) {
            let (face, _) = l.locate(d.site(s)).unwrap();
            assert_eq!(face, None, "site {s} should fall off the kept set");
        }
    }

    #[test]
    fn random_kept_subsets_match_a_linear_scan() {
        let g = &gauges()[1];
        let d = sample_diagram(&g, 20, 77);
        let all = all_triangles(&d);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for trial in 0..4u64 {
            let kept: Vec<(TriId, f64)> = all
                .iter()
                .filter(|_| rng.random::<f64>() < 0.5)
                .map(|&t| (t, 1.0))
                .collect();
            let l = build_li(&d, &kept, 1000 + trial);
            for _ in 0..500 {
                let q = pt(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
                let mut expect = None;
                let mut boundary = false;
                for &(t, _) in &kept {
                    let c = tri_corners(&d, t);
                    if strictly_inside(&c, q) {
                        expect = Some(t);
                        break;
                    }
                    if inside_closed(&c, q) {
                        boundary = true;
                    }
                }
                if expect.is_none() && boundary {
                    continue;
                }
                let (face, _) = l.locate(q).unwrap();
                assert_eq!(face, expect, "subset locate at {q:?}");
            }
        }
    }

    #[test]
    fn heavy_faces_sit_higher_than_under_uniform_weights() {
        let g = &gauges()[0];
        let d = sample_diagram(&g, 64, 55);
        let heavy_site = d.present_real_sites().next().unwrap();
        let all = all_triangles(&d);
        let weighted: Vec<(TriId, f64)> = all
            .iter()
            .map(|&t| (t, if t.0 == heavy_site { 0.9 } else { 1e-6 }))
            .collect();
        let flat: Vec<(TriId, f64)> = all.iter().map(|&t| (t, 1.0)).collect();
        let lw = build_li(&d, &weighted, 7);
        let lf = build_li(&d, &flat, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base = d.site(heavy_site);
        let (mut dw, mut df, mut m) = (0u64, 0u64, 0u64);
        for _ in 0..4000 {
            let q = base + pt(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            if q.x.abs() > 8.0 || q.y.abs() > 8.0 {
                continue;
            }
            let (fw, depw) = lw.locate(q).unwrap();
            if fw.map(|t| t.0) != Some(heavy_site) {
                continue;
            }
            let (_, depf) = lf.locate(q).unwrap();
            dw += depw as u64;
            df += depf as u64;
            m += 1;
        }
        assert!(m > 500, "not enough in-cell queries ({m})");
        let (aw, af) = (dw as f64 / m as f64, df as f64 / m as f64);
        assert!(aw < 0.8 * af, "weighted depth {aw:.2} vs uniform {af:.2}");
    }

    #[test]
    fn locator_round_trips_through_json() {
        let g = &gauges()[1];
        let d = sample_diagram(&g, 16, 2);
        let l = build_ls(&d, 77);
        let bytes = serde_json::to_vec(&l).unwrap();
        let back: Locator = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(l, back);
        assert_eq!(serde_json::to_vec(&back).unwrap(), bytes);
    }


    #[test]
    fn tiny_kept_sets_stay_shallow() {
        let g = &gauges()[0];
        let d = sample_diagram(&g, 8, 64);
        let t = all_triangles(&d)[0];
        let c = tri_corners(&d, t);
        let l = build_li(&d, &[(t, 1.0)], 3);
        let centroid = (c[0] + c[1] + c[2]) / 3.0;
        let (face, depth) = l.locate(centroid).unwrap();
        assert_eq!(face, Some(t));
        assert!(depth <= 8, "single triangle depth {depth}");
    }
}

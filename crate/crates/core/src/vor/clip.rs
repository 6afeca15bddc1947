//! Clipping a cell boundary against one more site's dominance region.
//!
//! The dominance region of the owner against the other site is star-shaped
//! around the owner, so its intersection with the (star-shaped, bounded) cell
//! is connected and simply connected: the result is a single loop stitched
//! from kept stretches of the old boundary and stretches of the pair's
//! bisector. A single old arc can still be crossed twice (the bisector dips
//! over it and back), so crossings are enumerated per arc against every piece
//! of the bisector and then paired up along the curve: the curve comes in
//! from infinity, so its odd-numbered crossings in curve order leave the old
//! cell and consecutive pairs bound the stretches that lie inside.
//!
//! All decisions (vertex sides, crossing validity, orderings) are filtered
//! float comparisons with exact rational fallbacks; exact degeneracies
//! surface as ties for the caller to perturb away.

use super::pred::{self, cross_refined};
use super::{Arc, Cell, Diagram, Edge, ExactSpec, SiteId, VertId, VertKey};
use crate::gauge::bisector::{piece_line_rat, ray_line_rat, Bisector, RayOwner};
use crate::geom::exact::{self, RPoint, Rat};
use crate::geom::{GeomResult, Point, Tie, FILTER_BAND};
use std::cmp::Ordering;

/// Vertex of a boundary that is not committed to the diagram yet.
#[derive(Debug, Clone)]
pub enum TempVert {
    Old(VertId),
    New(NewVert),
}

#[derive(Debug, Clone)]
pub struct NewVert {
    pub key: VertKey,
    pub spec: ExactSpec,
    pub pos: Point,
    pub err: f64,
}

#[derive(Debug, Clone)]
pub struct TempArc {
    pub v: TempVert,
    pub edge: Edge,
    pub cone_own: u8,
    pub cone_other: u8,
}

#[derive(Debug, Clone, Default)]
pub struct TempBoundary {
    pub arcs: Vec<TempArc>,
}

pub enum ClipOutcome {
    Unchanged,
    Changed(TempBoundary),
}

impl TempVert {
    pub fn pos(&self, d: &Diagram) -> Point {
        match self {
            TempVert::Old(id) => d.vert(*id).pos,
            TempVert::New(nv) => nv.pos,
        }
    }

    pub fn err(&self, d: &Diagram) -> f64 {
        match self {
            TempVert::Old(id) => d.vert(*id).err,
            TempVert::New(nv) => nv.err,
        }
    }

    pub fn exact(&self, d: &Diagram) -> RPoint {
        match self {
            TempVert::Old(id) => {
                let rec = d.vert(*id);
                pred::vert_exact(d, &rec.key, &rec.spec)
            }
            TempVert::New(nv) => pred::vert_exact(d, &nv.key, &nv.spec),
        }
    }
}

impl TempBoundary {
    pub fn from_cell(cell: &Cell) -> TempBoundary {
        TempBoundary {
            arcs: cell
                .arcs
                .iter()
                .map(|a| TempArc { v: TempVert::Old(a.v), edge: a.edge, cone_own: a.cone_own, cone_other: a.cone_other })
                .collect(),
        }
    }
}

/// The world box as a boundary: wall `s` runs from corner `s - 1` to corner
/// `s`, counterclockwise.
pub fn world_boundary(d: &Diagram) -> TempBoundary {
    let arcs = (0..4u8)
        .map(|s| TempArc {
            v: TempVert::New(NewVert {
                key: VertKey::Corner { side: (s + 3) % 4 },
                spec: ExactSpec::Corner,
                pos: d.corner((s + 3) % 4),
                err: 0.0,
            }),
            edge: Edge::Wall(s),
            cone_own: 0,
            cone_other: 0,
        })
        .collect();
    TempBoundary { arcs }
}

/// Interns the boundary's new vertices and installs it as `own`'s cell.
pub fn commit(d: &mut Diagram, own: SiteId, b: TempBoundary) {
    let arcs: Vec<Arc> = b
        .arcs
        .into_iter()
        .map(|a| {
            let v = match a.v {
                TempVert::Old(id) => {
                    d.retain_vert(id);
                    id
                }
                TempVert::New(nv) => d.intern_vert(nv.key, nv.spec, nv.pos, nv.err),
            };
            Arc { v, edge: a.edge, cone_own: a.cone_own, cone_other: a.cone_other }
        })
        .collect();
    d.set_cell(own, Some(Cell { arcs }));
}

/// A validated intersection of the old boundary with the clip bisector.
struct Crossing {
    vert: NewVert,
    /// Index of the old arc it lies on.
    arc: usize,
    /// Vec index of the bisector piece it lies on.
    piece: usize,
    /// Boundary walk leaves the owner's side here.
    leaves: bool,
    /// Position in curve order, filled after sorting.
    curve_pos: usize,
}

/// Clips `boundary` (owned by `own`) against the dominance of `own` over
/// `other`. `bis` must be the bisector of the pair in sorted-id order.
pub fn clip(
    d: &Diagram,
    own: SiteId,
    boundary: &TempBoundary,
    other: SiteId,
    bis: &Bisector,
) -> GeomResult<ClipOutcome> {
    debug_assert_ne!(own, other);
    let (a, b) = if own < other { (own, other) } else { (other, own) };
    debug_assert_eq!(bis.p, d.site(a));
    debug_assert_eq!(bis.q, d.site(b));
    let n_arcs = boundary.arcs.len();
    let g = &d.gauge;

    let mut sides = Vec::with_capacity(n_arcs);
    for arc in &boundary.arcs {
        let s = pred::side_of(d, own, other, arc.v.pos(d), arc.v.err(d), || arc.v.exact(d))?;
        sides.push(s);
    }

    let mut crossings: Vec<Crossing> = Vec::new();
    let mut per_arc: Vec<Vec<usize>> = vec![Vec::new(); n_arcs];

    for (i, arc) in boundary.arcs.iter().enumerate() {
        if let Edge::Site(r) = arc.edge {
            debug_assert!(r != other && r != own, "arc against the clip site already present");
        }
        let (carrier, cdir) = pred::carrier_line_f(d, own, arc.edge, arc.cone_own, arc.cone_other);
        let carrier_rat = || pred::carrier_line_rat(d, own, arc.edge, arc.cone_own, arc.cone_other);
        let cdir_rat = || pred::carrier_dir_rat(d, own, arc.edge, arc.cone_own, arc.cone_other);
        let v0 = &arc.v;
        let v1 = &boundary.arcs[(i + 1) % n_arcs].v;

        for (jv, piece) in bis.pieces.iter().enumerate() {
            let (own_cone, other_cone) = if own == a {
                (piece.cone_p as u8, piece.cone_q as u8)
            } else {
                (piece.cone_q as u8, piece.cone_p as u8)
            };
            if matches!(arc.edge, Edge::Site(_)) && own_cone != arc.cone_own {
                continue;
            }
            let exact_cross = || {
                let c = carrier_rat();
                let p = piece_line_rat(g, bis.p, bis.q, piece.cone_p, piece.cone_q);
                exact::solve2(&c.0.x, &c.0.y, &p.0.x, &p.0.y, &c.1, &p.1)
            };
            let Some((z, zerr)) = cross_refined(carrier, (piece.grad, piece.rhs), &exact_cross) else {
                continue;
            };
            let exact_z = || exact_cross().expect("filtered crossing exists exactly");
            if !pred::cone_ok(d, other, other_cone, z, zerr, exact_z)? {
                continue;
            }
            if matches!(arc.edge, Edge::Wall(_)) && !pred::cone_ok(d, own, own_cone, z, zerr, exact_z)? {
                continue;
            }
            // Strictly inside the arc span, measured along the walk direction.
            let lo = along_cmp(
                cdir,
                (z, zerr),
                (v0.pos(d), v0.err(d)),
                &cdir_rat,
                &exact_z,
                &|| v0.exact(d),
                "bisector crossing at an existing vertex",
            )?;
            if lo != Ordering::Greater {
                continue;
            }
            let hi = along_cmp(
                cdir,
                (z, zerr),
                (v1.pos(d), v1.err(d)),
                &cdir_rat,
                &exact_z,
                &|| v1.exact(d),
                "bisector crossing at an existing vertex",
            )?;
            if hi != Ordering::Less {
                continue;
            }
            let (key, spec) = match arc.edge {
                Edge::Site(r) => {
                    let mut trip = [(own, arc.cone_own), (other, other_cone), (r, arc.cone_other)];
                    trip.sort_unstable_by_key(|e| e.0);
                    (
                        VertKey::Three {
                            sites: [trip[0].0, trip[1].0, trip[2].0],
                            cones: [trip[0].1, trip[1].1, trip[2].1],
                        },
                        ExactSpec::Three,
                    )
                }
                Edge::Wall(side) => (
                    VertKey::WallX { pair: [a, b], side, piece: bis.piece_canonical(jv) },
                    ExactSpec::WallX { cones: (piece.cone_p as u8, piece.cone_q as u8), side },
                ),
            };
            per_arc[i].push(crossings.len());
            crossings.push(Crossing {
                vert: NewVert { key, spec, pos: z, err: zerr },
                arc: i,
                piece: jv,
                leaves: false,
                curve_pos: 0,
            });
        }

        // Order the arc's crossings along the walk direction.
        let order_err = sort_fallible(&mut per_arc[i], |&x, &y| {
            along_cmp(
                cdir,
                (crossings[x].vert.pos, crossings[x].vert.err),
                (crossings[y].vert.pos, crossings[y].vert.err),
                &cdir_rat,
                &|| pred::vert_exact(d, &crossings[x].vert.key, &crossings[x].vert.spec),
                &|| pred::vert_exact(d, &crossings[y].vert.key, &crossings[y].vert.spec),
                "coincident crossings on one arc",
            )
        });
        order_err?;
    }

    // Per-arc parity ties the crossing counts to the endpoint sides, and the
    // boundary walk state assigns each crossing its transition direction.
    for i in 0..n_arcs {
        let flips = per_arc[i].len() % 2 == 1;
        if flips != (sides[i] != sides[(i + 1) % n_arcs]) {
            return Err(Tie::with("clip crossing parity mismatch", vec![own as u64, other as u64]));
        }
        let mut state = sides[i];
        for &c in &per_arc[i] {
            crossings[c].leaves = state == Ordering::Less;
            state = if state == Ordering::Less { Ordering::Greater } else { Ordering::Less };
        }
    }

    if crossings.is_empty() {
        return if sides.iter().all(|&s| s == Ordering::Less) {
            Ok(ClipOutcome::Unchanged)
        } else {
            Err(Tie::with("clip empties the cell", vec![own as u64, other as u64]))
        };
    }
    if crossings.len() % 2 == 1 {
        return Err(Tie::with("odd clip crossing count", vec![own as u64, other as u64]));
    }

    // Curve order: piece by piece in the canonical walk direction. The curve
    // arrives from outside the bounded cell, so even positions enter the old
    // cell and crossing 2i pairs with 2i + 1.
    let mut curve_order: Vec<usize> = (0..crossings.len()).collect();
    curve_order.sort_unstable_by_key(|&c| crossings[c].piece);
    let mut k = 0;
    while k < curve_order.len() {
        let mut e = k + 1;
        while e < curve_order.len() && crossings[curve_order[e]].piece == crossings[curve_order[k]].piece {
            e += 1;
        }
        if e - k > 1 {
            let piece = &bis.pieces[crossings[curve_order[k]].piece];
            let pdir_rat = || {
                let (gr, _) = piece_line_rat(g, bis.p, bis.q, piece.cone_p, piece.cone_q);
                RPoint { x: -gr.y, y: gr.x }
            };
            let mut chunk: Vec<usize> = curve_order[k..e].to_vec();
            sort_fallible(&mut chunk, |&x, &y| {
                along_cmp(
                    piece.dir,
                    (crossings[x].vert.pos, crossings[x].vert.err),
                    (crossings[y].vert.pos, crossings[y].vert.err),
                    &pdir_rat,
                    &|| pred::vert_exact(d, &crossings[x].vert.key, &crossings[x].vert.spec),
                    &|| pred::vert_exact(d, &crossings[y].vert.key, &crossings[y].vert.spec),
                    "coincident crossings on the bisector",
                )
            })?;
            curve_order[k..e].copy_from_slice(&chunk);
        }
        k = e;
    }
    for (pos, &c) in curve_order.iter().enumerate() {
        crossings[c].curve_pos = pos;
    }
    // Leaving the owner's side must line up with the owner's walk direction
    // along the curve; anything else means an inconsistent filtered decision.
    for c in &crossings {
        let starts_curve_stretch = (c.curve_pos % 2 == 0) == (own == a);
        if c.leaves != starts_curve_stretch {
            return Err(Tie::with("clip stitch direction mismatch", vec![own as u64, other as u64]));
        }
    }

    // Boundary event ring: each arc's start vertex, then its crossings.
    let mut ring: Vec<Result<usize, usize>> = Vec::new(); // Ok(arc) vertex, Err(crossing)
    let mut ring_pos = vec![0usize; crossings.len()];
    for i in 0..n_arcs {
        ring.push(Ok(i));
        for &c in &per_arc[i] {
            ring_pos[c] = ring.len();
            ring.push(Err(c));
        }
    }

    let partner = |c: usize| -> usize {
        let p = crossings[c].curve_pos;
        curve_order[p ^ 1]
    };

    let start = (0..crossings.len()).find(|&c| !crossings[c].leaves).expect("entering crossing exists");
    let mut out: Vec<TempArc> = Vec::new();
    let mut used = vec![false; crossings.len()];
    let mut cur = start;
    loop {
        // Kept stretch: from the entering crossing along the old boundary.
        used[cur] = true;
        let arc = &boundary.arcs[crossings[cur].arc];
        out.push(TempArc {
            v: TempVert::New(crossings[cur].vert.clone()),
            edge: arc.edge,
            cone_own: arc.cone_own,
            cone_other: arc.cone_other,
        });
        let mut rp = ring_pos[cur];
        let exit = loop {
            rp = (rp + 1) % ring.len();
            match ring[rp] {
                Ok(i) => {
                    debug_assert_eq!(sides[i], Ordering::Less, "kept vertex on the wrong side");
                    out.push(boundary.arcs[i].clone());
                }
                Err(c) => break c,
            }
        };
        debug_assert!(crossings[exit].leaves);
        if used[exit] {
            return Err(Tie::with("clip stitch revisits a crossing", vec![own as u64, other as u64]));
        }
        used[exit] = true;

        // Curve stretch: from the exit to its paired crossing, walking the
        // bisector with the owner on the left, emitting bends in between.
        let entry = partner(exit);
        let (jy, jz) = (crossings[exit].piece, crossings[entry].piece);
        if own == a {
            out.push(curve_arc(bis, own == a, TempVert::New(crossings[exit].vert.clone()), jy, other));
            for j in jy..jz {
                out.push(curve_arc(bis, own == a, TempVert::New(bend_vert(d, bis, a, b, j)), j + 1, other));
            }
        } else {
            out.push(curve_arc(bis, own == a, TempVert::New(crossings[exit].vert.clone()), jy, other));
            for j in (jz..jy).rev() {
                out.push(curve_arc(bis, own == a, TempVert::New(bend_vert(d, bis, a, b, j)), j, other));
            }
        }
        if entry == start {
            break;
        }
        if used[entry] {
            return Err(Tie::with("clip stitch revisits a crossing", vec![own as u64, other as u64]));
        }
        cur = entry;
    }
    if used.iter().any(|u| !u) {
        return Err(Tie::with("clip produced disconnected pieces", vec![own as u64, other as u64]));
    }
    Ok(ClipOutcome::Changed(TempBoundary { arcs: out }))
}

fn curve_arc(bis: &Bisector, own_is_first: bool, v: TempVert, piece: usize, other: SiteId) -> TempArc {
    let p = &bis.pieces[piece];
    let (cone_own, cone_other) = if own_is_first {
        (p.cone_p as u8, p.cone_q as u8)
    } else {
        (p.cone_q as u8, p.cone_p as u8)
    };
    TempArc { v, edge: Edge::Site(other), cone_own, cone_other }
}

/// New vertex for bend `j` of the pair's bisector, with a refined position.
fn bend_vert(d: &Diagram, bis: &Bisector, a: SiteId, b: SiteId, j: usize) -> NewVert {
    let g = &d.gauge;
    let piece = &bis.pieces[j];
    let bend = &bis.bends[j];
    let key = VertKey::Bend { pair: [a, b], k: bis.bend_canonical(j) };
    let spec = ExactSpec::Bend {
        cones: (piece.cone_p as u8, piece.cone_q as u8),
        ray_of_first: bend.owner == RayOwner::P,
        ray: bend.ray as u8,
    };
    let site = bis.site(bend.owner);
    let m = g.unit().vert(bend.ray).rot90();
    let exact = || {
        let l = piece_line_rat(g, bis.p, bis.q, piece.cone_p, piece.cone_q);
        let r = ray_line_rat(g, site, bend.ray);
        exact::solve2(&l.0.x, &l.0.y, &r.0.x, &r.0.y, &l.1, &r.1)
    };
    let (pos, err) =
        cross_refined((piece.grad, piece.rhs), (m, m.dot(site)), exact).expect("bend lines cross by construction");
    NewVert { key, spec, pos, err }
}

/// Compares two uncertain points along a direction, escalating to exact
/// rational comparison inside the error band. Exact equality is a tie.
#[allow(clippy::too_many_arguments)]
pub(crate) fn along_cmp(
    dir: Point,
    x: (Point, f64),
    y: (Point, f64),
    exact_dir: &dyn Fn() -> RPoint,
    exact_x: &dyn Fn() -> RPoint,
    exact_y: &dyn Fn() -> RPoint,
    ctx: &'static str,
) -> GeomResult<Ordering> {
    let tx = dir.dot(x.0);
    let ty = dir.dot(y.0);
    let l1 = dir.x.abs() + dir.y.abs();
    let mag = dir.x.abs() * (x.0.x.abs() + y.0.x.abs()) + dir.y.abs() * (x.0.y.abs() + y.0.y.abs());
    let band = FILTER_BAND * mag.max(f64::MIN_POSITIVE) + l1 * (x.1 + y.1);
    let diff = tx - ty;
    if diff.abs() > band {
        return Ok(if diff > 0.0 { Ordering::Greater } else { Ordering::Less });
    }
    let dr = exact_dir();
    let tx: Rat = dr.dot(&exact_x());
    let ty: Rat = dr.dot(&exact_y());
    match tx.cmp(&ty) {
        Ordering::Equal => Err(Tie::new(ctx)),
        o => Ok(o),
    }
}

/// Insertion sort with a fallible comparator; exact equality aborts.
fn sort_fallible<T: Copy>(
    items: &mut [T],
    mut cmp: impl FnMut(&T, &T) -> GeomResult<Ordering>,
) -> GeomResult<()> {
    for i in 1..items.len() {
        let mut j = i;
        while j > 0 {
            match cmp(&items[j - 1], &items[j])? {
                Ordering::Greater => {
                    items.swap(j - 1, j);
                    j -= 1;
                }
                _ => break,
            }
        }
    }
    Ok(())
}

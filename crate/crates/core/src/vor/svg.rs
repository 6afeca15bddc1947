//! SVG snapshots of diagrams.

use super::Diagram;
use std::fmt::Write;

/// Renders present cells, site markers, and the input square into a
/// standalone SVG image `px` pixels wide.
pub fn render(d: &Diagram, px: u32) -> String {
    let extent = d
        .frame
        .dummies
        .iter()
        .map(|p| p.norm_inf())
        .fold(d.frame.half, f64::max)
        * 1.08;
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{px}\" height=\"{px}\" \
         viewBox=\"{:.4} {:.4} {:.4} {:.4}\">",
        -extent,
        -extent,
        2.0 * extent,
        2.0 * extent
    );
    let sw = extent / 400.0;
    let _ = write!(s, "<g transform=\"scale(1,-1)\" stroke-width=\"{sw:.5}\">");
    for id in d.present_sites() {
        let cell = d.cell(id);
        let mut path = String::new();
        for (k, arc) in cell.arcs.iter().enumerate() {
            let p = d.vert(arc.v).pos;
            let _ = write!(path, "{}{:.6} {:.6} ", if k == 0 { "M" } else { "L" }, p.x, p.y);
        }
        let fill = if d.is_dummy(id) {
            "#eeeeee".to_string()
        } else {
            format!("hsl({} 65% 82%)", (id as u32 * 137) % 360)
        };
        let _ = write!(s, "<path d=\"{path}Z\" fill=\"{fill}\" stroke=\"#444444\"/>");
    }
    let h = d.frame.half;
    let _ = write!(
        s,
        "<rect x=\"{:.4}\" y=\"{:.4}\" width=\"{:.4}\" height=\"{:.4}\" \
         fill=\"none\" stroke=\"#0044cc\" stroke-dasharray=\"{:.5}\"/>",
        -h,
        -h,
        2.0 * h,
        2.0 * h,
        8.0 * sw
    );
    let r_site = extent / 150.0;
    for id in d.present_sites() {
        let p = d.site(id);
        let color = if d.is_dummy(id) { "#999999" } else { "#aa2222" };
        let _ = write!(
            s,
            "<circle cx=\"{:.6}\" cy=\"{:.6}\" r=\"{:.5}\" fill=\"{color}\"/>",
            p.x, p.y, r_site
        );
    }
    let r_vert = extent / 320.0;
    for (_, rec) in d.live_verts() {
        let _ = write!(
            s,
            "<circle cx=\"{:.6}\" cy=\"{:.6}\" r=\"{:.5}\" fill=\"#222222\"/>",
            rec.pos.x, rec.pos.y, r_vert
        );
    }
    s.push_str("</g></svg>");
    s
}

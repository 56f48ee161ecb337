//! SVG snapshots: the trellis wall seen face-on, and per-view pipeline overlays.

use std::fmt::Write;

use nalgebra::Point3;
use prune_core::detect::DetectionSet;
use prune_core::percept::{InstanceClass, InstanceMask};
use prune_core::raster::Mask;
use prune_core::world::{ground_truth_targets, BranchClass, TrellisConfig, WorldModel};

const PX_PER_M: f64 = 200.0;
const MARGIN: f64 = 20.0;

fn branch_color(c: BranchClass) -> &'static str {
    match c {
        BranchClass::Leader => "#6b4226",
        BranchClass::SideBranch => "#2e8b57",
        BranchClass::Spur => "#d2a000",
        BranchClass::Wire => "#777777",
        BranchClass::Post => "#444444",
        BranchClass::Other => "#9999cc",
    }
}

fn instance_color(c: InstanceClass) -> &'static str {
    match c {
        InstanceClass::Leader => "#8b5a2b",
        InstanceClass::SideBranch => "#3cb371",
        InstanceClass::Spur => "#e0b000",
        InstanceClass::Other => "#9999cc",
        InstanceClass::NonBranch => "#999999",
    }
}

/// In-plane coordinates: row position and slope distance.
fn plane_coords(t: &TrellisConfig, p: &Point3<f64>) -> (f64, f64) {
    let base = Point3::new(p.x, t.foot_y_m, 0.0);
    (p.x, (p - base).dot(&t.up()))
}

/// Face-on view of the trellis: wires, posts, branches and cut targets.
pub fn render_scene(world: &WorldModel, row_x: [f64; 2]) -> String {
    let t = &world.trellis;
    let w = (row_x[1] - row_x[0]) * PX_PER_M + 2.0 * MARGIN;
    let h = t.row_height_m * PX_PER_M + 2.0 * MARGIN;
    let map = |x: f64, s: f64| (MARGIN + (x - row_x[0]) * PX_PER_M, MARGIN + (t.row_height_m - s) * PX_PER_M);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.1} {h:.1}">"#);
    let _ = writeln!(out, r##"<rect x="0" y="0" width="{w:.1}" height="{h:.1}" fill="#fbfbf6"/>"##);
    let (x0, y0) = map(row_x[0], t.row_height_m);
    let _ = writeln!(
        out,
        r##"<rect class="trellis" x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#bbbbbb"/>"##,
        (row_x[1] - row_x[0]) * PX_PER_M,
        t.row_height_m * PX_PER_M
    );
    for &wh in &t.wire_heights_m {
        let (a, y) = map(row_x[0], wh);
        let (b, _) = map(row_x[1], wh);
        let _ = writeln!(out, r##"<line class="wire-line" x1="{a:.1}" y1="{y:.1}" x2="{b:.1}" y2="{y:.1}" stroke="#cccccc" stroke-dasharray="4 3"/>"##);
    }
    for b in &world.branches {
        let pts: Vec<String> = b
            .centerline
            .iter()
            .map(|p| {
                let (x, s) = plane_coords(t, p);
                let (u, v) = map(x, s);
                format!("{u:.1},{v:.1}")
            })
            .collect();
        let r = b.radius_m.iter().cloned().fold(0.0, f64::max);
        let _ = writeln!(
            out,
            r#"<polyline class="{}" data-id="{}" points="{}" fill="none" stroke="{}" stroke-width="{:.2}" stroke-linecap="round"/>"#,
            b.class.as_str(),
            b.id,
            pts.join(" "),
            branch_color(b.class),
            (2.0 * r * PX_PER_M).max(0.8)
        );
    }
    for tg in ground_truth_targets(world) {
        let (x, s) = plane_coords(t, &tg.target_point);
        let (u, v) = map(x, s);
        let _ = writeln!(
            out,
            r##"<path class="target" d="M{:.1},{:.1} l8,8 m-8,0 l8,-8" stroke="#d62728" stroke-width="2"/>"##,
            u - 4.0,
            v - 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn mask_rects(out: &mut String, m: &Mask, color: &str, class: &str) {
    let _ = writeln!(out, r#"<g class="{class}" fill="{color}" fill-opacity="0.7">"#);
    for v in 0..m.height {
        let mut u = 0;
        while u < m.width {
            if m.get(u, v) {
                let start = u;
                while u < m.width && m.get(u, v) {
                    u += 1;
                }
                let _ = writeln!(out, r#"<rect x="{start}" y="{v}" width="{}" height="1"/>"#, u - start);
            } else {
                u += 1;
            }
        }
    }
    out.push_str("</g>\n");
}

/// Masks, fitted lines and pruning points of one view, in pixel coordinates.
pub fn render_view(width: u32, height: u32, instances: &[InstanceMask], det: &DetectionSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#);
    let _ = writeln!(out, r##"<rect x="0" y="0" width="{width}" height="{height}" fill="#101010"/>"##);
    for inst in instances {
        let class = format!("{:?}", inst.class).to_lowercase();
        mask_rects(&mut out, &inst.mask, instance_color(inst.class), &class);
    }
    for s in &det.sides {
        let [a, b] = s.endpoints();
        let _ = writeln!(out, r##"<line class="side-fit" x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ffffff" stroke-width="1.5"/>"##, a.x, a.y, b.x, b.y);
    }
    for l in &det.leaders {
        let [a, b] = l.segment.endpoints();
        let _ = writeln!(out, r##"<line class="leader-fit" x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ffcc66" stroke-width="1.5"/>"##, a.x, a.y, b.x, b.y);
    }
    for c in &det.candidates {
        let _ = writeln!(out, r##"<circle class="join" cx="{:.1}" cy="{:.1}" r="4" fill="none" stroke="#66ccff" stroke-width="2"/>"##, c.join_pixel.x, c.join_pixel.y);
        let _ = writeln!(out, r##"<circle class="candidate" cx="{:.1}" cy="{:.1}" r="6" fill="none" stroke="#ff3030" stroke-width="2.5"/>"##, c.pixel.x, c.pixel.y);
    }
    out.push_str("</svg>\n");
    out
}

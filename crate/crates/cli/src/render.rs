//! Static SVG figures: the 2D input, and front and side views in 3D.

use std::fmt::Write;

use poselift_core::geometry::procrustes_align;
use poselift_core::{Pose3D, PoseRecord, SkeletonTopology};

const PANEL: f64 = 260.0;
const MARGIN: f64 = 20.0;

fn bone_colour(topology: &SkeletonTopology, child: usize) -> &'static str {
    let name = &topology.joint_names()[child];
    if name.starts_with("l_") {
        "#1f77b4"
    } else if name.starts_with("r_") {
        "#d62728"
    } else {
        "#333333"
    }
}

/// Maps point sets into a panel with a shared uniform scale, y down.
struct Frame {
    cx: f64,
    cy: f64,
    scale: f64,
    x0: f64,
}

impl Frame {
    fn fit(points: &[[f64; 2]], x0: f64) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points.iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let scale = if span > 0.0 && span.is_finite() { (PANEL - 2.0 * MARGIN) / span } else { 1.0 };
        Self {
            cx: if lo[0].is_finite() { (lo[0] + hi[0]) / 2.0 } else { 0.0 },
            cy: if lo[1].is_finite() { (lo[1] + hi[1]) / 2.0 } else { 0.0 },
            scale,
            x0,
        }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            self.x0 + PANEL / 2.0 + (p[0] - self.cx) * self.scale,
            PANEL / 2.0 + (p[1] - self.cy) * self.scale,
        )
    }
}

fn skeleton(out: &mut String, topology: &SkeletonTopology, pts: &[[f64; 2]], frame: &Frame, dashed: bool) {
    let dash = if dashed { " stroke-dasharray=\"4 3\" opacity=\"0.6\"" } else { "" };
    for &(a, b) in topology.bones() {
        let (x1, y1) = frame.map(pts[a]);
        let (x2, y2) = frame.map(pts[b]);
        let _ = writeln!(
            out,
            "  <line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{}\" stroke-width=\"2.5\"{dash}/>",
            bone_colour(topology, b)
        );
    }
    if !dashed {
        for p in pts {
            let (x, y) = frame.map(*p);
            let _ = writeln!(out, "  <circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"#000\"/>");
        }
    }
}

fn view(pose: &Pose3D, side: bool) -> Vec<[f64; 2]> {
    pose.coords.iter().map(|p| if side { [p[2], p[1]] } else { [p[0], p[1]] }).collect()
}

/// One figure per record. The ground truth, when present, is drawn dashed;
/// a prediction is aligned onto it first.
pub fn render_svg(record: &PoseRecord, prediction: Option<&Pose3D>, topology: &SkeletonTopology) -> String {
    let gt = record.pose_3d().map(|p| p.root_centered());
    let pred = match (prediction, &gt) {
        (Some(p), Some(g)) => procrustes_align(&p.root_centered(), g).ok().or_else(|| Some(p.root_centered())),
        (Some(p), None) => Some(p.root_centered()),
        _ => None,
    };
    let mut out = String::new();
    let width = 3.0 * PANEL;
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{PANEL}\" viewBox=\"0 0 {width} {PANEL}\">"
    );
    let _ = writeln!(out, "  <rect width=\"{width}\" height=\"{PANEL}\" fill=\"#fff\"/>");
    let _ = writeln!(out, "  <title>{}</title>", record.id.replace('&', "&amp;").replace('<', "&lt;"));

    let frame = Frame::fit(&record.joints_2d, 0.0);
    skeleton(&mut out, topology, &record.joints_2d, &frame, false);

    for (k, side) in [false, true].into_iter().enumerate() {
        let x0 = PANEL * (k + 1) as f64;
        let mut all = Vec::new();
        let g = gt.as_ref().map(|g| view(g, side));
        let p = pred.as_ref().map(|p| view(p, side));
        all.extend(g.iter().flatten());
        all.extend(p.iter().flatten());
        let frame = Frame::fit(&all, x0);
        if let Some(g) = &g {
            skeleton(&mut out, topology, g, &frame, p.is_some());
        }
        if let Some(p) = &p {
            skeleton(&mut out, topology, p, &frame, false);
        }
    }
    for (k, label) in ["2D input", "3D front", "3D side"].iter().enumerate() {
        let _ = writeln!(
            out,
            "  <text x=\"{:.1}\" y=\"14\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#555\">{label}</text>",
            PANEL * k as f64 + 6.0
        );
    }
    out.push_str("</svg>\n");
    out
}

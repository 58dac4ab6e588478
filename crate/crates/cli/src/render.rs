//! SVG drawings of assemblies and feature images.

use std::fmt::Write as _;

use blockforge::env::{Assembly, Task};
use blockforge::features::FeatureImage;
use blockforge::geometry::{world_polygon, ConstructionSpace, Placement};

const SCENE_PX: f64 = 400.0;
const PANEL_PX: f64 = 200.0;
const LABEL_PX: f64 = 36.0;

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

struct Frame {
    space: ConstructionSpace,
    ox: f64,
    oy: f64,
    scale: f64,
}

impl Frame {
    fn new(ox: f64, oy: f64, size: f64) -> Self {
        let space = ConstructionSpace::BENCHMARK;
        let scale = size / (space.x_max - space.x_min).max(space.z_max - space.z_min);
        Self { space, ox, oy, scale }
    }

    fn px(&self, x: f64, z: f64) -> (f64, f64) {
        (
            self.ox + (x - self.space.x_min) * self.scale,
            self.oy + (self.space.z_max - z) * self.scale,
        )
    }
}

fn polygon(out: &mut String, f: &Frame, p: &Placement, class: &str, fill: &str) {
    let pts: Vec<String> = world_polygon(p)
        .iter()
        .map(|v| {
            let (x, y) = f.px(v.x, v.z);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    writeln!(
        out,
        "<polygon class=\"{class}\" points=\"{}\" fill=\"{fill}\" stroke=\"#333\" stroke-width=\"1\"/>",
        pts.join(" ")
    )
    .expect("string write");
}

fn scene(out: &mut String, f: &Frame, task: &Task, state: &Assembly, highlight: Option<&Placement>) {
    for o in &task.obstacles {
        let (x, y) = f.px(o.center.x - o.half_side, o.center.z + o.half_side);
        let s = 2.0 * o.half_side * f.scale;
        writeln!(
            out,
            "<rect class=\"obstacle\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{s:.2}\" height=\"{s:.2}\" fill=\"#c44\" fill-opacity=\"0.6\"/>"
        )
        .expect("string write");
    }
    for p in state.placements() {
        polygon(out, f, p, "block", "#9bd");
    }
    if let Some(a) = highlight {
        polygon(out, f, a, "action", "#fb4");
    }
    for t in &task.targets {
        let (x, y) = f.px(t.x, t.z);
        writeln!(out, "<circle class=\"target\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"#2a2\"/>").expect("string write");
    }
    let (x0, y0) = f.px(f.space.x_min, f.space.z_min);
    let (x1, _) = f.px(f.space.x_max, f.space.z_min);
    writeln!(out, "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"black\" stroke-width=\"2\"/>")
        .expect("string write");
}

/// Blocks as polygons, targets as points, obstacles as squares.
pub fn assembly_svg(task: &Task, state: &Assembly) -> String {
    let mut s = header(SCENE_PX, SCENE_PX + 20.0);
    writeln!(s, "<text x=\"6\" y=\"14\" font-size=\"12\" font-family=\"monospace\">{}</text>", task.id).expect("string write");
    scene(&mut s, &Frame::new(0.0, 20.0, SCENE_PX), task, state, None);
    s.push_str("</svg>\n");
    s
}

fn heat_color(t: f64) -> String {
    // white → dark blue
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * (1.0 - t)) as u8;
    let g = (255.0 * (1.0 - 0.8 * t)) as u8;
    let b = (255.0 * (1.0 - 0.4 * t)) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn raster(out: &mut String, img: &FeatureImage, ox: f64, oy: f64, size: f64) {
    let d = img.d();
    let cell = size / d as f64;
    let (lo, hi) = img.min_max();
    let span = hi - lo;
    for j in 0..d {
        for i in 0..d {
            let v = img.get(i, j);
            let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
            if t == 0.0 && lo >= 0.0 {
                continue;
            }
            let x = ox + i as f64 * cell;
            let y = oy + (d - 1 - j) as f64 * cell;
            writeln!(
                out,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                cell + 0.05,
                cell + 0.05,
                heat_color(t)
            )
            .expect("string write");
        }
    }
}

pub struct Panel<'a> {
    pub title: &'a str,
    pub image: &'a FeatureImage,
}

/// A row of labelled raster panels, each annotated with its value range.
pub fn panels_svg(caption: &str, panels: &[Panel]) -> String {
    let w = PANEL_PX * panels.len() as f64 + 10.0 * (panels.len() as f64 + 1.0);
    let h = PANEL_PX + LABEL_PX + 20.0;
    let mut s = header(w, h);
    writeln!(s, "<text x=\"10\" y=\"14\" font-size=\"12\" font-family=\"monospace\">{caption}</text>").expect("string write");
    for (k, p) in panels.iter().enumerate() {
        let ox = 10.0 + k as f64 * (PANEL_PX + 10.0);
        let oy = 20.0;
        writeln!(s, "<g class=\"panel\" data-title=\"{}\">", p.title).expect("string write");
        writeln!(
            s,
            "<rect x=\"{ox}\" y=\"{oy}\" width=\"{PANEL_PX}\" height=\"{PANEL_PX}\" fill=\"none\" stroke=\"#999\"/>"
        )
        .expect("string write");
        raster(&mut s, p.image, ox, oy, PANEL_PX);
        let (lo, hi) = p.image.min_max();
        writeln!(
            s,
            "<text x=\"{ox}\" y=\"{:.0}\" font-size=\"11\" font-family=\"monospace\">{}</text>",
            oy + PANEL_PX + 14.0,
            p.title
        )
        .expect("string write");
        writeln!(
            s,
            "<text class=\"range\" x=\"{ox}\" y=\"{:.0}\" font-size=\"10\" font-family=\"monospace\">min={lo:.4} max={hi:.4}</text>",
            oy + PANEL_PX + 28.0
        )
        .expect("string write");
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

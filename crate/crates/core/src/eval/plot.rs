//! Self-contained SVG output for learning curves, trajectories and
//! feasibility heatmaps.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("nothing to plot: {0}")]
    Empty(&'static str),
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn header(out: &mut String, w: f64, h: f64) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    )
    .expect("string write");
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#).expect("string write");
}

/// Learning curves of one method over several seeds, sampled at shared x.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveBundle {
    pub label: String,
    pub xs: Vec<f64>,
    /// One y series per seed, each as long as `xs`.
    pub runs: Vec<Vec<f64>>,
}

impl CurveBundle {
    /// Mean and population standard deviation at each x.
    pub fn mean_std(&self) -> Vec<(f64, f64)> {
        (0..self.xs.len())
            .map(|i| {
                let ys: Vec<f64> = self.runs.iter().filter_map(|r| r.get(i).copied()).collect();
                let n = ys.len().max(1) as f64;
                let m = ys.iter().sum::<f64>() / n;
                (m, (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n).sqrt())
            })
            .collect()
    }
}

/// Horizontal axis: linear on `[0, split]` over the left half, logarithmic
/// on `[split, max]` over the right half. With `split ≥ max` it is linear.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HybridAxis {
    pub split: f64,
    pub max: f64,
}

impl HybridAxis {
    pub fn map(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.max);
        if self.split >= self.max {
            return x / self.max;
        }
        if x <= self.split {
            0.5 * x / self.split
        } else {
            0.5 + 0.5 * (x / self.split).ln() / (self.max / self.split).ln()
        }
    }

    fn ticks(&self) -> Vec<f64> {
        let mut t: Vec<f64> = (0..=4).map(|k| self.split.min(self.max) * k as f64 / 4.0).collect();
        let mut d = self.split * 10.0;
        while d <= self.max * 1.0001 && self.split < self.max {
            t.push(d);
            d *= 10.0;
        }
        t
    }
}

fn fmt_tick(x: f64) -> String {
    if x >= 1e4 {
        format!("{:.0e}", x).replace("e", "e+")
    } else {
        format!("{x:.0}")
    }
}

/// Mean lines with one-standard-deviation bands. `split` switches the
/// x-axis from linear to logarithmic at that value.
pub fn learning_curve_svg(bundles: &[CurveBundle], split: Option<f64>, y_label: &str) -> Result<String, PlotError> {
    if bundles.iter().all(|b| b.xs.is_empty()) {
        return Err(PlotError::Empty("learning curve"));
    }
    let x_max = bundles.iter().flat_map(|b| b.xs.iter().copied()).fold(1.0, f64::max);
    let axis = HybridAxis { split: split.unwrap_or(x_max).min(x_max), max: x_max };
    let stats: Vec<Vec<(f64, f64)>> = bundles.iter().map(|b| b.mean_std()).collect();
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &stats {
        for (m, d) in s {
            y_lo = y_lo.min(m - d);
            y_hi = y_hi.max(m + d);
        }
    }
    if y_hi - y_lo < 1e-9 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let px = |x: f64| MARGIN + axis.map(x) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * MARGIN);
    let mut out = String::new();
    header(&mut out, W, H);
    axes(&mut out);
    for t in axis.ticks() {
        let x = px(t);
        writeln!(out, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ccc"/>"##, MARGIN, H - MARGIN)
            .expect("string write");
        writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, H - MARGIN + 14.0, fmt_tick(t))
            .expect("string write");
    }
    for k in 0..=4 {
        let y = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{y:.2}</text>"#, MARGIN - 4.0, py(y) + 4.0)
            .expect("string write");
    }
    if axis.split < axis.max {
        let x = px(axis.split);
        writeln!(out, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="4 3"/>"##, MARGIN, H - MARGIN)
            .expect("string write");
    }
    for (i, (b, s)) in bundles.iter().zip(&stats).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if b.runs.len() > 1 && b.xs.len() > 1 {
            let upper: Vec<String> = b.xs.iter().zip(s).map(|(x, (m, d))| format!("{:.2},{:.2}", px(*x), py(m + d))).collect();
            let lower: Vec<String> =
                b.xs.iter().zip(s).rev().map(|(x, (m, d))| format!("{:.2},{:.2}", px(*x), py(m - d))).collect();
            writeln!(out, r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, upper.join(" "), lower.join(" "))
                .expect("string write");
        }
        let pts: Vec<String> = b.xs.iter().zip(s).map(|(x, (m, _))| format!("{:.2},{:.2}", px(*x), py(*m))).collect();
        if pts.len() == 1 {
            let (x, (m, _)) = (b.xs[0], s[0]);
            writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(m)).expect("string write");
        } else {
            writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#, pts.join(" "))
                .expect("string write");
        }
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            W - MARGIN - 120.0,
            MARGIN + 14.0 * (i as f64 + 1.0),
            escape(&b.label)
        )
        .expect("string write");
    }
    writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">environment steps</text>"#, W / 2.0, H - 12.0)
        .expect("string write");
    writeln!(out, r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#, H / 2.0, H / 2.0, escape(y_label))
        .expect("string write");
    out.push_str("</svg>\n");
    Ok(out)
}

fn axes(out: &mut String) {
    writeln!(
        out,
        r#"<polyline points="{m},{t} {m},{b} {r},{b}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    )
    .expect("string write");
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pub label: String,
    /// Points in world coordinates.
    pub points: Vec<[f64; 2]>,
}

/// Unit-square world with labelled rectangles, a goal disc and paths.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryScene {
    /// `(lo, hi, fill color, label)`.
    pub rects: Vec<([f64; 2], [f64; 2], String, String)>,
    pub goal: ([f64; 2], f64),
    pub paths: Vec<Polyline>,
}

const SIDE: f64 = 480.0;

fn world_xy(p: [f64; 2]) -> (f64, f64) {
    (MARGIN + p[0] * SIDE, MARGIN + (1.0 - p[1]) * SIDE)
}

pub fn trajectory_svg(scene: &TrajectoryScene) -> Result<String, PlotError> {
    if scene.paths.iter().all(|p| p.points.is_empty()) {
        return Err(PlotError::Empty("trajectory"));
    }
    let side = SIDE + 2.0 * MARGIN;
    let mut out = String::new();
    header(&mut out, side + 140.0, side);
    writeln!(out, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIDE}" height="{SIDE}" fill="none" stroke="black"/>"#)
        .expect("string write");
    for (lo, hi, fill, label) in &scene.rects {
        let (x0, y1) = world_xy(*lo);
        let (x1, y0) = world_xy(*hi);
        writeln!(
            out,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{fill}" fill-opacity="0.45"/>"#,
            x1 - x0,
            y1 - y0
        )
        .expect("string write");
        writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x0 + 4.0, y0 + 13.0, escape(label)).expect("string write");
    }
    let (gx, gy) = world_xy(scene.goal.0);
    writeln!(out, r##"<circle cx="{gx:.2}" cy="{gy:.2}" r="{:.2}" fill="#2ca02c" fill-opacity="0.5"/>"##, scene.goal.1 * SIDE)
        .expect("string write");
    for (i, path) in scene.paths.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = path
            .points
            .iter()
            .map(|&p| {
                let (x, y) = world_xy(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"/>"#, pts.join(" "))
            .expect("string write");
        if let Some(&p) = path.points.first() {
            let (x, y) = world_xy(p);
            writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#).expect("string write");
        }
        writeln!(out, r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#, side + 4.0, MARGIN + 16.0 * (i as f64 + 1.0), escape(&path.label))
            .expect("string write");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Values on a regular `nx × ny` grid over the unit square, row-major
/// with row 0 at the bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapGrid {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

fn heat_color(v: f64) -> String {
    // −1 red, 0 white, +1 blue
    let t = v.clamp(-1.0, 1.0);
    let (r, g, b) = if t < 0.0 {
        (255.0, 255.0 * (1.0 + t), 255.0 * (1.0 + t))
    } else {
        (255.0 * (1.0 - t), 255.0 * (1.0 - t), 255.0)
    };
    format!("rgb({:.0},{:.0},{:.0})", r, g, b)
}

/// Colored cells plus the zero level set drawn on cell edges that separate
/// a negative cell from a non-negative one.
pub fn feasibility_heatmap_svg(grid: &HeatmapGrid, title: &str) -> Result<String, PlotError> {
    if grid.nx == 0 || grid.ny == 0 || grid.values.len() != grid.nx * grid.ny {
        return Err(PlotError::Empty("heatmap"));
    }
    let side = SIDE + 2.0 * MARGIN;
    let (cw, ch) = (SIDE / grid.nx as f64, SIDE / grid.ny as f64);
    let at = |i: usize, j: usize| grid.values[j * grid.nx + i];
    let mut out = String::new();
    header(&mut out, side, side);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let x = MARGIN + i as f64 * cw;
            let y = MARGIN + (grid.ny - 1 - j) as f64 * ch;
            writeln!(out, r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#, cw + 0.05, ch + 0.05, heat_color(at(i, j)))
                .expect("string write");
        }
    }
    let mut edges = String::new();
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let neg = at(i, j) < 0.0;
            let x = MARGIN + i as f64 * cw;
            let y_top = MARGIN + (grid.ny - 1 - j) as f64 * ch;
            if i + 1 < grid.nx && (at(i + 1, j) < 0.0) != neg {
                write!(edges, "M{:.2},{:.2}V{:.2}", x + cw, y_top, y_top + ch).expect("string write");
            }
            if j + 1 < grid.ny && (at(i, j + 1) < 0.0) != neg {
                write!(edges, "M{:.2},{:.2}H{:.2}", x, y_top, x + cw).expect("string write");
            }
        }
    }
    if !edges.is_empty() {
        writeln!(out, r#"<path d="{edges}" fill="none" stroke="black" stroke-width="2"/>"#).expect("string write");
    }
    writeln!(out, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIDE}" height="{SIDE}" fill="none" stroke="black"/>"#)
        .expect("string write");
    writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, side / 2.0, MARGIN - 12.0, escape(title))
        .expect("string write");
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hybrid_axis_is_monotone_and_split_in_the_middle() {
        let a = HybridAxis { split: 1e5, max: 1e6 };
        assert_eq!(a.map(0.0), 0.0);
        assert_eq!(a.map(1e5), 0.5);
        assert!((a.map(1e6) - 1.0).abs() < 1e-12);
        assert!(a.map(5e4) < a.map(2e5));
        let lin = HybridAxis { split: 10.0, max: 10.0 };
        assert_eq!(lin.map(5.0), 0.5);
    }

    #[test]
    fn single_point_curve_has_one_marker() {
        let b = CurveBundle { label: "m".into(), xs: vec![3.0], runs: vec![vec![0.5]] };
        let svg = learning_curve_svg(&[b], None, "success").unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(learning_curve_svg(&[], None, "y").is_err());
    }

    #[test]
    fn bundle_draws_band() {
        let b = CurveBundle { label: "m".into(), xs: vec![0.0, 1.0], runs: vec![vec![0.0, 1.0], vec![1.0, 1.0]] };
        assert_eq!(b.mean_std(), vec![(0.5, 0.5), (1.0, 0.0)]);
        let svg = learning_curve_svg(&[b], Some(1e5), "success").unwrap();
        assert!(svg.contains("<polygon"));
    }

    #[test]
    fn heatmap_marks_sign_boundary() {
        let g = HeatmapGrid { nx: 2, ny: 1, values: vec![-0.5, 0.5] };
        let svg = feasibility_heatmap_svg(&g, "V").unwrap();
        assert!(svg.contains("<path"));
        let flat = HeatmapGrid { nx: 2, ny: 1, values: vec![0.5, 0.5] };
        assert!(!feasibility_heatmap_svg(&flat, "V").unwrap().contains("<path"));
    }
}

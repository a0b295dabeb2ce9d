//! Static SVG figures: curvature violins per action and rotation curves.

use std::fmt::Write;

use spinekin::skeleton::{rotation_coordinates, LUMBAR_JOINTS, NECK_JOINT};
use spinekin::JointTrajectory;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 50.0;
const KDE_POINTS: usize = 64;

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self { lo: -1.0, hi: 1.0 };
        }
        let pad = ((hi - lo) * 0.05).max(0.5);
        Self {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    /// Maps a value to a y pixel inside a panel whose top is `top`.
    fn y(&self, v: f64, top: f64) -> f64 {
        top + PANEL_H - (v - self.lo) / (self.hi - self.lo) * PANEL_H
    }
}

fn header(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n\
<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn frame(out: &mut String, left: f64, top: f64, title: &str, axis: &Axis) {
    let _ = writeln!(
        out,
        "<rect x=\"{left:.2}\" y=\"{top:.2}\" width=\"{PANEL_W:.2}\" height=\"{PANEL_H:.2}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"13\">{title}</text>",
        left + PANEL_W / 2.0,
        top - 10.0
    );
    for i in 0..=4 {
        let v = axis.lo + (axis.hi - axis.lo) * i as f64 / 4.0;
        let y = axis.y(v, top);
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{left:.2}\" y2=\"{y:.2}\" stroke=\"black\"/>\
<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.1}</text>",
            left - 4.0,
            left - 6.0,
            y + 4.0
        );
    }
}

fn gaussian_kde(values: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(2.0)).sqrt();
    // Silverman's rule; constant data gets a nominal width
    let bw = if sd > 0.0 { 1.06 * sd * n.powf(-0.2) } else { 0.5 };
    grid.iter()
        .map(|&x| {
            values
                .iter()
                .map(|&v| (-0.5 * ((x - v) / bw).powi(2)).exp())
                .sum::<f64>()
        })
        .collect()
}

/// `groups` holds (action, valid LLA samples, valid TKA samples) in degrees.
pub fn curvature_violins(groups: &[(String, Vec<f64>, Vec<f64>)]) -> String {
    let width = 2.0 * PANEL_W + 3.0 * MARGIN;
    let height = PANEL_H + 2.5 * MARGIN;
    let mut out = header(width, height);
    for (panel, title) in ["LLA (deg)", "TKA (deg)"].iter().enumerate() {
        let pick = |g: &(String, Vec<f64>, Vec<f64>)| if panel == 0 { g.1.clone() } else { g.2.clone() };
        let axis = Axis::new(groups.iter().flat_map(|g| pick(g).into_iter()));
        let left = MARGIN + panel as f64 * (PANEL_W + MARGIN);
        let top = MARGIN;
        frame(&mut out, left, top, title, &axis);
        let slot = PANEL_W / groups.len().max(1) as f64;
        for (i, g) in groups.iter().enumerate() {
            let values: Vec<f64> = pick(g).into_iter().filter(|v| v.is_finite()).collect();
            let cx = left + slot * (i as f64 + 0.5);
            let _ = writeln!(
                out,
                "<text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
                top + PANEL_H + 16.0,
                g.0
            );
            if values.is_empty() {
                continue;
            }
            let grid: Vec<f64> = (0..KDE_POINTS)
                .map(|k| axis.lo + (axis.hi - axis.lo) * k as f64 / (KDE_POINTS - 1) as f64)
                .collect();
            let density = gaussian_kde(&values, &grid);
            let peak = density.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            let half = 0.4 * slot;
            let mut path = String::new();
            for (k, (&x, &d)) in grid.iter().zip(&density).enumerate() {
                let _ = write!(
                    path,
                    "{}{:.2},{:.2} ",
                    if k == 0 { "M" } else { "L" },
                    cx + half * d / peak,
                    axis.y(x, top)
                );
            }
            for (&x, &d) in grid.iter().zip(&density).rev() {
                let _ = write!(path, "L{:.2},{:.2} ", cx - half * d / peak, axis.y(x, top));
            }
            let color = PALETTE[i % PALETTE.len()];
            let _ = writeln!(
                out,
                "<path d=\"{}Z\" fill=\"{color}\" fill-opacity=\"0.5\" stroke=\"{color}\"/>",
                path
            );
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let median = sorted[sorted.len() / 2];
            let y = axis.y(median, top);
            let _ = writeln!(
                out,
                "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"black\" stroke-width=\"2\"/>",
                cx - 0.3 * half,
                cx + 0.3 * half
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// One panel per rotation axis with one curve per intervertebral joint and
/// the neck, degrees against time. Missing coordinates are left out.
pub fn rotation_curves(trajectory: &JointTrajectory) -> String {
    let joints: Vec<&str> = LUMBAR_JOINTS
        .iter()
        .copied()
        .chain(std::iter::once(NECK_JOINT))
        .collect();
    let titles = [
        "flexion/extension (deg)",
        "lateral bending (deg)",
        "axial rotation (deg)",
    ];
    let width = 3.0 * PANEL_W + 4.0 * MARGIN + 90.0;
    let height = PANEL_H + 2.5 * MARGIN;
    let mut out = header(width, height);
    let times: Vec<f64> = trajectory.states.iter().map(|s| s.timestamp).collect();
    let (t0, t1) = match (times.first(), times.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a, a + 1.0),
        _ => (0.0, 1.0),
    };
    for (axis_idx, title) in titles.iter().enumerate() {
        let columns: Vec<(usize, Option<usize>)> = joints
            .iter()
            .enumerate()
            .map(|(j, joint)| (j, trajectory.coordinate_index(&rotation_coordinates(joint)[axis_idx])))
            .collect();
        let axis = Axis::new(
            columns
                .iter()
                .filter_map(|(_, c)| *c)
                .flat_map(|c| trajectory.channel(c).into_iter().map(f64::to_degrees)),
        );
        let left = MARGIN + axis_idx as f64 * (PANEL_W + MARGIN);
        let top = MARGIN;
        frame(&mut out, left, top, title, &axis);
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">time (s)</text>",
            left + PANEL_W / 2.0,
            top + PANEL_H + 16.0
        );
        for (j, c) in columns {
            let Some(c) = c else { continue };
            let mut path = String::new();
            for (k, (v, t)) in trajectory.channel(c).iter().zip(&times).enumerate() {
                let x = left + (t - t0) / (t1 - t0) * PANEL_W;
                let _ = write!(
                    path,
                    "{}{x:.2},{:.2} ",
                    if k == 0 { "M" } else { "L" },
                    axis.y(v.to_degrees(), top)
                );
            }
            let _ = writeln!(
                out,
                "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\"/>",
                path.trim_end(),
                PALETTE[j % PALETTE.len()]
            );
        }
    }
    let legend_x = 3.0 * (PANEL_W + MARGIN) + MARGIN;
    for (j, joint) in joints.iter().enumerate() {
        let y = MARGIN + 16.0 * j as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{legend_x:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{}\"/>\
<text x=\"{:.2}\" y=\"{y:.2}\">{joint}</text>",
            y - 9.0,
            PALETTE[j % PALETTE.len()],
            legend_x + 14.0
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use spinekin::SkeletonDefinition;

    #[test]
    fn violins_are_well_formed() {
        let svg = curvature_violins(&[
            ("walk".into(), vec![35.0, 36.0, 37.0], vec![30.0, 31.0]),
            ("sit".into(), vec![], vec![33.0]),
        ]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<path").count(), 3);
    }

    #[test]
    fn rotation_curves_draw_every_triplet() {
        let skel = SkeletonDefinition::default_definition();
        let traj = JointTrajectory::new(
            skel.coordinate_names.clone(),
            (0..5)
                .map(|f| {
                    let mut s = skel.neutral_state();
                    s.timestamp = f as f64 * 0.02;
                    s
                })
                .collect(),
        );
        let svg = rotation_curves(&traj);
        assert_eq!(svg.matches("<path").count(), 21);
        assert!(!svg.contains("NaN"));
    }
}

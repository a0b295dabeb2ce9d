//! Zero-phase low-pass filtering, gap interpolation, stream merging and
//! angle unwrapping.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::skeleton::{JointTrajectory, MarkerTrajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalError {
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),
    #[error("frame rates differ by more than 0.1% ({primary} Hz vs {secondary} Hz)")]
    TimebaseMismatch { primary: f64, secondary: f64 },
    #[error("series shape mismatch: {0}")]
    Shape(String),
}

/// Butterworth low-pass design. Cutoff and frame rate in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub cutoff: f64,
    pub order: usize,
    pub frame_rate: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            cutoff: 6.0,
            order: 4,
            frame_rate: 50.0,
        }
    }
}

impl FilterSpec {
    pub fn new(cutoff: f64, order: usize, frame_rate: f64) -> Result<Self, TemporalError> {
        let spec = Self {
            cutoff,
            order,
            frame_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TemporalError> {
        if !matches!(self.order, 2 | 4 | 8) {
            return Err(TemporalError::InvalidSpec(format!(
                "order must be 2, 4 or 8, got {}",
                self.order
            )));
        }
        if !(self.frame_rate > 0.0) {
            return Err(TemporalError::InvalidSpec("frame_rate must be positive".into()));
        }
        if !(self.cutoff > 0.0 && self.cutoff < 0.5 * self.frame_rate) {
            return Err(TemporalError::InvalidSpec(format!(
                "cutoff {} Hz must lie in (0, {}) Hz",
                self.cutoff,
                0.5 * self.frame_rate
            )));
        }
        Ok(())
    }

    /// Valid runs shorter than this are passed through unfiltered.
    pub fn min_run(&self) -> usize {
        3 * self.order
    }
}

/// One second-order section, transposed direct form II, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

fn design(spec: &FilterSpec) -> Vec<Biquad> {
    let k = (PI * spec.cutoff / spec.frame_rate).tan();
    let n = spec.order;
    (0..n / 2)
        .map(|i| {
            let q = 1.0 / (2.0 * ((2 * i + 1) as f64 * PI / (2 * n) as f64).sin());
            let norm = 1.0 / (1.0 + k / q + k * k);
            let b0 = k * k * norm;
            Biquad {
                b: [b0, 2.0 * b0, b0],
                a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
            }
        })
        .collect()
}

/// Causal cascade over `x`, each section started in its steady state for
/// the first sample.
fn run_cascade(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for s in sections {
        let [b0, b1, b2] = s.b;
        let [a1, a2] = s.a;
        let x0 = y[0];
        let mut z2 = (b2 - a2) * x0;
        let mut z1 = (b1 - a1) * x0 + z2;
        for v in y.iter_mut() {
            let xin = *v;
            let out = b0 * xin + z1;
            z1 = b1 * xin - a1 * out + z2;
            z2 = b2 * xin - a2 * out;
            *v = out;
        }
    }
    y
}

fn reversed(x: &[f64]) -> Vec<f64> {
    x.iter().rev().copied().collect()
}

/// Zero-phase filtering of one contiguous run. The run is extended by odd
/// reflection, filtered forward-then-backward and backward-then-forward, and
/// the two passes are averaged so the operator commutes exactly with time
/// reversal.
fn filter_run(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    let fb = reversed(&run_cascade(sections, &reversed(&run_cascade(sections, &ext))));
    let bf = run_cascade(sections, &reversed(&run_cascade(sections, &reversed(&ext))));
    (pad..pad + n).map(|i| 0.5 * (fb[i] + bf[i])).collect()
}

/// Zero-phase low-pass of one channel. Each valid run of at least
/// `spec.min_run()` samples is filtered independently; shorter runs and
/// invalid samples are returned unchanged.
pub fn lowpass_channel(x: &[f64], valid: &[bool], spec: &FilterSpec) -> Result<Vec<f64>, TemporalError> {
    spec.validate()?;
    if x.len() != valid.len() {
        return Err(TemporalError::Shape(format!(
            "{} samples but {} validity flags",
            x.len(),
            valid.len()
        )));
    }
    let sections = design(spec);
    let mut out = x.to_vec();
    for (start, end) in valid_runs(valid) {
        if end - start >= spec.min_run() {
            let y = filter_run(&sections, &x[start..end], 3 * spec.order);
            out[start..end].copy_from_slice(&y);
        }
    }
    Ok(out)
}

/// Half-open `[start, end)` ranges of consecutive `true` entries.
pub fn valid_runs(valid: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &v) in valid.iter().enumerate() {
        match (v, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, valid.len()));
    }
    runs
}

/// Zero-phase low-pass of a `T × D` series with a `T × D` validity mask.
pub fn zero_phase_lowpass(
    signal: &[Vec<f64>],
    spec: &FilterSpec,
    validity: &[Vec<bool>],
) -> Result<Vec<Vec<f64>>, TemporalError> {
    spec.validate()?;
    if signal.len() != validity.len() {
        return Err(TemporalError::Shape("signal and validity lengths differ".into()));
    }
    let dims = signal.first().map_or(0, |r| r.len());
    if signal.iter().any(|r| r.len() != dims) || validity.iter().any(|r| r.len() != dims) {
        return Err(TemporalError::Shape("ragged series".into()));
    }
    let channels: Vec<Vec<f64>> = (0..dims)
        .into_par_iter()
        .map(|d| {
            let x: Vec<f64> = signal.iter().map(|r| r[d]).collect();
            let v: Vec<bool> = validity.iter().map(|r| r[d]).collect();
            lowpass_channel(&x, &v, spec)
        })
        .collect::<Result<_, _>>()?;
    Ok((0..signal.len())
        .map(|t| channels.iter().map(|c| c[t]).collect())
        .collect())
}

/// Filters every marker coordinate over its valid samples.
pub fn lowpass_markers(traj: &MarkerTrajectory, spec: &FilterSpec) -> Result<MarkerTrajectory, TemporalError> {
    let t = traj.num_frames();
    let signal: Vec<Vec<f64>> = (0..t)
        .map(|f| traj.positions[f].iter().flat_map(|p| [p.x, p.y, p.z]).collect())
        .collect();
    let validity: Vec<Vec<bool>> = (0..t)
        .map(|f| traj.validity[f].iter().flat_map(|&v| [v, v, v]).collect())
        .collect();
    let filtered = zero_phase_lowpass(&signal, spec, &validity)?;
    let mut out = traj.clone();
    for (row, positions) in filtered.iter().zip(out.positions.iter_mut()) {
        for (m, p) in positions.iter_mut().enumerate() {
            *p = Vector3::new(row[3 * m], row[3 * m + 1], row[3 * m + 2]);
        }
    }
    Ok(out)
}

/// Filters every coordinate of a joint trajectory.
pub fn lowpass_joints(traj: &JointTrajectory, spec: &FilterSpec) -> Result<JointTrajectory, TemporalError> {
    let signal: Vec<Vec<f64>> = traj.states.iter().map(|s| s.values.clone()).collect();
    let validity: Vec<Vec<bool>> = signal.iter().map(|r| vec![true; r.len()]).collect();
    let filtered = zero_phase_lowpass(&signal, spec, &validity)?;
    let mut out = traj.clone();
    for (s, v) in out.states.iter_mut().zip(filtered) {
        s.values = v;
    }
    Ok(out)
}

/// Lagrange interpolation through `(xs, ys)` evaluated at `x`.
fn lagrange(xs: &[f64], ys: &[Vector3<f64>], x: f64) -> Vector3<f64> {
    let mut acc = Vector3::zeros();
    for i in 0..xs.len() {
        let mut l = 1.0;
        for j in 0..xs.len() {
            if i != j {
                l *= (x - xs[j]) / (xs[i] - xs[j]);
            }
        }
        acc += ys[i] * l;
    }
    acc
}

/// Fills interior invalid runs of at most `max_gap` frames by polynomial
/// interpolation through up to two valid samples on each side (cubic when
/// both sides have two). Filled samples become valid with the
/// `interpolated` flag set and the smaller flanking confidence. Runs that
/// touch either end of the sequence are left untouched.
pub fn fill_gaps(traj: &MarkerTrajectory, max_gap: usize) -> MarkerTrajectory {
    let mut out = traj.clone();
    let t = traj.num_frames();
    for m in 0..traj.num_markers() {
        let valid: Vec<bool> = (0..t).map(|f| traj.validity[f][m]).collect();
        let mut f = 0;
        while f < t {
            if valid[f] {
                f += 1;
                continue;
            }
            let start = f;
            while f < t && !valid[f] {
                f += 1;
            }
            let end = f;
            if start == 0 || end == t || end - start > max_gap {
                continue;
            }
            let mut anchors: Vec<usize> = Vec::with_capacity(4);
            if start >= 2 && valid[start - 2] {
                anchors.push(start - 2);
            }
            anchors.push(start - 1);
            anchors.push(end);
            if end + 1 < t && valid[end + 1] {
                anchors.push(end + 1);
            }
            let xs: Vec<f64> = anchors.iter().map(|&a| a as f64).collect();
            let ys: Vec<Vector3<f64>> = anchors.iter().map(|&a| traj.positions[a][m]).collect();
            let conf = traj.confidence[start - 1][m].min(traj.confidence[end][m]);
            for g in start..end {
                out.positions[g][m] = lagrange(&xs, &ys, g as f64);
                out.validity[g][m] = true;
                out.interpolated[g][m] = true;
                out.confidence[g][m] = conf;
            }
        }
    }
    out
}

/// Per-marker IK weights by name, with a fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerWeights {
    pub default: f64,
    pub overrides: BTreeMap<String, f64>,
}

impl MarkerWeights {
    pub fn uniform(weight: f64) -> Self {
        Self {
            default: weight,
            overrides: BTreeMap::new(),
        }
    }

    pub fn weight(&self, name: &str) -> f64 {
        self.overrides.get(name).copied().unwrap_or(self.default)
    }

    pub fn for_names(&self, names: &[String]) -> Vec<f64> {
        names.iter().map(|n| self.weight(n)).collect()
    }
}

/// Union of two marker streams on the primary timebase, with per-marker
/// weights in output order.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedMarkers {
    pub markers: MarkerTrajectory,
    pub weights: Vec<f64>,
    /// Secondary markers dropped because the primary already had the name.
    pub conflicts: Vec<String>,
}

/// Merges `secondary` into `primary`. Secondary markers are linearly
/// resampled at the primary timestamps; samples outside the secondary time
/// range or bracketed by an invalid secondary sample are invalid. On a name
/// conflict the primary stream wins.
pub fn merge_streams(
    primary: &MarkerTrajectory,
    secondary: &MarkerTrajectory,
    weights: &MarkerWeights,
) -> Result<MergedMarkers, TemporalError> {
    let (fp, fs) = (primary.frame_rate, secondary.frame_rate);
    if !(fp > 0.0 && fs > 0.0) || ((fp - fs) / fp).abs() > 1e-3 {
        return Err(TemporalError::TimebaseMismatch {
            primary: fp,
            secondary: fs,
        });
    }
    let mut out = primary.clone();
    let mut conflicts = Vec::new();
    let added: Vec<usize> = (0..secondary.num_markers())
        .filter(|&m| {
            let name = &secondary.marker_names[m];
            if primary.marker_index(name).is_some() {
                log::warn!("marker `{name}` present in both streams; keeping the primary stream");
                conflicts.push(name.clone());
                false
            } else {
                true
            }
        })
        .collect();
    for &m in &added {
        out.marker_names.push(secondary.marker_names[m].clone());
    }
    let ts = &secondary.timestamps;
    for (f, &t) in primary.timestamps.iter().enumerate() {
        // bracketing secondary samples: ts[i] <= t <= ts[i + 1]
        let i = ts.partition_point(|&s| s <= t);
        let bracket = if ts.is_empty() || i == 0 {
            None
        } else if (ts[i - 1] - t).abs() <= 1e-9 * (1.0 + t.abs()) {
            Some((i - 1, i - 1, 0.0))
        } else if i < ts.len() {
            Some((i - 1, i, (t - ts[i - 1]) / (ts[i] - ts[i - 1])))
        } else {
            None
        };
        for &m in &added {
            let (pos, valid, conf, interp) = match bracket {
                Some((a, b, w)) if secondary.validity[a][m] && secondary.validity[b][m] => (
                    secondary.positions[a][m] * (1.0 - w) + secondary.positions[b][m] * w,
                    true,
                    secondary.confidence[a][m] * (1.0 - w) + secondary.confidence[b][m] * w,
                    secondary.interpolated[a][m] || secondary.interpolated[b][m],
                ),
                _ => (Vector3::zeros(), false, 0.0, false),
            };
            out.positions[f].push(pos);
            out.validity[f].push(valid);
            out.confidence[f].push(conf);
            out.interpolated[f].push(interp);
        }
    }
    let weights = weights.for_names(&out.marker_names);
    Ok(MergedMarkers {
        markers: out,
        weights,
        conflicts,
    })
}

/// Default spike threshold for [`unwrap_and_clamp_angles`], radians.
pub const DEFAULT_JUMP_THRESHOLD: f64 = 1.0;

/// Per rotational coordinate: removes 2π wraps from frame-to-frame jumps
/// larger than `jump_threshold`, then replaces isolated single-frame spikes
/// (a sample departing from both neighbours by more than the threshold in
/// the same direction while the neighbours agree) with the neighbour
/// midpoint. Frames touched by spike repair are flagged.
pub fn unwrap_and_clamp_angles(traj: &JointTrajectory, rotational: &[bool], jump_threshold: f64) -> JointTrajectory {
    let mut out = traj.clone();
    let t = traj.len();
    if out.flagged.len() != t {
        out.flagged.resize(t, false);
    }
    for (c, &is_rot) in rotational.iter().enumerate() {
        if !is_rot {
            continue;
        }
        let mut x = traj.channel(c);
        let mut offset = 0.0;
        for f in 1..t {
            let raw = traj.states[f].values[c];
            let d = raw + offset - x[f - 1];
            if d.abs() > jump_threshold {
                let k = (d / (2.0 * PI)).round();
                offset -= 2.0 * PI * k;
            }
            x[f] = raw + offset;
        }
        for f in 1..t.saturating_sub(1) {
            let (prev, next) = (x[f - 1], x[f + 1]);
            let up = x[f] - prev > jump_threshold && x[f] - next > jump_threshold;
            let down = prev - x[f] > jump_threshold && next - x[f] > jump_threshold;
            if (up || down) && (prev - next).abs() <= jump_threshold {
                x[f] = 0.5 * (prev + next);
                out.flagged[f] = true;
            }
        }
        for (state, v) in out.states.iter_mut().zip(&x) {
            state.values[c] = *v;
        }
    }
    out
}

//! Synthetic ground truth: smooth in-limit joint trajectories, their FK
//! marker positions, and multi-view 2D observations with controlled noise,
//! outliers and gaps.
//!
//! All randomness derives from the scenario seed. Motion parameters come
//! from one sequential stream; rendering uses one ChaCha8 stream per frame
//! (stream id = frame index), so frame-parallel rendering is bit-identical
//! to sequential rendering.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraModel, GeometryError};
use crate::io::AnnotationSet;
use crate::skeleton::{DofKind, JointState, JointTrajectory, MarkerTrajectory, SkeletonDefinition, SkeletonError};
use crate::triangulation::{CameraSet, Observation2D};

/// Sinusoids summed per coordinate.
pub const COMPONENTS: usize = 3;
const MIN_FREQUENCY: f64 = 0.1;
/// Confidence lost per pixel of Gaussian noise.
const CONFIDENCE_PER_PX: f64 = 0.05;
const MIN_CONFIDENCE: f64 = 0.5;
const RENDER_SALT: u64 = 0x5e_ed0f_f1a3;
const GAP_SALT: u64 = 0x06a9_5a17;
/// Person boxes are padded by this fraction of their extent on each side.
const BOX_PADDING: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("amplitude {amplitude} of `{coordinate}` exceeds half its limit range {half_range}")]
    AmplitudeExceedsLimits {
        coordinate: String,
        amplitude: f64,
        half_range: f64,
    },
    #[error("marker `{marker}` is behind camera `{view}` at frame {frame}")]
    MarkerBehindCamera { frame: usize, view: String, marker: String },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Cameras evenly spaced on a horizontal circle, all aimed at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigSpec {
    pub cameras: usize,
    pub radius: f64,
    pub height: f64,
    pub target: [f64; 3],
    pub focal: f64,
    pub width: u32,
    pub height_px: u32,
    /// Azimuth of the first camera, degrees from the anterior axis.
    pub first_azimuth_deg: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            cameras: 4,
            radius: 3.5,
            height: 1.5,
            target: [0.0, 1.0, 0.0],
            focal: 1150.0,
            width: 1000,
            height_px: 1000,
            first_azimuth_deg: 45.0,
        }
    }
}

impl RigSpec {
    pub fn build(&self) -> Result<CameraSet, SynthError> {
        if self.cameras == 0 || !(self.radius > 0.0) || !(self.focal > 0.0) {
            return Err(SynthError::InvalidScenario(
                "rig needs cameras, radius and focal > 0".into(),
            ));
        }
        let k = Matrix3::new(
            self.focal,
            0.0,
            self.width as f64 / 2.0,
            0.0,
            self.focal,
            self.height_px as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        let target = Vector3::from(self.target);
        let mut set = CameraSet::new();
        for i in 0..self.cameras {
            let az = self.first_azimuth_deg.to_radians() + 2.0 * PI * i as f64 / self.cameras as f64;
            let center = Vector3::new(self.radius * az.cos(), self.height, self.radius * az.sin());
            let id = format!("cam{i}");
            let cam = CameraModel::look_at(id.clone(), k, center, target, Vector3::y(), self.width, self.height_px)?;
            set.insert(id, cam);
        }
        Ok(set)
    }
}

/// Corruption applied to the observations of one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub pixel_noise_sigma: f64,
    pub outlier_rate: f64,
    /// Length of the offset added to an outlier, px.
    pub outlier_magnitude: f64,
    /// Expected fraction of dropped observations.
    pub gap_rate: f64,
    /// Frames per gap.
    pub gap_length: usize,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            pixel_noise_sigma: 0.0,
            outlier_rate: 0.0,
            outlier_magnitude: 50.0,
            gap_rate: 0.0,
            gap_length: 1,
        }
    }
}

impl NoiseModel {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidScenario(m.to_string()));
        if !(self.pixel_noise_sigma >= 0.0) || !(self.outlier_magnitude >= 0.0) {
            return bad("noise sigma and outlier magnitude must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) || !(0.0..=1.0).contains(&self.gap_rate) {
            return bad("rates must lie in [0, 1]");
        }
        if self.gap_length == 0 {
            return bad("gap_length must be at least 1");
        }
        Ok(())
    }

    /// Per-frame probability that a gap starts, chosen so a run of
    /// `gap_length` frames covers `gap_rate` of the observations on average.
    fn gap_start_probability(&self) -> f64 {
        if self.gap_rate >= 1.0 {
            1.0
        } else {
            1.0 - (1.0 - self.gap_rate).powf(1.0 / self.gap_length as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthScenario {
    pub seed: u64,
    pub num_frames: usize,
    pub frame_rate: f64,
    pub rig: RigSpec,
    /// Default amplitude as a fraction of each coordinate's half range.
    pub amplitude_fraction: f64,
    /// Cap on default rotational amplitudes, radians.
    pub max_rotation_amplitude: f64,
    /// Default amplitude of root translations, meters.
    pub translation_amplitude: f64,
    /// Upper band edge of every sinusoid, Hz.
    pub max_frequency: f64,
    /// Per-coordinate amplitude overrides (radians or meters).
    pub amplitudes: BTreeMap<String, f64>,
    pub noise: NoiseModel,
    /// Per-view replacements of `noise`.
    pub view_noise: BTreeMap<String, NoiseModel>,
}

impl Default for SynthScenario {
    fn default() -> Self {
        Self {
            seed: 0,
            num_frames: 100,
            frame_rate: 50.0,
            rig: RigSpec::default(),
            amplitude_fraction: 0.25,
            max_rotation_amplitude: 30f64.to_radians(),
            translation_amplitude: 0.1,
            max_frequency: 2.0,
            amplitudes: BTreeMap::new(),
            noise: NoiseModel::default(),
            view_noise: BTreeMap::new(),
        }
    }
}

impl SynthScenario {
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        let s: Self = toml::from_str(text).map_err(|e| SynthError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidScenario(m.to_string()));
        if self.num_frames == 0 {
            return bad("num_frames must be positive");
        }
        if !(self.frame_rate > 0.0) {
            return bad("frame_rate must be positive");
        }
        if !(self.max_frequency > MIN_FREQUENCY) || self.max_frequency >= self.frame_rate / 2.0 {
            return bad("max_frequency must lie between 0.1 Hz and Nyquist");
        }
        if !(0.0..=1.0).contains(&self.amplitude_fraction) {
            return bad("amplitude_fraction must lie in [0, 1]");
        }
        if !(self.max_rotation_amplitude >= 0.0) || !(self.translation_amplitude >= 0.0) {
            return bad("amplitude caps must be non-negative");
        }
        if self.amplitudes.values().any(|a| !(*a >= 0.0)) {
            return bad("amplitudes must be non-negative");
        }
        self.noise.validate()?;
        for n in self.view_noise.values() {
            n.validate()?;
        }
        Ok(())
    }

    pub fn cameras(&self) -> Result<CameraSet, SynthError> {
        self.rig.build()
    }

    pub fn noise_for(&self, view: &str) -> &NoiseModel {
        self.view_noise.get(view).unwrap_or(&self.noise)
    }

    /// Sets every default amplitude to zero.
    pub fn still(mut self) -> Self {
        self.amplitude_fraction = 0.0;
        self.translation_amplitude = 0.0;
        self.amplitudes.clear();
        self
    }

    fn amplitude(&self, skeleton: &SkeletonDefinition, c: usize) -> f64 {
        let name = &skeleton.coordinate_names[c];
        if let Some(&a) = self.amplitudes.get(name) {
            return a;
        }
        let dof = skeleton.dof(c);
        match dof.kind {
            DofKind::Translation => self.translation_amplitude,
            DofKind::Rotation => {
                let half = 0.5 * (dof.limits.1 - dof.limits.0);
                (self.amplitude_fraction * half).min(self.max_rotation_amplitude)
            }
        }
    }
}

/// Closed-form coordinate signal: `offset + Σ a_k sin(2π f_k t + φ_k)` with
/// `Σ |a_k|` equal to the coordinate amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateSignal {
    pub offset: f64,
    pub components: Vec<(f64, f64, f64)>,
}

impl CoordinateSignal {
    pub fn value(&self, t: f64) -> f64 {
        self.offset
            + self
                .components
                .iter()
                .map(|(a, f, p)| a * (2.0 * PI * f * t + p).sin())
                .sum::<f64>()
    }

    pub fn amplitude(&self) -> f64 {
        self.components.iter().map(|c| c.0.abs()).sum()
    }
}

/// Per-coordinate signals; locked coordinates stay at their default.
pub fn motion_signals(
    skeleton: &SkeletonDefinition,
    scenario: &SynthScenario,
) -> Result<Vec<CoordinateSignal>, SynthError> {
    scenario.validate()?;
    if let Some(name) = scenario
        .amplitudes
        .keys()
        .find(|n| skeleton.coordinate_index(n).is_none())
    {
        return Err(SynthError::InvalidScenario(format!("unknown coordinate `{name}`")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut signals = Vec::with_capacity(skeleton.coordinate_count());
    for c in 0..skeleton.coordinate_count() {
        let dof = skeleton.dof(c);
        // draws happen for every coordinate so overrides never shift other streams
        let weights: Vec<f64> = (0..COMPONENTS).map(|_| rng.random_range(0.2..1.0)).collect();
        let freqs: Vec<f64> = (0..COMPONENTS)
            .map(|_| rng.random_range(MIN_FREQUENCY..scenario.max_frequency))
            .collect();
        let phases: Vec<f64> = (0..COMPONENTS).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let amplitude = if dof.locked {
            0.0
        } else {
            scenario.amplitude(skeleton, c)
        };
        let (lo, hi) = dof.limits;
        let half = 0.5 * (hi - lo);
        if amplitude > half {
            return Err(SynthError::AmplitudeExceedsLimits {
                coordinate: skeleton.coordinate_names[c].clone(),
                amplitude,
                half_range: half,
            });
        }
        let offset = dof.default_value.clamp(lo + amplitude, hi - amplitude);
        let total: f64 = weights.iter().sum();
        let components = (0..COMPONENTS)
            .map(|k| (amplitude * weights[k] / total, freqs[k], phases[k]))
            .collect();
        signals.push(CoordinateSignal { offset, components });
    }
    Ok(signals)
}

/// Joint trajectory and its FK marker trajectory (all markers valid,
/// confidence 1). Frame `f` is at `t = f / frame_rate`.
pub fn generate_motion(
    skeleton: &SkeletonDefinition,
    scenario: &SynthScenario,
) -> Result<(JointTrajectory, MarkerTrajectory), SynthError> {
    let signals = motion_signals(skeleton, scenario)?;
    let states: Vec<JointState> = (0..scenario.num_frames)
        .map(|f| {
            let t = f as f64 / scenario.frame_rate;
            let values = signals
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    let (lo, hi) = skeleton.dof(c).limits;
                    // rounding can step outside by an ulp
                    s.value(t).clamp(lo, hi)
                })
                .collect();
            JointState::new(values, t)
        })
        .collect();
    let positions: Vec<Vec<Vector3<f64>>> = states
        .par_iter()
        .map(|s| skeleton.forward_kinematics(s))
        .collect::<Result<_, _>>()?;
    let mut markers = MarkerTrajectory::new(skeleton.marker_names(), scenario.frame_rate);
    for (s, p) in states.iter().zip(positions) {
        markers.push_frame(s.timestamp, p);
    }
    Ok((JointTrajectory::new(skeleton.coordinate_names.clone(), states), markers))
}

fn frame_rng(seed: u64, salt: u64, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(frame as u64);
    rng
}

/// Whether a gap starting at `frame` covers (view, marker). One uniform draw
/// per (view, marker) in rig order.
fn gap_starts(seed: u64, frame: usize, probs: &[f64], markers: usize) -> Vec<bool> {
    let mut rng = frame_rng(seed, GAP_SALT, frame);
    let mut out = Vec::with_capacity(probs.len() * markers);
    for &p in probs {
        for _ in 0..markers {
            let u: f64 = rng.random();
            out.push(u < p);
        }
    }
    out
}

/// Exact projections of valid ground-truth markers into every rig view,
/// corrupted per the scenario's noise models. Result is indexed by frame;
/// within a frame, observations are ordered by view id then marker.
pub fn render_observations(
    ground_truth: &MarkerTrajectory,
    cameras: &CameraSet,
    scenario: &SynthScenario,
) -> Result<Vec<Vec<Observation2D>>, SynthError> {
    scenario.validate()?;
    let views: Vec<&CameraModel> = cameras.values().collect();
    let models: Vec<&NoiseModel> = views.iter().map(|c| scenario.noise_for(&c.view_id)).collect();
    let probs: Vec<f64> = models.iter().map(|m| m.gap_start_probability()).collect();
    let k = ground_truth.num_markers();
    (0..ground_truth.num_frames())
        .into_par_iter()
        .map(|f| {
            let max_len = models.iter().map(|m| m.gap_length).max().unwrap_or(1);
            let starts: Vec<Vec<bool>> = (f.saturating_sub(max_len - 1)..=f)
                .map(|g| gap_starts(scenario.seed, g, &probs, k))
                .collect();
            let first = f.saturating_sub(max_len - 1);
            let mut rng = frame_rng(scenario.seed, RENDER_SALT, f);
            let mut out = Vec::new();
            for (v, cam) in views.iter().enumerate() {
                let model = models[v];
                for m in 0..k {
                    // fixed number of draws per (view, marker) keeps streams aligned
                    let nx: f64 = StandardNormal.sample(&mut rng);
                    let ny: f64 = StandardNormal.sample(&mut rng);
                    let u_out: f64 = rng.random();
                    let angle: f64 = rng.random_range(0.0..2.0 * PI);
                    let gapped = (f.saturating_sub(model.gap_length - 1)..=f).any(|g| starts[g - first][v * k + m]);
                    if !ground_truth.validity[f][m] || gapped {
                        continue;
                    }
                    let exact =
                        cam.project(&ground_truth.positions[f][m])
                            .map_err(|_| SynthError::MarkerBehindCamera {
                                frame: f,
                                view: cam.view_id.clone(),
                                marker: ground_truth.marker_names[m].clone(),
                            })?;
                    let noise = Vector2::new(nx, ny) * model.pixel_noise_sigma;
                    let mut position = exact + noise;
                    if u_out < model.outlier_rate {
                        position += Vector2::new(angle.cos(), angle.sin()) * model.outlier_magnitude;
                    }
                    let confidence = (1.0 - CONFIDENCE_PER_PX * noise.norm()).max(MIN_CONFIDENCE);
                    out.push(Observation2D::new(cam.view_id.clone(), m, position, confidence));
                }
            }
            Ok(out)
        })
        .collect()
}

/// Observations plus per-(frame, view) person boxes: the padded extent of
/// the exact projections of all valid ground-truth markers.
pub fn render_annotations(
    ground_truth: &MarkerTrajectory,
    cameras: &CameraSet,
    scenario: &SynthScenario,
) -> Result<AnnotationSet, SynthError> {
    let frames = render_observations(ground_truth, cameras, scenario)?;
    let mut bboxes = BTreeMap::new();
    for f in 0..ground_truth.num_frames() {
        for cam in cameras.values() {
            let pts: Vec<Vector2<f64>> = (0..ground_truth.num_markers())
                .filter(|&m| ground_truth.validity[f][m])
                .filter_map(|m| cam.project(&ground_truth.positions[f][m]).ok())
                .collect();
            if pts.is_empty() {
                continue;
            }
            let (mut lo, mut hi) = (pts[0], pts[0]);
            for p in &pts {
                lo = lo.inf(p);
                hi = hi.sup(p);
            }
            let extent = (hi - lo) * (1.0 + 2.0 * BOX_PADDING);
            bboxes.insert((f, cam.view_id.clone()), (extent.x.max(1.0), extent.y.max(1.0)));
        }
    }
    Ok(AnnotationSet { frames, bboxes })
}

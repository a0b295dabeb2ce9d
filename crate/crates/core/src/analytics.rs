//! Spine curvature (Cobb-style sagittal angles), range-of-motion summaries
//! and curvature-based quality control.
//!
//! Curvature is measured between body frames: the "endplate direction" of a
//! body is its anterior axis projected onto the pelvis sagittal plane, and an
//! angle is the signed rotation between two such directions about the pelvis
//! sagittal normal.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::numeric::{mean, percentile_sorted, std_dev};
use crate::skeleton::{
    rotation_coordinates, JointState, JointTrajectory, SkeletonDefinition, SkeletonError, LUMBAR_JOINTS, NECK_JOINT,
};

/// Projected axes shorter than this are treated as degenerate.
pub const MIN_PROJECTED_NORM: f64 = 1e-6;
pub const MIN_ROM_FRAMES: usize = 10;
pub const DEFAULT_ROM_TRIM: f64 = 1.0;
/// Percentile envelope reported for neck distributions.
pub const DEFAULT_NECK_ENVELOPE: (f64, f64) = (5.0, 95.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("sagittal projection of the {frame} frame is degenerate (norm {norm:.3e})")]
    DegenerateSagittalProjection { frame: String, norm: f64 },
    #[error("skeleton has no curvature frame definition")]
    MissingCurvatureFrames,
    #[error("{frames} frames is too few for a range-of-motion summary (need {required})")]
    TooFewFrames { frames: usize, required: usize },
    #[error("missing coordinate {0}")]
    MissingCoordinate(String),
    #[error("{labels} action labels for {frames} frames")]
    LabelLength { labels: usize, frames: usize },
    #[error("invalid trim percentile {0}")]
    InvalidTrim(f64),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
}

/// Lumbar lordosis and thoracic kyphosis angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CobbAngles {
    pub lla_deg: f64,
    pub tka_deg: f64,
}

fn sagittal_direction(
    rotation: &Matrix3<f64>,
    anterior: &Vector3<f64>,
    normal: &Vector3<f64>,
    frame: &str,
) -> Result<Vector3<f64>, AnalyticsError> {
    let a = rotation * anterior;
    let projected = a - normal * normal.dot(&a);
    let norm = projected.norm();
    if norm < MIN_PROJECTED_NORM {
        return Err(AnalyticsError::DegenerateSagittalProjection {
            frame: frame.to_string(),
            norm,
        });
    }
    Ok(projected / norm)
}

/// Signed angle from `a` to `b` about `normal`, degrees.
fn signed_angle(a: &Vector3<f64>, b: &Vector3<f64>, normal: &Vector3<f64>) -> f64 {
    normal.dot(&a.cross(b)).atan2(a.dot(b)).to_degrees()
}

/// Sagittal curvature angles for one state. Positive LLA is lordosis (L1
/// extended relative to the sacrum); positive TKA is kyphosis.
pub fn cobb_angles(skeleton: &SkeletonDefinition, state: &JointState) -> Result<CobbAngles, AnalyticsError> {
    let frames = skeleton
        .curvature
        .as_ref()
        .ok_or(AnalyticsError::MissingCurvatureFrames)?;
    let kin = skeleton.kinematics(&state.values)?;
    let root = skeleton.joint_order()[0];
    let pelvis = kin.rotations[root];
    let normal = (pelvis * frames.anterior_axis.cross(&frames.vertical_axis)).normalize();
    let dir = |joint: usize| {
        sagittal_direction(
            &kin.rotations[joint],
            &frames.anterior_axis,
            &normal,
            &skeleton.joints[joint].name,
        )
    };
    let sacrum = dir(frames.sacrum)?;
    let l1 = dir(frames.l1)?;
    let t12 = dir(frames.t12)?;
    let t3 = dir(frames.t3)?;
    Ok(CobbAngles {
        lla_deg: signed_angle(&sacrum, &l1, &normal),
        tka_deg: signed_angle(&t3, &t12, &normal),
    })
}

/// Copy of `skeleton` whose spine joints carry no built-in rotation, so the
/// neutral pose is a straight column.
pub fn straightened_spine(skeleton: &SkeletonDefinition) -> SkeletonDefinition {
    let mut straight = skeleton.clone();
    let mut spine: Vec<usize> = LUMBAR_JOINTS
        .iter()
        .filter_map(|name| skeleton.joint_index(name))
        .collect();
    if let Some(c) = &skeleton.curvature {
        spine.extend([c.sacrum, c.l1, c.t12, c.t3]);
    }
    for j in spine {
        straight.joints[j].fixed_rotation = Matrix3::identity();
    }
    straight
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureSample {
    pub frame: usize,
    pub lla_deg: f64,
    pub tka_deg: f64,
    pub subject: String,
    pub action: String,
    /// False once rejected by quality control.
    pub valid: bool,
}

/// Curvature angles for every frame of a trajectory. Frames whose
/// projection is degenerate, or that the trajectory already flags, come back
/// invalid with NaN angles.
pub fn curvature_series(
    skeleton: &SkeletonDefinition,
    trajectory: &JointTrajectory,
    subject: &str,
    actions: &[String],
) -> Result<Vec<CurvatureSample>, AnalyticsError> {
    if skeleton.curvature.is_none() {
        return Err(AnalyticsError::MissingCurvatureFrames);
    }
    check_labels(actions, trajectory.len())?;
    trajectory
        .states
        .par_iter()
        .enumerate()
        .map(|(frame, state)| {
            let action = actions.get(frame).cloned().unwrap_or_default();
            let flagged = trajectory.flagged.get(frame).copied().unwrap_or(false);
            let angles = match cobb_angles(skeleton, state) {
                Ok(a) if !flagged => Some(a),
                Ok(_) | Err(AnalyticsError::DegenerateSagittalProjection { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(CurvatureSample {
                frame,
                lla_deg: angles.map_or(f64::NAN, |a| a.lla_deg),
                tka_deg: angles.map_or(f64::NAN, |a| a.tka_deg),
                subject: subject.to_string(),
                action,
                valid: angles.is_some(),
            })
        })
        .collect()
}

fn check_labels(actions: &[String], frames: usize) -> Result<(), AnalyticsError> {
    if !actions.is_empty() && actions.len() != frames {
        return Err(AnalyticsError::LabelLength {
            labels: actions.len(),
            frames,
        });
    }
    Ok(())
}

/// Inclusive acceptance intervals in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureBounds {
    pub lla_deg: (f64, f64),
    pub tka_deg: (f64, f64),
}

impl Default for CurvatureBounds {
    fn default() -> Self {
        Self {
            lla_deg: (0.0, 80.0),
            tka_deg: (0.0, 80.0),
        }
    }
}

impl CurvatureBounds {
    /// Normative adult envelopes: lordosis 33–39°, kyphosis 29–37°.
    pub fn normative() -> Self {
        Self {
            lla_deg: (33.0, 39.0),
            tka_deg: (29.0, 37.0),
        }
    }

    pub fn contains(&self, lla: f64, tka: f64) -> bool {
        (self.lla_deg.0..=self.lla_deg.1).contains(&lla) && (self.tka_deg.0..=self.tka_deg.1).contains(&tka)
    }
}

/// Marks samples outside `bounds` invalid. Angle values are untouched and
/// already-invalid samples stay invalid.
pub fn reject_implausible_curvature(samples: &[CurvatureSample], bounds: &CurvatureBounds) -> Vec<CurvatureSample> {
    samples
        .iter()
        .map(|s| CurvatureSample {
            valid: s.valid && bounds.contains(s.lla_deg, s.tka_deg),
            ..s.clone()
        })
        .collect()
}

/// Mean ± std of valid samples for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureStats {
    pub action: String,
    pub samples: usize,
    pub rejected: usize,
    pub lla_mean: f64,
    pub lla_std: f64,
    pub tka_mean: f64,
    pub tka_std: f64,
}

impl CurvatureStats {
    pub fn rejection_rate(&self) -> f64 {
        let total = self.samples + self.rejected;
        if total == 0 {
            0.0
        } else {
            self.rejected as f64 / total as f64
        }
    }
}

fn stats_for(action: &str, samples: &[&CurvatureSample]) -> CurvatureStats {
    let lla: Vec<f64> = samples.iter().filter(|s| s.valid).map(|s| s.lla_deg).collect();
    let tka: Vec<f64> = samples.iter().filter(|s| s.valid).map(|s| s.tka_deg).collect();
    CurvatureStats {
        action: action.to_string(),
        samples: lla.len(),
        rejected: samples.len() - lla.len(),
        lla_mean: mean(&lla).unwrap_or(f64::NAN),
        lla_std: std_dev(&lla).unwrap_or(f64::NAN),
        tka_mean: mean(&tka).unwrap_or(f64::NAN),
        tka_std: std_dev(&tka).unwrap_or(f64::NAN),
    }
}

/// Per-action statistics in action-name order, followed by the pooled row
/// (action `"all"`).
pub fn curvature_stats_by_action(samples: &[CurvatureSample]) -> Vec<CurvatureStats> {
    let mut groups: BTreeMap<&str, Vec<&CurvatureSample>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.action.as_str()).or_default().push(s);
    }
    let mut out: Vec<CurvatureStats> = groups.iter().map(|(a, g)| stats_for(a, g)).collect();
    let all: Vec<&CurvatureSample> = samples.iter().collect();
    out.push(stats_for("all", &all));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomEntry {
    pub coordinate: String,
    pub min_deg: f64,
    pub max_deg: f64,
    pub range_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomSummary {
    /// `None` when the trajectory carried no action labels.
    pub action: Option<String>,
    pub frames: usize,
    pub entries: Vec<RomEntry>,
}

impl RomSummary {
    pub fn entry(&self, coordinate: &str) -> Option<&RomEntry> {
        self.entries.iter().find(|e| e.coordinate == coordinate)
    }
}

/// Coordinates reported by the range-of-motion summary: the intervertebral
/// triplets followed by the neck triplet.
pub fn rom_coordinates() -> Vec<String> {
    LUMBAR_JOINTS
        .iter()
        .copied()
        .chain(std::iter::once(NECK_JOINT))
        .flat_map(rotation_coordinates)
        .collect()
}

fn rom_over(
    trajectory: &JointTrajectory,
    frames: &[usize],
    coordinates: &[String],
    trim: f64,
    action: Option<String>,
) -> Result<RomSummary, AnalyticsError> {
    if frames.len() < MIN_ROM_FRAMES {
        return Err(AnalyticsError::TooFewFrames {
            frames: frames.len(),
            required: MIN_ROM_FRAMES,
        });
    }
    let entries = coordinates
        .iter()
        .map(|name| {
            let c = trajectory
                .coordinate_index(name)
                .ok_or_else(|| AnalyticsError::MissingCoordinate(name.clone()))?;
            let mut values: Vec<f64> = frames.iter().map(|&f| trajectory.states[f].values[c]).collect();
            values.sort_by(f64::total_cmp);
            let lo = percentile_sorted(&values, trim).unwrap_or(0.0).to_degrees();
            let hi = percentile_sorted(&values, 100.0 - trim).unwrap_or(0.0).to_degrees();
            Ok(RomEntry {
                coordinate: name.clone(),
                min_deg: lo,
                max_deg: hi,
                range_deg: (hi - lo).max(0.0),
            })
        })
        .collect::<Result<_, AnalyticsError>>()?;
    Ok(RomSummary {
        action,
        frames: frames.len(),
        entries,
    })
}

/// Trimmed range of motion of `coordinates` over the unflagged frames.
/// `trim` is a percentile in `[0, 50)`.
pub fn rom_summary(
    trajectory: &JointTrajectory,
    coordinates: &[String],
    trim: f64,
) -> Result<RomSummary, AnalyticsError> {
    if !(0.0..50.0).contains(&trim) {
        return Err(AnalyticsError::InvalidTrim(trim));
    }
    let frames: Vec<usize> = (0..trajectory.len())
        .filter(|&f| !trajectory.flagged.get(f).copied().unwrap_or(false))
        .collect();
    rom_over(trajectory, &frames, coordinates, trim, None)
}

/// `rom_summary` per action label, in label order. Actions with fewer than
/// the minimum frame count are skipped.
pub fn rom_summary_by_action(
    trajectory: &JointTrajectory,
    actions: &[String],
    coordinates: &[String],
    trim: f64,
) -> Result<Vec<RomSummary>, AnalyticsError> {
    if !(0.0..50.0).contains(&trim) {
        return Err(AnalyticsError::InvalidTrim(trim));
    }
    check_labels(actions, trajectory.len())?;
    if actions.is_empty() {
        return Ok(vec![rom_summary(trajectory, coordinates, trim)?]);
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (f, a) in actions.iter().enumerate() {
        if !trajectory.flagged.get(f).copied().unwrap_or(false) {
            groups.entry(a.as_str()).or_default().push(f);
        }
    }
    let mut out = Vec::new();
    for (action, frames) in groups {
        match rom_over(trajectory, &frames, coordinates, trim, Some(action.to_string())) {
            Ok(s) => out.push(s),
            Err(AnalyticsError::TooFewFrames { .. }) => {
                log::warn!("action {action}: {} frames, skipped in ROM summary", frames.len())
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Distribution of one neck coordinate, degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct DofDistribution {
    pub coordinate: String,
    pub mean: f64,
    pub std: f64,
    pub low: f64,
    pub median: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeckRomBlock {
    pub action: String,
    pub frames: usize,
    /// Flexion, bending, rotation.
    pub dofs: Vec<DofDistribution>,
}

/// Per-action distributions of the three aggregate neck coordinates;
/// `envelope` gives the low/high percentiles.
pub fn neck_rom_report(
    trajectory: &JointTrajectory,
    actions: &[String],
    envelope: (f64, f64),
) -> Result<Vec<NeckRomBlock>, AnalyticsError> {
    check_labels(actions, trajectory.len())?;
    let names = rotation_coordinates(NECK_JOINT);
    let cols: Vec<usize> = names
        .iter()
        .map(|n| {
            trajectory
                .coordinate_index(n)
                .ok_or_else(|| AnalyticsError::MissingCoordinate(n.clone()))
        })
        .collect::<Result<_, _>>()?;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for f in 0..trajectory.len() {
        if trajectory.flagged.get(f).copied().unwrap_or(false) {
            continue;
        }
        let action = actions.get(f).cloned().unwrap_or_else(|| "all".to_string());
        groups.entry(action).or_default().push(f);
    }
    Ok(groups
        .into_iter()
        .map(|(action, frames)| {
            let dofs = names
                .iter()
                .zip(&cols)
                .map(|(name, &c)| {
                    let mut v: Vec<f64> = frames
                        .iter()
                        .map(|&f| trajectory.states[f].values[c].to_degrees())
                        .collect();
                    let m = mean(&v).unwrap_or(f64::NAN);
                    let s = std_dev(&v).unwrap_or(f64::NAN);
                    v.sort_by(f64::total_cmp);
                    let p = |q: f64| percentile_sorted(&v, q).unwrap_or(f64::NAN);
                    DofDistribution {
                        coordinate: name.clone(),
                        mean: m,
                        std: s,
                        low: p(envelope.0),
                        median: p(50.0),
                        high: p(envelope.1),
                    }
                })
                .collect();
            NeckRomBlock {
                action,
                frames: frames.len(),
                dofs,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::axis_angle;

    fn skel() -> SkeletonDefinition {
        SkeletonDefinition::default_definition()
    }

    fn set(s: &SkeletonDefinition, q: &mut [f64], name: &str, v: f64) {
        q[s.coordinate_index(name).unwrap()] = v;
    }

    #[test]
    fn neutral_matches_builtin_curvature() {
        let s = skel();
        let a = cobb_angles(&s, &s.neutral_state()).unwrap();
        assert!((a.lla_deg - 36.0).abs() < 1e-9, "{a:?}");
        assert!((a.tka_deg - 33.0).abs() < 1e-9, "{a:?}");
    }

    #[test]
    fn straight_spine_is_zero() {
        let s = straightened_spine(&skel());
        let a = cobb_angles(&s, &s.neutral_state()).unwrap();
        assert!(a.lla_deg.abs() < 1e-12 && a.tka_deg.abs() < 1e-12, "{a:?}");
    }

    #[test]
    fn lumbar_arc_sums_segment_flexion() {
        let s = straightened_spine(&skel());
        for theta in [10.0_f64, 30.0, 50.0] {
            let mut q = s.neutral_state().values;
            for j in &LUMBAR_JOINTS[..5] {
                set(&s, &mut q, &format!("{j}_Flex_Ext"), (theta / 5.0).to_radians());
            }
            let a = cobb_angles(&s, &JointState::new(q, 0.0)).unwrap();
            assert!((a.lla_deg - theta).abs() < 1e-6, "{theta}: {a:?}");
        }
    }

    #[test]
    fn root_pose_does_not_change_angles() {
        let s = skel();
        let mut q = s.neutral_state().values;
        set(&s, &mut q, "L3_L4_Flex_Ext", 0.2);
        set(&s, &mut q, "L2_L3_Lat_Bending", 0.1);
        let base = cobb_angles(&s, &JointState::new(q.clone(), 0.0)).unwrap();
        for (name, v) in [
            ("pelvis_tilt", 0.4),
            ("pelvis_list", -0.3),
            ("pelvis_rotation", 1.2),
            ("pelvis_tx", 2.0),
        ] {
            set(&s, &mut q, name, v);
        }
        let moved = cobb_angles(&s, &JointState::new(q, 0.0)).unwrap();
        assert!((base.lla_deg - moved.lla_deg).abs() < 1e-9);
        assert!((base.tka_deg - moved.tka_deg).abs() < 1e-9);
    }

    #[test]
    fn degenerate_projection_reported() {
        let mut s = skel();
        let l1 = s.curvature.as_ref().unwrap().l1;
        // anterior axis turned onto the sagittal normal
        s.joints[l1].fixed_rotation = axis_angle(&Vector3::y(), std::f64::consts::FRAC_PI_2);
        assert!(matches!(
            cobb_angles(&s, &s.neutral_state()),
            Err(AnalyticsError::DegenerateSagittalProjection { .. })
        ));
    }

    fn sample(lla: f64, tka: f64) -> CurvatureSample {
        CurvatureSample {
            frame: 0,
            lla_deg: lla,
            tka_deg: tka,
            subject: "S1".into(),
            action: "walk".into(),
            valid: true,
        }
    }

    #[test]
    fn rejection_flags_only_out_of_bounds() {
        let b = CurvatureBounds::default();
        let out = reject_implausible_curvature(&[sample(36.0, 33.0), sample(95.0, 33.0)], &b);
        assert!(out[0].valid);
        assert!(!out[1].valid);
        assert_eq!(out[1].lla_deg, 95.0);
        assert_eq!(reject_implausible_curvature(&out, &b), out);
    }

    fn trajectory(s: &SkeletonDefinition, frames: usize, f: impl Fn(usize, &mut Vec<f64>)) -> JointTrajectory {
        let states = (0..frames)
            .map(|t| {
                let mut q = s.neutral_state().values;
                f(t, &mut q);
                JointState::new(q, t as f64 / 50.0)
            })
            .collect();
        JointTrajectory::new(s.coordinate_names.clone(), states)
    }

    #[test]
    fn rom_of_sinusoid_is_twice_amplitude() {
        let s = skel();
        let c = s.coordinate_index("L3_L4_Flex_Ext").unwrap();
        let amp = 0.1;
        // 200 samples over whole periods hit both extremes exactly
        let traj = trajectory(&s, 201, |t, q| {
            q[c] = amp * (2.0 * std::f64::consts::PI * t as f64 / 200.0 + std::f64::consts::FRAC_PI_2).sin()
        });
        let rom = rom_summary(&traj, &rom_coordinates(), 0.0).unwrap();
        let e = rom.entry("L3_L4_Flex_Ext").unwrap();
        assert!((e.range_deg - 2.0 * amp.to_degrees()).abs() < 1e-9, "{e:?}");
        assert_eq!(rom.entry("L1_L2_Flex_Ext").unwrap().range_deg, 0.0);
        let trimmed = rom_summary(&traj, &rom_coordinates(), 5.0).unwrap();
        assert!(trimmed.entry("L3_L4_Flex_Ext").unwrap().range_deg <= e.range_deg);
    }

    #[test]
    fn rom_needs_ten_frames() {
        let s = skel();
        let traj = trajectory(&s, 9, |_, _| {});
        assert!(matches!(
            rom_summary(&traj, &rom_coordinates(), 1.0),
            Err(AnalyticsError::TooFewFrames { frames: 9, .. })
        ));
    }

    #[test]
    fn neck_spread_follows_injected_motion() {
        let s = skel();
        let c = s.coordinate_index("neck_bending").unwrap();
        let traj = trajectory(&s, 100, |t, q| {
            if t >= 50 {
                q[c] = 20f64.to_radians() * (t as f64 * 0.3).sin();
            }
        });
        let actions: Vec<String> = (0..100)
            .map(|t| if t < 50 { "still" } else { "bend" }.to_string())
            .collect();
        let report = neck_rom_report(&traj, &actions, DEFAULT_NECK_ENVELOPE).unwrap();
        assert_eq!(report.len(), 2);
        let bend = report.iter().find(|b| b.action == "bend").unwrap();
        let still = report.iter().find(|b| b.action == "still").unwrap();
        assert!(bend.dofs[1].std > 5.0);
        assert!(still.dofs.iter().all(|d| d.mean == 0.0 && d.std == 0.0));
    }
}

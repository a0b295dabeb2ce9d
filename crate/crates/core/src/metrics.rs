//! Pose-evaluation metrics: MPJPE and Procrustes-aligned MPJPE in 3D,
//! PCK/AUC and OKS-based AP/AR in 2D, with region subsets of the 37-keypoint
//! layout.
//!
//! Sample sets are flat lists of frames (batch and time folded together);
//! every mean runs through pairwise summation in frame-major order.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::geometry::procrustes_align;
use crate::numeric::pairwise_sum;
use crate::skeleton::{MarkerTrajectory, Region, SkeletonDefinition};

/// OKS thresholds 0.50:0.05:0.95.
pub const OKS_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];
pub const PCK_GRID_POINTS: usize = 101;
pub const PCK_MAX_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SPINE_SIGMA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no valid keypoints to evaluate")]
    EmptySubset,
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("root index {0} out of range")]
    InvalidRootIndex(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bounding box of sample {0} has a non-positive side")]
    InvalidBBox(usize),
    #[error("ground truth {0} has no positive object scale")]
    MissingScale(usize),
    #[error("missing or non-positive sigma for keypoint {0}")]
    MissingSigmas(String),
    #[error("unknown keypoint {0}")]
    UnknownKeypoint(String),
}

/// Frames of K keypoints with per-keypoint validity.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSet<P> {
    pub keypoint_names: Vec<String>,
    pub frames: Vec<Vec<P>>,
    pub validity: Vec<Vec<bool>>,
}

pub type PoseSet3 = PoseSet<Vector3<f64>>;
pub type PoseSet2 = PoseSet<Vector2<f64>>;

impl<P: Clone> PoseSet<P> {
    /// All keypoints valid.
    pub fn new(keypoint_names: Vec<String>, frames: Vec<Vec<P>>) -> Self {
        let validity = frames.iter().map(|f| vec![true; f.len()]).collect();
        Self {
            keypoint_names,
            frames,
            validity,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_keypoints(&self) -> usize {
        self.keypoint_names.len()
    }

    fn check(&self) -> Result<(), MetricsError> {
        let k = self.num_keypoints();
        if self.validity.len() != self.frames.len() {
            return Err(MetricsError::ShapeMismatch("validity rows != frames".into()));
        }
        for (f, v) in self.frames.iter().zip(&self.validity) {
            if f.len() != k || v.len() != k {
                return Err(MetricsError::ShapeMismatch(format!(
                    "frame has {} points / {} flags for {k} keypoints",
                    f.len(),
                    v.len()
                )));
            }
        }
        Ok(())
    }
}

impl PoseSet3 {
    pub fn from_markers(traj: &MarkerTrajectory) -> Self {
        Self {
            keypoint_names: traj.marker_names.clone(),
            frames: traj.positions.clone(),
            validity: traj.validity.clone(),
        }
    }

    /// Same rigid or similarity map applied to every point.
    pub fn map_points(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Self {
        Self {
            keypoint_names: self.keypoint_names.clone(),
            frames: self.frames.iter().map(|fr| fr.iter().map(&f).collect()).collect(),
            validity: self.validity.clone(),
        }
    }
}

fn check_pair<P: Clone, Q: Clone>(pred: &PoseSet<P>, gt: &PoseSet<Q>) -> Result<(), MetricsError> {
    pred.check()?;
    gt.check()?;
    if pred.keypoint_names != gt.keypoint_names || pred.num_frames() != gt.num_frames() {
        return Err(MetricsError::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.num_frames(),
            pred.num_keypoints(),
            gt.num_frames(),
            gt.num_keypoints()
        )));
    }
    Ok(())
}

/// Evaluation subsets of the keypoint layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subset {
    Cervical,
    Thoracic,
    Lumbar,
    Spine,
    Body,
    All,
}

impl Subset {
    pub const REPORT_ORDER: [Subset; 6] = [
        Subset::Cervical,
        Subset::Thoracic,
        Subset::Lumbar,
        Subset::Spine,
        Subset::Body,
        Subset::All,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Subset::Cervical => "S_C",
            Subset::Thoracic => "S_T",
            Subset::Lumbar => "S_L",
            Subset::Spine => "S",
            Subset::Body => "B",
            Subset::All => "All",
        }
    }

    pub fn parse(text: &str) -> Option<Subset> {
        Self::REPORT_ORDER
            .into_iter()
            .find(|s| s.label().eq_ignore_ascii_case(text))
            .or(match text.to_ascii_lowercase().as_str() {
                "cervical" => Some(Subset::Cervical),
                "thoracic" => Some(Subset::Thoracic),
                "lumbar" => Some(Subset::Lumbar),
                "spine" => Some(Subset::Spine),
                "body" => Some(Subset::Body),
                _ => None,
            })
    }
}

/// Keypoint index sets per subset, in the order of a pose set's names.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSubsets {
    sets: BTreeMap<Subset, Vec<usize>>,
}

impl RegionSubsets {
    /// Maps each of `keypoint_names` to its region in `skeleton`.
    pub fn from_skeleton(skeleton: &SkeletonDefinition, keypoint_names: &[String]) -> Result<Self, MetricsError> {
        let mut sets: BTreeMap<Subset, Vec<usize>> = Subset::REPORT_ORDER.iter().map(|&s| (s, Vec::new())).collect();
        for (i, name) in keypoint_names.iter().enumerate() {
            let m = skeleton
                .marker_index(name)
                .ok_or_else(|| MetricsError::UnknownKeypoint(name.clone()))?;
            let region = match skeleton.markers[m].region {
                Region::Cervical => Subset::Cervical,
                Region::Thoracic => Subset::Thoracic,
                Region::Lumbar => Subset::Lumbar,
                Region::Body => Subset::Body,
            };
            sets.get_mut(&region).expect("region set").push(i);
            if region != Subset::Body {
                sets.get_mut(&Subset::Spine).expect("spine set").push(i);
            }
            sets.get_mut(&Subset::All).expect("all set").push(i);
        }
        Ok(Self { sets })
    }

    pub fn indices(&self, subset: Subset) -> &[usize] {
        &self.sets[&subset]
    }
}

/// Subtracts the per-frame mean of the valid `root_set` joints. Frames with
/// no valid root become entirely invalid.
pub fn root_center(poses: &PoseSet3, root_set: &[usize]) -> Result<PoseSet3, MetricsError> {
    poses.check()?;
    if root_set.is_empty() {
        return Err(MetricsError::EmptySubset);
    }
    if let Some(&bad) = root_set.iter().find(|&&r| r >= poses.num_keypoints()) {
        return Err(MetricsError::InvalidRootIndex(bad));
    }
    let mut out = poses.clone();
    for (frame, valid) in out.frames.iter_mut().zip(out.validity.iter_mut()) {
        let roots: Vec<Vector3<f64>> = root_set.iter().filter(|&&r| valid[r]).map(|&r| frame[r]).collect();
        if roots.is_empty() {
            valid.iter_mut().for_each(|v| *v = false);
            continue;
        }
        let center = if roots.len() == 1 {
            roots[0]
        } else {
            let n = roots.len() as f64;
            Vector3::new(
                pairwise_sum(&roots.iter().map(|p| p.x).collect::<Vec<_>>()) / n,
                pairwise_sum(&roots.iter().map(|p| p.y).collect::<Vec<_>>()) / n,
                pairwise_sum(&roots.iter().map(|p| p.z).collect::<Vec<_>>()) / n,
            )
        };
        for p in frame.iter_mut() {
            *p -= center;
        }
    }
    Ok(out)
}

/// Per-joint, per-axis mean and standard deviation over valid frames.
#[derive(Debug, Clone, PartialEq)]
pub struct JointStandardization {
    pub mean: Vec<Vector3<f64>>,
    /// Axes with zero spread carry 1 so the transform stays invertible.
    pub std: Vec<Vector3<f64>>,
}

impl JointStandardization {
    pub fn fit(poses: &PoseSet3) -> Result<Self, MetricsError> {
        poses.check()?;
        let k = poses.num_keypoints();
        let mut mean = vec![Vector3::zeros(); k];
        let mut std = vec![Vector3::repeat(1.0); k];
        for j in 0..k {
            let pts: Vec<Vector3<f64>> = poses
                .frames
                .iter()
                .zip(&poses.validity)
                .filter(|(_, v)| v[j])
                .map(|(f, _)| f[j])
                .collect();
            if pts.is_empty() {
                continue;
            }
            let n = pts.len() as f64;
            for a in 0..3 {
                let xs: Vec<f64> = pts.iter().map(|p| p[a]).collect();
                let m = pairwise_sum(&xs) / n;
                let var = pairwise_sum(&xs.iter().map(|x| (x - m) * (x - m)).collect::<Vec<_>>()) / n;
                mean[j][a] = m;
                if var > 0.0 {
                    std[j][a] = var.sqrt();
                }
            }
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, poses: &PoseSet3) -> PoseSet3 {
        let mut out = poses.clone();
        for frame in &mut out.frames {
            for (j, p) in frame.iter_mut().enumerate() {
                *p = (*p - self.mean[j]).component_div(&self.std[j]);
            }
        }
        out
    }

    pub fn invert(&self, poses: &PoseSet3) -> PoseSet3 {
        let mut out = poses.clone();
        for frame in &mut out.frames {
            for (j, p) in frame.iter_mut().enumerate() {
                *p = p.component_mul(&self.std[j]) + self.mean[j];
            }
        }
        out
    }
}

/// Mean of per-joint errors with the count it was taken over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub mean_mm: f64,
    pub count: usize,
    /// Frames dropped because alignment was impossible (P-MPJPE only).
    pub skipped_frames: usize,
}

fn summarize(errors_m: &[f64], skipped_frames: usize) -> Result<ErrorSummary, MetricsError> {
    if errors_m.is_empty() {
        return Err(MetricsError::EmptySubset);
    }
    Ok(ErrorSummary {
        mean_mm: pairwise_sum(errors_m) / errors_m.len() as f64 * 1000.0,
        count: errors_m.len(),
        skipped_frames,
    })
}

fn joint_errors(pred: &PoseSet3, gt: &PoseSet3, subset: &[usize]) -> Vec<f64> {
    let mut errors = Vec::new();
    for f in 0..pred.num_frames() {
        for &j in subset {
            if pred.validity[f][j] && gt.validity[f][j] {
                errors.push((pred.frames[f][j] - gt.frames[f][j]).norm());
            }
        }
    }
    errors
}

/// Mean per-joint position error over valid joints of `subset`, mm.
pub fn mpjpe(pred: &PoseSet3, gt: &PoseSet3, subset: &[usize]) -> Result<ErrorSummary, MetricsError> {
    check_pair(pred, gt)?;
    summarize(&joint_errors(pred, gt, subset), 0)
}

/// MPJPE after per-frame similarity alignment of the prediction onto the
/// ground truth. Alignment always uses every jointly valid keypoint; only the
/// error average is restricted to `subset`.
pub fn p_mpjpe(pred: &PoseSet3, gt: &PoseSet3, subset: &[usize]) -> Result<ErrorSummary, MetricsError> {
    check_pair(pred, gt)?;
    let mut errors = Vec::new();
    let mut skipped = 0;
    for f in 0..pred.num_frames() {
        let joint: Vec<usize> = (0..pred.num_keypoints())
            .filter(|&j| pred.validity[f][j] && gt.validity[f][j])
            .collect();
        let src: Vec<Vector3<f64>> = joint.iter().map(|&j| pred.frames[f][j]).collect();
        let dst: Vec<Vector3<f64>> = joint.iter().map(|&j| gt.frames[f][j]).collect();
        let Ok(t) = procrustes_align(&src, &dst, true) else {
            skipped += 1;
            continue;
        };
        for &j in subset {
            if pred.validity[f][j] && gt.validity[f][j] {
                errors.push((t.apply(&pred.frames[f][j]) - gt.frames[f][j]).norm());
            }
        }
    }
    summarize(&errors, skipped)
}

/// Uniform grid of `PCK_GRID_POINTS` thresholds on `[0, 0.5]`.
pub fn pck_thresholds() -> Vec<f64> {
    (0..PCK_GRID_POINTS)
        .map(|i| PCK_MAX_THRESHOLD * i as f64 / (PCK_GRID_POINTS - 1) as f64)
        .collect()
}

fn normalized_distances(
    pred: &PoseSet2,
    gt: &PoseSet2,
    bboxes: &[(f64, f64)],
    subset: &[usize],
) -> Result<Vec<f64>, MetricsError> {
    check_pair(pred, gt)?;
    if bboxes.len() != gt.num_frames() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} boxes for {} samples",
            bboxes.len(),
            gt.num_frames()
        )));
    }
    let mut d = Vec::new();
    for (f, &(w, h)) in bboxes.iter().enumerate() {
        let side = w.min(h);
        if !(side > 0.0) {
            return Err(MetricsError::InvalidBBox(f));
        }
        for &j in subset {
            if pred.validity[f][j] && gt.validity[f][j] {
                d.push((pred.frames[f][j] - gt.frames[f][j]).norm() / side);
            }
        }
    }
    if d.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    Ok(d)
}

/// Fraction of valid keypoints within each normalized threshold (inclusive).
pub fn pck_curve(
    pred: &PoseSet2,
    gt: &PoseSet2,
    bboxes: &[(f64, f64)],
    subset: &[usize],
    thresholds: &[f64],
) -> Result<Vec<f64>, MetricsError> {
    let mut d = normalized_distances(pred, gt, bboxes, subset)?;
    d.sort_by(f64::total_cmp);
    let n = d.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&tau| d.partition_point(|&x| x <= tau) as f64 / n)
        .collect())
}

/// Mean PCK over the default threshold grid, distances normalized by the
/// shorter side of each sample's person box.
pub fn pck_auc(pred: &PoseSet2, gt: &PoseSet2, bboxes: &[(f64, f64)], subset: &[usize]) -> Result<f64, MetricsError> {
    let curve = pck_curve(pred, gt, bboxes, subset, &pck_thresholds())?;
    Ok(pairwise_sum(&curve) / curve.len() as f64)
}

/// Per-keypoint OKS sigmas for the given names: established 17-keypoint
/// constants for face and limb points, foot constants for toes and heels,
/// and `spine_sigma` for everything else.
pub fn default_sigmas(keypoint_names: &[String], spine_sigma: f64) -> Vec<f64> {
    keypoint_names
        .iter()
        .map(|name| match name.as_str() {
            "Nose" => 0.026,
            "LEye" | "REye" => 0.025,
            "LEar" | "REar" => 0.035,
            "LShoulder" | "RShoulder" => 0.079,
            "LElbow" | "RElbow" => 0.072,
            "LWrist" | "RWrist" => 0.062,
            "LHip" | "RHip" => 0.107,
            "LKnee" | "RKnee" => 0.087,
            "LAnkle" | "RAnkle" => 0.089,
            "LBigToe" | "RBigToe" => 0.068,
            "LSmallToe" | "RSmallToe" => 0.066,
            "LHeel" | "RHeel" => 0.066,
            _ => spine_sigma,
        })
        .collect()
}

/// One annotated person.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub image: usize,
    pub keypoints: Vec<Vector2<f64>>,
    pub visible: Vec<bool>,
    /// Object scale `s²`, normally the box area in px².
    pub area: f64,
}

/// One scored detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image: usize,
    pub keypoints: Vec<Vector2<f64>>,
    pub score: f64,
}

/// Object keypoint similarity over `subset` with per-keypoint tolerance
/// `k_i = 2σ_i`: `Σ v_i exp(−d_i² / (2 s² k_i²)) / Σ v_i`. `None` when no
/// subset keypoint is visible.
pub fn oks(pred: &[Vector2<f64>], gt: &GroundTruthInstance, sigmas: &[f64], subset: &[usize]) -> Option<f64> {
    let mut terms = Vec::with_capacity(subset.len());
    for &i in subset {
        if !gt.visible[i] {
            continue;
        }
        let k = 2.0 * sigmas[i];
        let d2 = (pred[i] - gt.keypoints[i]).norm_squared();
        terms.push((-d2 / (2.0 * gt.area * k * k)).exp());
    }
    if terms.is_empty() {
        None
    } else {
        Some(pairwise_sum(&terms) / terms.len() as f64)
    }
}

/// Average precision and recall over the OKS threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ApAr {
    pub ap: f64,
    pub ar: f64,
    pub per_threshold: Vec<(f64, f64, f64)>,
}

/// Greedy score-ordered matching per image: each detection, best score
/// first, takes the unmatched ground truth with highest OKS at or above the
/// threshold. `gts` holds only instances with a visible subset keypoint, so
/// every one of them counts as a positive.
fn match_at(
    dets: &[Detection],
    gts: &[GroundTruthInstance],
    oks_table: &[Vec<Option<f64>>],
    order: &[usize],
    threshold: f64,
) -> (Vec<bool>, usize) {
    let mut taken = vec![false; gts.len()];
    let mut matched = vec![false; dets.len()];
    for &d in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.image != dets[d].image {
                continue;
            }
            if let Some(o) = oks_table[d][g] {
                if o >= threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            matched[d] = true;
        }
    }
    (matched, gts.len())
}

/// 101-point interpolated AP from matches listed in descending score order.
pub fn interpolated_ap(matched_in_order: &[bool], positives: usize) -> (f64, f64) {
    if positives == 0 {
        return (0.0, 0.0);
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(matched_in_order.len());
    let mut precision = Vec::with_capacity(matched_in_order.len());
    for (i, &m) in matched_in_order.iter().enumerate() {
        if m {
            tp += 1;
        }
        recall.push(tp as f64 / positives as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let samples: Vec<f64> = (0..=100)
        .map(|r| {
            let r = r as f64 / 100.0;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .collect();
    let ap = pairwise_sum(&samples) / samples.len() as f64;
    let ar = recall.last().copied().unwrap_or(0.0);
    (ap, ar)
}

/// COCO-style AP/AR of `detections` against `ground_truth` on `subset`.
pub fn oks_ap_ar(
    detections: &[Detection],
    ground_truth: &[GroundTruthInstance],
    sigmas: &[f64],
    keypoint_names: &[String],
    subset: &[usize],
) -> Result<ApAr, MetricsError> {
    for &i in subset {
        match sigmas.get(i) {
            Some(&s) if s > 0.0 => {}
            _ => {
                return Err(MetricsError::MissingSigmas(
                    keypoint_names.get(i).cloned().unwrap_or_else(|| i.to_string()),
                ))
            }
        }
    }
    for (g, gt) in ground_truth.iter().enumerate() {
        if !(gt.area > 0.0) {
            return Err(MetricsError::MissingScale(g));
        }
    }
    let k = keypoint_names.len();
    if ground_truth
        .iter()
        .any(|g| g.keypoints.len() != k || g.visible.len() != k)
        || detections.iter().any(|d| d.keypoints.len() != k)
    {
        return Err(MetricsError::ShapeMismatch("instance keypoint count".into()));
    }
    let gts: Vec<GroundTruthInstance> = ground_truth
        .iter()
        .filter(|g| subset.iter().any(|&i| g.visible[i]))
        .cloned()
        .collect();
    if gts.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    let oks_table: Vec<Vec<Option<f64>>> = detections
        .iter()
        .map(|d| {
            gts.iter()
                .map(|g| {
                    (g.image == d.image)
                        .then(|| oks(&d.keypoints, g, sigmas, subset))
                        .flatten()
                })
                .collect()
        })
        .collect();
    let mut order: Vec<usize> = (0..detections.len()).collect();
    // stable: ties keep input order
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
    let mut per_threshold = Vec::with_capacity(OKS_THRESHOLDS.len());
    for &t in &OKS_THRESHOLDS {
        let (matched, positives) = match_at(detections, &gts, &oks_table, &order, t);
        let in_order: Vec<bool> = order.iter().map(|&d| matched[d]).collect();
        let (ap, ar) = interpolated_ap(&in_order, positives);
        per_threshold.push((t, ap, ar));
    }
    let n = per_threshold.len() as f64;
    Ok(ApAr {
        ap: pairwise_sum(&per_threshold.iter().map(|p| p.1).collect::<Vec<_>>()) / n,
        ar: pairwise_sum(&per_threshold.iter().map(|p| p.2).collect::<Vec<_>>()) / n,
        per_threshold,
    })
}

/// One row of an evaluation table: a label and one value per subset in
/// `Subset::REPORT_ORDER` (`None` where the subset was empty).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub metric: String,
    pub rows: Vec<ReportRow>,
}

/// Metric tables with the configuration hash they were produced under.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationReport {
    pub config_hash: String,
    pub tables: Vec<ReportTable>,
    /// Scalar metrics without a subset breakdown (AUC, AP, AR).
    pub scalars: Vec<(String, f64)>,
}

/// MPJPE or P-MPJPE per action (grouping frames by `actions`) and pooled,
/// over every report subset.
pub fn subset_table(
    metric: &str,
    pred: &PoseSet3,
    gt: &PoseSet3,
    subsets: &RegionSubsets,
    actions: &[String],
    aligned: bool,
) -> Result<ReportTable, MetricsError> {
    check_pair(pred, gt)?;
    if !actions.is_empty() && actions.len() != gt.num_frames() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} action labels for {} frames",
            actions.len(),
            gt.num_frames()
        )));
    }
    let row = |label: String, frames: &[usize]| -> ReportRow {
        let pick = |p: &PoseSet3| PoseSet3 {
            keypoint_names: p.keypoint_names.clone(),
            frames: frames.iter().map(|&f| p.frames[f].clone()).collect(),
            validity: frames.iter().map(|&f| p.validity[f].clone()).collect(),
        };
        let (p, g) = (pick(pred), pick(gt));
        let values = Subset::REPORT_ORDER
            .iter()
            .map(|&s| {
                let idx = subsets.indices(s);
                let r = if aligned {
                    p_mpjpe(&p, &g, idx)
                } else {
                    mpjpe(&p, &g, idx)
                };
                r.ok().map(|e| e.mean_mm)
            })
            .collect();
        ReportRow { label, values }
    };
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (f, a) in actions.iter().enumerate() {
        groups.entry(a.as_str()).or_default().push(f);
    }
    let mut rows: Vec<ReportRow> = groups.iter().map(|(a, fr)| row(a.to_string(), fr)).collect();
    let all: Vec<usize> = (0..gt.num_frames()).collect();
    rows.push(row("Mean".to_string(), &all));
    Ok(ReportTable {
        metric: metric.to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("k{i}")).collect()
    }

    #[test]
    fn mpjpe_three_four_five() {
        let gt = PoseSet3::new(names(2), vec![vec![Vector3::zeros(), Vector3::x()]]);
        let mut pred = gt.clone();
        pred.frames[0][0] = Vector3::new(0.003, 0.004, 0.0);
        let e = mpjpe(&pred, &gt, &[0]).unwrap();
        assert!((e.mean_mm - 5.0).abs() < 1e-12);
        assert_eq!(mpjpe(&gt, &gt, &[0, 1]).unwrap().mean_mm, 0.0);
        assert_eq!(mpjpe(&gt, &gt, &[]), Err(MetricsError::EmptySubset));
    }

    #[test]
    fn root_center_zeroes_single_root() {
        let p = PoseSet3::new(
            names(3),
            vec![vec![Vector3::new(1.0, 2.0, 3.0), Vector3::x(), Vector3::y()]],
        );
        let c = root_center(&p, &[0]).unwrap();
        assert_eq!(c.frames[0][0], Vector3::zeros());
        assert_eq!(c.frames[0][1], Vector3::new(0.0, -2.0, -3.0));
        assert_eq!(root_center(&p, &[3]), Err(MetricsError::InvalidRootIndex(3)));
    }

    #[test]
    fn standardization_round_trips() {
        let frames: Vec<Vec<Vector3<f64>>> = (0..5)
            .map(|t| vec![Vector3::new(t as f64, 1.0, -(t as f64) * 2.0)])
            .collect();
        let p = PoseSet3::new(names(1), frames);
        let s = JointStandardization::fit(&p).unwrap();
        let z = s.apply(&p);
        assert!((s.std[0].y - 1.0).abs() < 1e-15);
        let back = s.invert(&z);
        for (a, b) in back.frames.iter().zip(&p.frames) {
            assert!((a[0] - b[0]).norm() < 1e-12);
        }
    }

    #[test]
    fn pck_at_quarter_distance() {
        let gt = PoseSet2::new(names(4), vec![vec![Vector2::zeros(); 4]]);
        let mut pred = gt.clone();
        for p in &mut pred.frames[0] {
            *p = Vector2::new(25.0, 0.0);
        }
        let auc = pck_auc(&pred, &gt, &[(100.0, 200.0)], &[0, 1, 2, 3]).unwrap();
        assert!((auc - 51.0 / 101.0).abs() < 1e-12);
        assert_eq!(pck_auc(&gt, &gt, &[(100.0, 200.0)], &[0, 1]).unwrap(), 1.0);
        for p in &mut pred.frames[0] {
            *p = Vector2::new(60.0, 0.0);
        }
        assert_eq!(pck_auc(&pred, &gt, &[(100.0, 200.0)], &[0]).unwrap(), 0.0);
        assert_eq!(
            pck_auc(&pred, &gt, &[(0.0, 200.0)], &[0]),
            Err(MetricsError::InvalidBBox(0))
        );
    }

    #[test]
    fn oks_single_miss_closed_form() {
        let n = 7;
        let sig = vec![0.05; n];
        let gt = GroundTruthInstance {
            image: 0,
            keypoints: vec![Vector2::zeros(); n],
            visible: vec![true; n],
            area: 400.0,
        };
        let k = 2.0 * sig[3];
        let d = (2.0 * gt.area * k * k).sqrt();
        let mut pred = gt.keypoints.clone();
        pred[3] = Vector2::new(d, 0.0);
        let all: Vec<usize> = (0..n).collect();
        let o = oks(&pred, &gt, &sig, &all).unwrap();
        let expect = (n as f64 - 1.0 + (-1.0f64).exp()) / n as f64;
        assert!((o - expect).abs() < 1e-12);
    }

    #[test]
    fn exact_detections_score_one() {
        let n = 5;
        let names = names(n);
        let sig = default_sigmas(&names, DEFAULT_SPINE_SIGMA);
        let gts: Vec<GroundTruthInstance> = (0..3)
            .map(|i| GroundTruthInstance {
                image: i,
                keypoints: (0..n).map(|j| Vector2::new(j as f64 * 10.0, i as f64)).collect(),
                visible: vec![true; n],
                area: 1e4,
            })
            .collect();
        let dets: Vec<Detection> = gts
            .iter()
            .map(|g| Detection {
                image: g.image,
                keypoints: g.keypoints.clone(),
                score: 0.9,
            })
            .collect();
        let all: Vec<usize> = (0..n).collect();
        let r = oks_ap_ar(&dets, &gts, &sig, &names, &all).unwrap();
        assert_eq!((r.ap, r.ar), (1.0, 1.0));
    }

    #[test]
    fn ap_missing_scale_and_sigma() {
        let names = names(2);
        let gt = GroundTruthInstance {
            image: 0,
            keypoints: vec![Vector2::zeros(); 2],
            visible: vec![true; 2],
            area: 0.0,
        };
        assert_eq!(
            oks_ap_ar(&[], std::slice::from_ref(&gt), &[0.1, 0.1], &names, &[0, 1]),
            Err(MetricsError::MissingScale(0))
        );
        assert!(matches!(
            oks_ap_ar(&[], &[gt], &[0.1], &names, &[0, 1]),
            Err(MetricsError::MissingSigmas(_))
        ));
    }

    #[test]
    fn subsets_partition_default_layout() {
        let s = SkeletonDefinition::default_definition();
        let r = RegionSubsets::from_skeleton(&s, &s.marker_names()).unwrap();
        let len = |x| r.indices(x).len();
        assert_eq!(
            [
                len(Subset::Cervical),
                len(Subset::Thoracic),
                len(Subset::Lumbar),
                len(Subset::Spine),
                len(Subset::Body),
                len(Subset::All)
            ],
            [5, 6, 4, 15, 22, 37]
        );
    }
}

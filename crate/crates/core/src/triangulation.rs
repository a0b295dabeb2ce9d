//! Multi-view triangulation: weighted linear DLT initialization, Huber
//! IRLS Gauss-Newton refinement on reprojection residuals, and view pruning.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{CameraModel, DEFAULT_DEPTH_EPSILON};
use crate::skeleton::MarkerTrajectory;

/// Cameras keyed by view id.
pub type CameraSet = BTreeMap<String, CameraModel>;

/// Normal-equation condition number above which ray geometry is treated as
/// degenerate.
pub const MAX_CONDITION: f64 = 1e12;

const MAX_STEP_HALVINGS: usize = 30;
/// Relative cost change treated as rounding when accepting a step; close to
/// the minimum the true decrease drops below the cost's own rounding error.
const COST_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriangulationError {
    #[error("insufficient views: {usable} usable, {required} required")]
    InsufficientViews { usable: usize, required: usize },
    #[error("no convergence after {iterations} iterations (last step {last_step:.3e} m, condition {condition:.3e})")]
    NoConvergence {
        iterations: usize,
        last_step: f64,
        condition: f64,
    },
    #[error("no camera for view `{0}`")]
    UnknownView(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation2D {
    pub view_id: String,
    pub keypoint_id: usize,
    pub position: Vector2<f64>,
    pub confidence: f64,
}

impl Observation2D {
    pub fn new(view_id: impl Into<String>, keypoint_id: usize, position: Vector2<f64>, confidence: f64) -> Self {
        Self {
            view_id: view_id.into(),
            keypoint_id,
            position,
            confidence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TriangulationMethod {
    /// DLT, Huber IRLS, view pruning, Huber IRLS.
    #[default]
    Robust,
    /// DLT followed by Gauss-Newton on squared reprojection error, no pruning.
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangulationConfig {
    /// Pixels. `f64::INFINITY` turns the loss into plain squared error.
    pub huber_delta: f64,
    pub max_irls_iterations: usize,
    /// Meters; Gauss-Newton stops once the step is shorter.
    pub convergence_tol: f64,
    pub min_views: usize,
    /// Observations with confidence below this are ignored.
    pub confidence_floor: f64,
    pub reprojection_reject_threshold: f64,
    pub view_consistency_threshold: f64,
    pub method: TriangulationMethod,
}

impl Default for TriangulationConfig {
    fn default() -> Self {
        Self {
            huber_delta: 5.0,
            max_irls_iterations: 20,
            convergence_tol: 1e-8,
            min_views: 2,
            confidence_floor: 0.1,
            reprojection_reject_threshold: 20.0,
            view_consistency_threshold: 20.0,
            method: TriangulationMethod::Robust,
        }
    }
}

impl TriangulationConfig {
    pub fn validate(&self) -> Result<(), TriangulationError> {
        let bad = |m: &str| Err(TriangulationError::InvalidConfig(m.to_string()));
        if self.min_views < 2 {
            return bad("min_views must be at least 2");
        }
        if !(self.huber_delta > 0.0) {
            return bad("huber_delta must be positive");
        }
        if !(self.convergence_tol > 0.0) {
            return bad("convergence_tol must be positive");
        }
        if !(self.reprojection_reject_threshold > 0.0) || !(self.view_consistency_threshold > 0.0) {
            return bad("rejection thresholds must be positive");
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return bad("confidence_floor must lie in [0, 1]");
        }
        if self.max_irls_iterations == 0 {
            return bad("max_irls_iterations must be positive");
        }
        Ok(())
    }
}

/// Per-view diagnostics of a triangulated point, in input order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResidualReport {
    pub view_ids: Vec<String>,
    pub reprojection_errors: Vec<f64>,
    /// Views that contributed to the final estimate.
    pub inliers: Vec<bool>,
    pub confidences: Vec<f64>,
    pub iterations: usize,
}

impl ResidualReport {
    pub fn max_error(&self) -> f64 {
        self.reprojection_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|i| **i).count()
    }

    /// Mean confidence over inlier views; zero when there are none.
    pub fn mean_inlier_confidence(&self) -> f64 {
        let c: Vec<f64> = self
            .confidences
            .iter()
            .zip(&self.inliers)
            .filter(|(_, i)| **i)
            .map(|(c, _)| *c)
            .collect();
        if c.is_empty() {
            0.0
        } else {
            c.iter().sum::<f64>() / c.len() as f64
        }
    }

    pub fn rms_error(&self) -> f64 {
        if self.reprojection_errors.is_empty() {
            return 0.0;
        }
        let ss: f64 = self.reprojection_errors.iter().map(|e| e * e).sum();
        (ss / self.reprojection_errors.len() as f64).sqrt()
    }
}

fn camera_for<'a>(cameras: &'a CameraSet, view: &str) -> Result<&'a CameraModel, TriangulationError> {
    cameras
        .get(view)
        .ok_or_else(|| TriangulationError::UnknownView(view.to_string()))
}

fn check_observation(o: &Observation2D) -> Result<(), TriangulationError> {
    if !(o.position.x.is_finite() && o.position.y.is_finite()) {
        return Err(TriangulationError::InvalidObservation(format!(
            "non-finite position in view `{}`",
            o.view_id
        )));
    }
    if !(0.0..=1.0).contains(&o.confidence) {
        return Err(TriangulationError::InvalidObservation(format!(
            "confidence {} outside [0, 1] in view `{}`",
            o.confidence, o.view_id
        )));
    }
    Ok(())
}

/// Confidence-weighted homogeneous DLT. Each view contributes the two
/// cross-product rows in normalized image coordinates, scaled to unit norm
/// and then by the observation confidence.
pub fn triangulate_dlt(
    observations: &[Observation2D],
    cameras: &CameraSet,
) -> Result<Vector3<f64>, TriangulationError> {
    if observations.len() < 2 {
        return Err(TriangulationError::InsufficientViews {
            usable: observations.len(),
            required: 2,
        });
    }
    let mut a = DMatrix::<f64>::zeros(2 * observations.len(), 4);
    for (i, o) in observations.iter().enumerate() {
        check_observation(o)?;
        let cam = camera_for(cameras, &o.view_id)?;
        let k_inv = cam
            .intrinsics
            .try_inverse()
            .ok_or_else(|| TriangulationError::UnknownView(o.view_id.clone()))?;
        let xn = k_inv * Vector3::new(o.position.x, o.position.y, 1.0);
        let (x, y) = (xn.x / xn.z, xn.y / xn.z);
        let mut rt = nalgebra::Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&cam.rotation);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&cam.translation);
        let r0 = rt.row(2) * x - rt.row(0);
        let r1 = rt.row(2) * y - rt.row(1);
        for (k, row) in [r0, r1].into_iter().enumerate() {
            let n = row.norm();
            let scale = if n > 0.0 { o.confidence / n } else { 0.0 };
            a.row_mut(2 * i + k).copy_from(&(row * scale));
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("svd v_t");
    let smallest = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(3);
    let h: Vector4<f64> = v_t.row(smallest).transpose().fixed_rows::<4>(0).into_owned();
    if !(h[3].abs() > 1e-12 * h.norm()) {
        return Err(TriangulationError::NoConvergence {
            iterations: 0,
            last_step: f64::INFINITY,
            condition: f64::INFINITY,
        });
    }
    Ok(h.xyz() / h[3])
}

fn huber_rho(r: f64, delta: f64) -> f64 {
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

fn huber_weight(r: f64, delta: f64) -> f64 {
    if r <= delta {
        1.0
    } else {
        delta / r
    }
}

struct Prepared<'a> {
    obs: &'a Observation2D,
    cam: &'a CameraModel,
}

fn robust_cost(prepared: &[Prepared], x: &Vector3<f64>, delta: f64) -> Option<f64> {
    let mut cost = 0.0;
    for p in prepared {
        let u = p.cam.project_with_epsilon(x, DEFAULT_DEPTH_EPSILON).ok()?;
        cost += p.obs.confidence * huber_rho((u - p.obs.position).norm(), delta);
    }
    Some(cost)
}

/// Huber-weighted Gauss-Newton from `initial`; returns the point and the
/// iteration count. Views in the linear Huber branch contribute only their
/// tangential curvature to the step matrix, falling back to plain IRLS
/// weights if that matrix is indefinite.
fn refine(
    prepared: &[Prepared],
    initial: Vector3<f64>,
    config: &TriangulationConfig,
) -> Result<(Vector3<f64>, usize), TriangulationError> {
    let delta = config.huber_delta;
    let mut x = initial;
    let mut cost = robust_cost(prepared, &x, delta).ok_or(TriangulationError::NoConvergence {
        iterations: 0,
        last_step: f64::INFINITY,
        condition: f64::INFINITY,
    })?;
    let mut last_step = f64::INFINITY;
    let mut condition = 0.0;
    for it in 1..=config.max_irls_iterations {
        let mut h = Matrix3::zeros();
        let mut h_newton = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for p in prepared {
            let (u, j) = p.cam.project_with_jacobian(&x, DEFAULT_DEPTH_EPSILON).map_err(|_| {
                TriangulationError::NoConvergence {
                    iterations: it,
                    last_step,
                    condition,
                }
            })?;
            let r = u - p.obs.position;
            let rn = r.norm();
            let w = p.obs.confidence * huber_weight(rn, delta);
            let jtj = j.transpose() * j;
            h += w * jtj;
            g += w * j.transpose() * r;
            if rn > delta {
                // the linear branch has no curvature along the residual direction
                let jr = j.transpose() * (r / rn);
                h_newton += w * (jtj - jr * jr.transpose());
            } else {
                h_newton += w * jtj;
            }
        }
        let eig = h.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(TriangulationError::NoConvergence {
                iterations: it,
                last_step,
                condition,
            });
        }
        let step = match h_newton.cholesky().or_else(|| h.cholesky()) {
            Some(c) => -c.solve(&g),
            None => {
                return Err(TriangulationError::NoConvergence {
                    iterations: it,
                    last_step,
                    condition,
                })
            }
        };
        // step halving keeps the robust objective non-increasing
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_STEP_HALVINGS {
            let candidate = x + step * alpha;
            if let Some(c) = robust_cost(prepared, &candidate, delta) {
                if c <= cost + COST_SLACK * (1.0 + cost) {
                    accepted = Some((candidate, c));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((candidate, c)) = accepted else {
            // no descent along the Gauss-Newton direction: stationary
            return Ok((x, it));
        };
        last_step = (candidate - x).norm();
        x = candidate;
        cost = c;
        if last_step < config.convergence_tol {
            return Ok((x, it));
        }
    }
    Err(TriangulationError::NoConvergence {
        iterations: config.max_irls_iterations,
        last_step,
        condition,
    })
}

fn report_for(prepared: &[Prepared], x: &Vector3<f64>, iterations: usize) -> ResidualReport {
    let mut report = ResidualReport {
        iterations,
        ..Default::default()
    };
    for p in prepared {
        let err = p
            .cam
            .project(x)
            .map(|u| (u - p.obs.position).norm())
            .unwrap_or(f64::INFINITY);
        report.view_ids.push(p.obs.view_id.clone());
        report.reprojection_errors.push(err);
        report.inliers.push(true);
        report.confidences.push(p.obs.confidence);
    }
    report
}

/// Observations that pass the confidence floor and have a known camera.
pub fn usable_observations(
    observations: &[Observation2D],
    cameras: &CameraSet,
    config: &TriangulationConfig,
) -> Result<Vec<Observation2D>, TriangulationError> {
    let mut out = Vec::with_capacity(observations.len());
    for o in observations {
        check_observation(o)?;
        camera_for(cameras, &o.view_id)?;
        if o.confidence >= config.confidence_floor && o.confidence > 0.0 {
            out.push(o.clone());
        }
    }
    Ok(out)
}

/// Gauss-Newton refinement of a provisional point over already-filtered
/// observations.
pub fn refine_from(
    observations: &[Observation2D],
    cameras: &CameraSet,
    initial: Vector3<f64>,
    config: &TriangulationConfig,
) -> Result<(Vector3<f64>, ResidualReport), TriangulationError> {
    let prepared: Vec<Prepared> = observations
        .iter()
        .map(|o| {
            Ok(Prepared {
                obs: o,
                cam: camera_for(cameras, &o.view_id)?,
            })
        })
        .collect::<Result<_, TriangulationError>>()?;
    let (x, iterations) = refine(&prepared, initial, config)?;
    Ok((x, report_for(&prepared, &x, iterations)))
}

fn reprojection_error(cam: &CameraModel, x: &Vector3<f64>, o: &Observation2D) -> f64 {
    cam.project(x).map(|u| (u - o.position).norm()).unwrap_or(f64::INFINITY)
}

/// Removes views that disagree with a provisional point.
///
/// Stage one drops views whose reprojection error exceeds
/// `reprojection_reject_threshold`. Stage two repeatedly drops the view with
/// the largest leave-one-out disagreement (reprojection error of the view
/// against the DLT point of the remaining views) while that disagreement
/// exceeds `view_consistency_threshold`. The result never has fewer than
/// `min_views` observations when the input had at least that many; in that
/// case the best-residual views are kept.
pub fn prune_views(
    observations: &[Observation2D],
    cameras: &CameraSet,
    provisional_point: &Vector3<f64>,
    config: &TriangulationConfig,
) -> Vec<Observation2D> {
    let min_views = config.min_views.max(2);
    if observations.len() <= min_views {
        return observations.to_vec();
    }
    let errors: Vec<f64> = observations
        .iter()
        .map(|o| match cameras.get(&o.view_id) {
            Some(cam) => reprojection_error(cam, provisional_point, o),
            None => f64::INFINITY,
        })
        .collect();
    let mut keep: Vec<usize> = (0..observations.len())
        .filter(|&i| errors[i] <= config.reprojection_reject_threshold)
        .collect();
    if keep.len() < min_views {
        let mut order: Vec<usize> = (0..observations.len()).collect();
        order.sort_by(|&a, &b| errors[a].total_cmp(&errors[b]).then(a.cmp(&b)));
        order.truncate(min_views);
        order.sort_unstable();
        return order.into_iter().map(|i| observations[i].clone()).collect();
    }

    while keep.len() > min_views && keep.len() >= 3 {
        let mut worst: Option<(usize, f64)> = None;
        for (slot, &i) in keep.iter().enumerate() {
            let others: Vec<Observation2D> = keep
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| observations[j].clone())
                .collect();
            let disagreement = match (triangulate_dlt(&others, cameras), cameras.get(&observations[i].view_id)) {
                (Ok(x), Some(cam)) => reprojection_error(cam, &x, &observations[i]),
                _ => continue,
            };
            if worst.is_none_or(|(_, d)| disagreement > d) {
                worst = Some((slot, disagreement));
            }
        }
        match worst {
            Some((slot, d)) if d > config.view_consistency_threshold => {
                keep.remove(slot);
            }
            _ => break,
        }
    }
    keep.into_iter().map(|i| observations[i].clone()).collect()
}

/// Triangulates one keypoint.
///
/// Robust method: confidence-weighted DLT, Huber IRLS Gauss-Newton,
/// [`prune_views`], then Huber IRLS again over the surviving views. The
/// report lists every usable view with its error at the final point; the
/// inlier mask marks the views that survived pruning.
///
/// Least-squares method: DLT then Gauss-Newton on squared error over all
/// usable views.
pub fn triangulate_point(
    observations: &[Observation2D],
    cameras: &CameraSet,
    config: &TriangulationConfig,
) -> Result<(Vector3<f64>, ResidualReport), TriangulationError> {
    config.validate()?;
    let usable = usable_observations(observations, cameras, config)?;
    if usable.len() < config.min_views {
        return Err(TriangulationError::InsufficientViews {
            usable: usable.len(),
            required: config.min_views,
        });
    }
    let initial = triangulate_dlt(&usable, cameras)?;
    match config.method {
        TriangulationMethod::LeastSquares => {
            let ls = TriangulationConfig {
                huber_delta: f64::INFINITY,
                ..config.clone()
            };
            refine_from(&usable, cameras, initial, &ls)
        }
        TriangulationMethod::Robust => {
            let (provisional, first) = refine_from(&usable, cameras, initial, config)?;
            let kept = prune_views(&usable, cameras, &provisional, config);
            if kept.len() == usable.len() {
                return Ok((provisional, first));
            }
            let start = triangulate_dlt(&kept, cameras).unwrap_or(provisional);
            let (x, second) = refine_from(&kept, cameras, start, config)?;
            let all = refine_report(&usable, cameras, &x)?;
            let report = ResidualReport {
                inliers: all
                    .view_ids
                    .iter()
                    .map(|v| kept.iter().any(|o| &o.view_id == v))
                    .collect(),
                iterations: first.iterations + second.iterations,
                ..all
            };
            Ok((x, report))
        }
    }
}

fn refine_report(
    observations: &[Observation2D],
    cameras: &CameraSet,
    x: &Vector3<f64>,
) -> Result<ResidualReport, TriangulationError> {
    let prepared: Vec<Prepared> = observations
        .iter()
        .map(|o| {
            Ok(Prepared {
                obs: o,
                cam: camera_for(cameras, &o.view_id)?,
            })
        })
        .collect::<Result<_, TriangulationError>>()?;
    Ok(report_for(&prepared, x, 0))
}

pub type PointOutcome = Result<(Vector3<f64>, ResidualReport), TriangulationError>;

/// Triangulated trajectory plus per-frame, per-keypoint outcomes.
#[derive(Debug, Clone)]
pub struct SequenceTriangulation {
    pub markers: MarkerTrajectory,
    pub outcomes: Vec<Vec<PointOutcome>>,
}

impl SequenceTriangulation {
    pub fn failure_count(&self) -> usize {
        self.outcomes.iter().flatten().filter(|o| o.is_err()).count()
    }
}

/// Triangulates every keypoint of every frame. Frame `f` gets timestamp
/// `f / frame_rate`. Failures become invalid entries; the sequence never
/// aborts on a per-keypoint error. Work is parallel over (frame, keypoint)
/// with output independent of scheduling.
pub fn triangulate_sequence(
    frames: &[Vec<Observation2D>],
    cameras: &CameraSet,
    keypoint_names: &[String],
    frame_rate: f64,
    config: &TriangulationConfig,
) -> Result<SequenceTriangulation, TriangulationError> {
    config.validate()?;
    if !(frame_rate > 0.0) {
        return Err(TriangulationError::InvalidConfig("frame_rate must be positive".into()));
    }
    let k = keypoint_names.len();
    // group each frame's observations by keypoint, preserving input order
    let grouped: Vec<Vec<Vec<Observation2D>>> = frames
        .iter()
        .map(|obs| {
            let mut per_kp = vec![Vec::new(); k];
            for o in obs {
                if o.keypoint_id < k {
                    per_kp[o.keypoint_id].push(o.clone());
                } else {
                    log::warn!("observation for unknown keypoint id {} ignored", o.keypoint_id);
                }
            }
            per_kp
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..frames.len()).flat_map(|f| (0..k).map(move |j| (f, j))).collect();
    let results: Vec<Result<(Vector3<f64>, ResidualReport), TriangulationError>> = jobs
        .par_iter()
        .map(|&(f, j)| triangulate_point(&grouped[f][j], cameras, config))
        .collect();

    let mut markers = MarkerTrajectory::new(keypoint_names.to_vec(), frame_rate);
    let mut outcomes = Vec::with_capacity(frames.len());
    let mut it = results.into_iter();
    for f in 0..frames.len() {
        let row: Vec<_> = it.by_ref().take(k).collect();
        let positions = row
            .iter()
            .map(|r| r.as_ref().map(|t| t.0).unwrap_or_else(|_| Vector3::zeros()))
            .collect();
        let validity = row.iter().map(|r| r.is_ok()).collect();
        let confidence = row
            .iter()
            .map(|r| r.as_ref().map(|t| t.1.mean_inlier_confidence()).unwrap_or(0.0))
            .collect();
        markers.push_frame_with(f as f64 / frame_rate, positions, validity, confidence);
        outcomes.push(row);
    }
    Ok(SequenceTriangulation { markers, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn intrinsics() -> Matrix3<f64> {
        Matrix3::new(1000.0, 0.0, 500.0, 0.0, 1000.0, 500.0, 0.0, 0.0, 1.0)
    }

    fn ring(n: usize, radius: f64) -> CameraSet {
        (0..n)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                let c = Vector3::new(radius * a.cos(), 1.5, radius * a.sin());
                let cam = CameraModel::look_at(
                    format!("cam{i}"),
                    intrinsics(),
                    c,
                    Vector3::new(0.0, 1.0, 0.0),
                    Vector3::y(),
                    1000,
                    1000,
                )
                .unwrap();
                (cam.view_id.clone(), cam)
            })
            .collect()
    }

    fn observe(cams: &CameraSet, x: &Vector3<f64>) -> Vec<Observation2D> {
        cams.values()
            .map(|c| Observation2D::new(c.view_id.clone(), 0, c.project(x).unwrap(), 1.0))
            .collect()
    }

    #[test]
    fn two_orthogonal_views_of_origin() {
        let cams = ring(4, 3.0);
        let two: CameraSet = cams.into_iter().step_by(1).take(2).collect();
        let x = Vector3::zeros();
        let (p, _) = triangulate_point(&observe(&two, &x), &two, &TriangulationConfig::default()).unwrap();
        assert!((p - x).norm() < 1e-9);
    }

    #[test]
    fn four_views_noise_free() {
        let cams = ring(4, 3.5);
        let x = Vector3::new(0.1, 0.2, 1.5);
        let obs = observe(&cams, &x);
        let dlt = triangulate_dlt(&obs, &cams).unwrap();
        assert!((dlt - x).norm() < 1e-9);
        let (p, report) = triangulate_point(&obs, &cams, &TriangulationConfig::default()).unwrap();
        assert!((p - x).norm() < 1e-9);
        assert!(report.inliers.iter().all(|i| *i));
        assert!(report.max_error() < 1e-6);
    }

    #[test]
    fn one_corrupted_view() {
        let cams = ring(4, 3.5);
        let x = Vector3::new(0.1, 1.2, -0.2);
        let mut obs = observe(&cams, &x);
        obs[1].position += Vector2::new(50.0, 0.0);
        let cfg = TriangulationConfig::default();
        let (robust, _) = triangulate_point(&obs, &cams, &cfg).unwrap();
        // squared loss with pruning still rejects the outlier; without pruning it does not
        let ls_cfg = TriangulationConfig {
            huber_delta: f64::INFINITY,
            reprojection_reject_threshold: 1e9,
            view_consistency_threshold: 1e9,
            ..cfg.clone()
        };
        let (ls, _) = triangulate_point(&obs, &cams, &ls_cfg).unwrap();
        let plain = TriangulationConfig {
            method: TriangulationMethod::LeastSquares,
            ..cfg.clone()
        };
        let (plain_ls, _) = triangulate_point(&obs, &cams, &plain).unwrap();
        assert!((plain_ls - x).norm() > 5e-3);
        assert!((robust - x).norm() < 1e-3, "robust err {}", (robust - x).norm());
        assert!((ls - x).norm() > 5e-3, "ls err {}", (ls - x).norm());
    }

    #[test]
    fn insufficient_views() {
        let cams = ring(4, 3.5);
        let mut obs = observe(&cams, &Vector3::new(0.0, 1.0, 0.0));
        for o in obs.iter_mut().skip(1) {
            o.confidence = 0.05;
        }
        assert!(matches!(
            triangulate_point(&obs, &cams, &TriangulationConfig::default()),
            Err(TriangulationError::InsufficientViews { usable: 1, required: 2 })
        ));
    }

    #[test]
    fn unknown_view_rejected() {
        let cams = ring(2, 3.5);
        let mut obs = observe(&cams, &Vector3::new(0.0, 1.0, 0.0));
        obs[0].view_id = "nope".into();
        assert!(matches!(
            triangulate_point(&obs, &cams, &TriangulationConfig::default()),
            Err(TriangulationError::UnknownView(_))
        ));
    }

    #[test]
    fn parallel_rays_do_not_converge() {
        // two cameras on the same line of sight through the point
        let k = intrinsics();
        let target = Vector3::new(0.0, 1.0, 0.0);
        let a = CameraModel::look_at("a", k, Vector3::new(0.0, 1.0, 3.0), target, Vector3::y(), 1000, 1000).unwrap();
        let b = CameraModel::look_at("b", k, Vector3::new(0.0, 1.0, 5.0), target, Vector3::y(), 1000, 1000).unwrap();
        let cams: CameraSet = [a, b].into_iter().map(|c| (c.view_id.clone(), c)).collect();
        let obs = observe(&cams, &target);
        let err = triangulate_point(&obs, &cams, &TriangulationConfig::default()).unwrap_err();
        assert!(matches!(err, TriangulationError::NoConvergence { .. }), "{err}");
    }

    #[test]
    fn prune_keeps_consistent_views() {
        let cams = ring(5, 3.5);
        let x = Vector3::new(0.0, 1.0, 0.0);
        let obs = observe(&cams, &x);
        let kept = prune_views(&obs, &cams, &x, &TriangulationConfig::default());
        assert_eq!(kept, obs);
    }

    #[test]
    fn prune_drops_far_view() {
        let cams = ring(4, 3.5);
        let x = Vector3::new(0.0, 1.0, 0.0);
        let mut obs = observe(&cams, &x);
        obs[2].position += Vector2::new(0.0, 100.0);
        let kept = prune_views(&obs, &cams, &x, &TriangulationConfig::default());
        assert_eq!(kept.len(), 3);
        assert!(kept.iter().all(|o| o.view_id != obs[2].view_id));
    }

    #[test]
    fn prune_never_below_min_views() {
        let cams = ring(4, 3.5);
        let x = Vector3::new(0.0, 1.0, 0.0);
        let mut obs = observe(&cams, &x);
        for (i, o) in obs.iter_mut().enumerate() {
            o.position += Vector2::new(100.0 + i as f64, 0.0);
        }
        let cfg = TriangulationConfig {
            min_views: 3,
            ..Default::default()
        };
        let kept = prune_views(&obs, &cams, &x, &cfg);
        assert_eq!(kept.len(), 3);
        // the three smallest residuals survive
        assert!(kept.iter().all(|o| o.view_id != obs[3].view_id));
    }

    #[test]
    fn two_of_five_corrupted() {
        let cams = ring(5, 3.5);
        let x = Vector3::new(0.05, 1.1, 0.1);
        let mut obs = observe(&cams, &x);
        obs[0].position += Vector2::new(80.0, -40.0);
        obs[3].position += Vector2::new(-60.0, 90.0);
        let cfg = TriangulationConfig::default();
        let (p, report) = triangulate_point(&obs, &cams, &cfg).unwrap();
        assert_eq!(report.inliers, vec![false, true, true, false, true]);
        assert!((p - x).norm() < 1e-3);
    }

    #[test]
    fn squared_loss_matches_dlt_on_exact_data() {
        let cams = ring(3, 3.0);
        let x = Vector3::new(-0.2, 0.7, 0.3);
        let obs = observe(&cams, &x);
        let cfg = TriangulationConfig {
            huber_delta: f64::INFINITY,
            ..Default::default()
        };
        let (p, _) = triangulate_point(&obs, &cams, &cfg).unwrap();
        let dlt = triangulate_dlt(&obs, &cams).unwrap();
        assert_relative_eq!(p, dlt, epsilon = 1e-8);
    }

    #[test]
    fn sequence_marks_low_confidence_invalid() {
        let cams = ring(4, 3.5);
        let names = vec!["a".to_string(), "b".to_string()];
        let xa = Vector3::new(0.0, 1.0, 0.0);
        let xb = Vector3::new(0.1, 1.4, 0.0);
        let mut frames = Vec::new();
        for f in 0..3 {
            let mut obs = observe(&cams, &xa);
            let mut ob = observe(&cams, &xb);
            for o in &mut ob {
                o.keypoint_id = 1;
            }
            obs.extend(ob);
            if f == 1 {
                for o in &mut obs {
                    o.confidence = 0.01;
                }
            }
            frames.push(obs);
        }
        let seq = triangulate_sequence(&frames, &cams, &names, 50.0, &TriangulationConfig::default()).unwrap();
        assert_eq!(seq.markers.num_frames(), 3);
        assert_eq!(seq.markers.validity[1], vec![false, false]);
        assert_eq!(seq.markers.validity[0], vec![true, true]);
        assert!((seq.markers.positions[2][1] - xb).norm() < 1e-9);
        assert_relative_eq!(seq.markers.timestamps[2], 0.04);
        assert_eq!(seq.failure_count(), 2);
    }
}

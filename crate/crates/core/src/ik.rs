//! Weighted least-squares inverse kinematics with optional temporal
//! smoothness.
//!
//! Per frame the solver minimizes `Σ_m w_m ‖z_m − ẑ_m(q)‖²` over the
//! skeleton's free (unlocked) coordinates with Levenberg-damped
//! Gauss-Newton. With `lambda_smooth > 0` overlapping windows of frames are
//! solved jointly with an added `λ‖Dq‖²` finite-difference penalty.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::skeleton::{JointState, JointTrajectory, MarkerTrajectory, SkeletonDefinition, SkeletonError};
use crate::temporal::MarkerWeights;

/// Minimum number of positively weighted valid markers for a pose solve.
pub const MIN_MARKERS: usize = 6;

const MU_INIT: f64 = 1e-3;
const MU_UP: f64 = 10.0;
const MU_DOWN: f64 = 3.0;
/// Damping beyond which no step can change the cost at f64 precision.
const MU_STALL: f64 = 1e10;
const WARM_START_ITERATIONS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IkError {
    #[error("pose unobservable: {0}")]
    Unobservable(String),
    #[error("no convergence after {iterations} iterations (projected gradient {gradient:.3e})")]
    NoConvergence { iterations: usize, gradient: f64 },
    #[error("invalid IK configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SmoothOperator {
    Velocity,
    #[default]
    Acceleration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkConfig {
    pub marker_weights: MarkerWeights,
    pub lambda_smooth: f64,
    pub smooth_operator: SmoothOperator,
    pub max_iterations: usize,
    /// Infinity norm of the projected gradient of the objective.
    pub gradient_tol: f64,
    /// Norm of the accepted step in coordinate space.
    pub step_tol: f64,
    /// Frames per smoothing window.
    pub window: usize,
    pub enforce_limits: bool,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            marker_weights: MarkerWeights::uniform(1.0),
            lambda_smooth: 0.0,
            smooth_operator: SmoothOperator::Acceleration,
            max_iterations: 100,
            gradient_tol: 1e-10,
            step_tol: 1e-10,
            window: 20,
            enforce_limits: true,
        }
    }
}

impl IkConfig {
    /// Defaults with weight 1.0 for body markers and 0.5 for spinal
    /// (lumbar, thoracic, cervical) markers of `skeleton`.
    pub fn for_skeleton(skeleton: &SkeletonDefinition) -> Self {
        let mut weights = MarkerWeights::uniform(1.0);
        for m in &skeleton.markers {
            if m.region.is_spine() {
                weights.overrides.insert(m.marker_name.clone(), 0.5);
            }
        }
        Self {
            marker_weights: weights,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), IkError> {
        let bad = |m: &str| Err(IkError::InvalidConfig(m.to_string()));
        if !(self.lambda_smooth >= 0.0) {
            return bad("lambda_smooth must be non-negative");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.gradient_tol > 0.0 && self.step_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.window < 3 {
            return bad("window must be at least 3 frames");
        }
        if self.marker_weights.default < 0.0 || self.marker_weights.overrides.values().any(|w| !(*w >= 0.0)) {
            return bad("marker weights must be non-negative");
        }
        Ok(())
    }
}

/// One frame of IK targets aligned with the skeleton's markers. A zero
/// weight marks a marker as unused.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerFrame {
    pub positions: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

impl MarkerFrame {
    pub fn active_count(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }
}

/// Maps skeleton markers to trajectory columns by name.
pub fn marker_columns(skeleton: &SkeletonDefinition, targets: &MarkerTrajectory) -> Vec<Option<usize>> {
    skeleton
        .markers
        .iter()
        .map(|m| targets.marker_index(&m.marker_name))
        .collect()
}

/// IK targets for frame `f`: weight = configured marker weight × sample
/// confidence, zero for invalid or absent markers.
pub fn frame_targets(
    skeleton: &SkeletonDefinition,
    targets: &MarkerTrajectory,
    columns: &[Option<usize>],
    f: usize,
    config: &IkConfig,
) -> MarkerFrame {
    let mut positions = Vec::with_capacity(columns.len());
    let mut weights = Vec::with_capacity(columns.len());
    for (m, col) in columns.iter().enumerate() {
        match col {
            Some(c) if targets.validity[f][*c] => {
                positions.push(targets.positions[f][*c]);
                weights
                    .push(config.marker_weights.weight(&skeleton.markers[m].marker_name) * targets.confidence[f][*c]);
            }
            _ => {
                positions.push(Vector3::zeros());
                weights.push(0.0);
            }
        }
    }
    MarkerFrame { positions, weights }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSolution {
    pub state: JointState,
    /// Distance to target per skeleton marker; `None` where unused.
    pub residuals: Vec<Option<f64>>,
    /// Unweighted RMS over used markers, meters.
    pub rms: f64,
    pub iterations: usize,
    /// Objective after each accepted step, starting with the initial value.
    pub cost_history: Vec<f64>,
    /// Number of near-zero eigenvalues of the final normal matrix; those
    /// directions keep their warm-start values.
    pub null_directions: usize,
}

/// Free-coordinate problem for one frame.
struct FrameProblem<'a> {
    skeleton: &'a SkeletonDefinition,
    free: &'a [usize],
    targets: &'a MarkerFrame,
}

impl FrameProblem<'_> {
    fn cost(&self, q: &[f64]) -> f64 {
        let kin = self.skeleton.kinematics(q).expect("state length checked");
        let p = self.skeleton.marker_positions(&kin);
        p.iter()
            .zip(&self.targets.positions)
            .zip(&self.targets.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|((p, z), w)| w * (p - z).norm_squared())
            .sum()
    }

    /// Normal matrix `JᵀWJ`, gradient half `JᵀWr` with `r = ẑ − z`, and cost.
    fn linearize(&self, q: &[f64]) -> (DMatrix<f64>, DVector<f64>, f64) {
        let kin = self.skeleton.kinematics(q).expect("state length checked");
        let p = self.skeleton.marker_positions(&kin);
        let jac = self.skeleton.marker_jacobian(&kin, self.free);
        let n = self.free.len();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        let mut cost = 0.0;
        for (m, w) in self.targets.weights.iter().enumerate() {
            if *w <= 0.0 {
                continue;
            }
            let r = p[m] - self.targets.positions[m];
            cost += w * r.norm_squared();
            let jm = jac.rows(3 * m, 3);
            h += *w * jm.transpose() * jm;
            g += *w * jm.transpose() * r;
        }
        (h, g, cost)
    }
}

fn clamp_free(skeleton: &SkeletonDefinition, free: &[usize], q: &mut [f64]) {
    for &c in free {
        let (lo, hi) = skeleton.dof(c).limits;
        q[c] = q[c].clamp(lo, hi);
    }
}

/// Infinity norm of the gradient after zeroing components that push a
/// coordinate already at a limit further outward.
fn projected_gradient_norm(
    skeleton: &SkeletonDefinition,
    free: &[usize],
    q: &[f64],
    g: &DVector<f64>,
    limits: bool,
) -> f64 {
    free.iter()
        .enumerate()
        .map(|(i, &c)| {
            let gi = g[i];
            if limits {
                let (lo, hi) = skeleton.dof(c).limits;
                // descent direction is -g
                if (q[c] <= lo && gi > 0.0) || (q[c] >= hi && gi < 0.0) {
                    return 0.0;
                }
            }
            gi.abs()
        })
        .fold(0.0, f64::max)
}

/// Coordinates sitting on a limit whose descent direction points outward.
fn active_bounds(skeleton: &SkeletonDefinition, free: &[usize], q: &[f64], g: &DVector<f64>) -> Vec<bool> {
    free.iter()
        .enumerate()
        .map(|(i, &c)| {
            let (lo, hi) = skeleton.dof(c).limits;
            (q[c] <= lo && g[i] > 0.0) || (q[c] >= hi && g[i] < 0.0)
        })
        .collect()
}

/// Pins the flagged variables of a linear system to a zero step.
fn freeze(a: &mut DMatrix<f64>, rhs: &mut DVector<f64>, active: &[bool]) {
    for (i, &on) in active.iter().enumerate() {
        if on {
            a.row_mut(i).fill(0.0);
            a.column_mut(i).fill(0.0);
            a[(i, i)] = 1.0;
            rhs[i] = 0.0;
        }
    }
}

fn null_directions(h: &DMatrix<f64>) -> usize {
    let eig = h.clone().symmetric_eigenvalues();
    let max = eig.iter().copied().fold(0.0, f64::max);
    eig.iter().filter(|&&e| e <= 1e-12 * max.max(f64::MIN_POSITIVE)).count()
}

/// Solves one frame from `warm_start`, at most `max_iterations` steps.
fn solve_frame_limited(
    skeleton: &SkeletonDefinition,
    targets: &MarkerFrame,
    warm_start: &JointState,
    config: &IkConfig,
    max_iterations: usize,
) -> Result<(FrameSolution, bool), IkError> {
    if warm_start.values.len() != skeleton.coordinate_count() {
        return Err(SkeletonError::StateLength {
            expected: skeleton.coordinate_count(),
            got: warm_start.values.len(),
        }
        .into());
    }
    if targets.positions.len() != skeleton.markers.len() || targets.weights.len() != skeleton.markers.len() {
        return Err(IkError::InvalidConfig(
            "targets must align with skeleton markers".into(),
        ));
    }
    let active = targets.active_count();
    if active < MIN_MARKERS {
        return Err(IkError::Unobservable(format!(
            "{active} weighted valid markers, at least {MIN_MARKERS} required"
        )));
    }
    let free = skeleton.free_coordinates();
    let problem = FrameProblem {
        skeleton,
        free: &free,
        targets,
    };
    let mut q = warm_start.values.clone();
    for (c, v) in q.iter_mut().enumerate() {
        if skeleton.dof(c).locked {
            *v = skeleton.dof(c).default_value;
        }
    }
    if config.enforce_limits {
        clamp_free(skeleton, &free, &mut q);
    }
    let (mut h, mut g, mut cost) = problem.linearize(&q);
    let mut history = vec![cost];
    let mut mu = MU_INIT;
    let mut converged = false;
    let mut iterations = 0;
    let n = free.len();
    while iterations < max_iterations {
        if projected_gradient_norm(skeleton, &free, &q, &g, config.enforce_limits) < config.gradient_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let active = if config.enforce_limits {
            active_bounds(skeleton, &free, &q, &g)
        } else {
            vec![false; n]
        };
        let mut accepted = false;
        while mu <= MU_STALL {
            let mut a = h.clone();
            let mut rhs = -&g;
            for i in 0..n {
                a[(i, i)] += mu;
            }
            freeze(&mut a, &mut rhs, &active);
            let Some(chol) = Cholesky::new(a) else {
                mu *= MU_UP;
                continue;
            };
            let delta = chol.solve(&rhs);
            let mut trial = q.clone();
            for (i, &c) in free.iter().enumerate() {
                trial[c] += delta[i];
            }
            if config.enforce_limits {
                clamp_free(skeleton, &free, &mut trial);
            }
            let trial_cost = problem.cost(&trial);
            if trial_cost < cost {
                let step: f64 = free.iter().map(|&c| (trial[c] - q[c]).powi(2)).sum::<f64>().sqrt();
                q = trial;
                mu = (mu / MU_DOWN).max(1e-12);
                accepted = true;
                let lin = problem.linearize(&q);
                h = lin.0;
                g = lin.1;
                cost = lin.2;
                history.push(cost);
                if step < config.step_tol {
                    converged = true;
                }
                break;
            }
            mu *= MU_UP;
        }
        if !accepted {
            // no damped step lowers the cost: stationary at working precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    let kin = skeleton.kinematics(&q)?;
    let p = skeleton.marker_positions(&kin);
    let residuals: Vec<Option<f64>> = p
        .iter()
        .zip(&targets.positions)
        .zip(&targets.weights)
        .map(|((p, z), w)| (*w > 0.0).then(|| (p - z).norm()))
        .collect();
    let used: Vec<f64> = residuals.iter().flatten().map(|r| r * r).collect();
    let rms = (used.iter().sum::<f64>() / used.len() as f64).sqrt();
    let solution = FrameSolution {
        state: JointState::new(q, warm_start.timestamp),
        residuals,
        rms,
        iterations,
        cost_history: history,
        null_directions: null_directions(&h),
    };
    Ok((solution, converged))
}

/// Damped Gauss-Newton solve of one frame.
pub fn solve_frame(
    skeleton: &SkeletonDefinition,
    targets: &MarkerFrame,
    warm_start: &JointState,
    config: &IkConfig,
) -> Result<FrameSolution, IkError> {
    config.validate()?;
    let (solution, converged) = solve_frame_limited(skeleton, targets, warm_start, config, config.max_iterations)?;
    if !converged {
        let free = skeleton.free_coordinates();
        let problem = FrameProblem {
            skeleton,
            free: &free,
            targets,
        };
        let (_, g, _) = problem.linearize(&solution.state.values);
        let gradient = projected_gradient_norm(skeleton, &free, &solution.state.values, &g, config.enforce_limits);
        return Err(IkError::NoConvergence {
            iterations: solution.iterations,
            gradient,
        });
    }
    Ok(solution)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub states: JointTrajectory,
    pub per_frame_rms: Vec<f64>,
    /// `T × K` distances per skeleton marker; `None` where unused or failed.
    pub per_marker_residuals: Vec<Vec<Option<f64>>>,
    pub converged: Vec<bool>,
}

impl IkSolution {
    pub fn mean_rms(&self) -> f64 {
        let v: Vec<f64> = self
            .per_frame_rms
            .iter()
            .zip(&self.converged)
            .filter(|(r, c)| **c && r.is_finite())
            .map(|(r, _)| *r)
            .collect();
        crate::numeric::mean(&v).unwrap_or(f64::NAN)
    }
}

/// Solves a whole marker trajectory.
///
/// With `lambda_smooth = 0` a sequential sweep of short solves seeds every
/// frame with the previous frame's pose, then all frames are solved to
/// convergence in parallel. With `lambda_smooth > 0` the per-frame result
/// seeds overlapping windows (stride `window / 2`) that are solved jointly
/// with the smoothness penalty and blended linearly where they overlap.
///
/// Frames that fail are flagged and their states interpolated from the
/// nearest successful frames.
pub fn solve_sequence(
    skeleton: &SkeletonDefinition,
    targets: &MarkerTrajectory,
    config: &IkConfig,
) -> Result<IkSolution, IkError> {
    config.validate()?;
    let t = targets.num_frames();
    let columns = marker_columns(skeleton, targets);
    let frames: Vec<MarkerFrame> = (0..t)
        .map(|f| frame_targets(skeleton, targets, &columns, f, config))
        .collect();

    // phase one: sequential warm starts
    let mut seeds = Vec::with_capacity(t);
    let mut prev = skeleton.neutral_state();
    for (f, frame) in frames.iter().enumerate() {
        let start = JointState::new(prev.values.clone(), targets.timestamps[f]);
        match solve_frame_limited(skeleton, frame, &start, config, WARM_START_ITERATIONS) {
            Ok((sol, _)) => {
                prev = sol.state.clone();
                seeds.push(sol.state);
            }
            Err(_) => seeds.push(start),
        }
    }
    // phase two: independent full solves
    let results: Vec<Result<FrameSolution, IkError>> = frames
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(frame, seed)| solve_frame(skeleton, frame, seed, config))
        .collect();
    for (f, r) in results.iter().enumerate() {
        if let Err(e) = r {
            log::warn!("IK failed at frame {f}: {e}");
        }
    }
    let ok: Vec<bool> = results.iter().map(|r| r.is_ok()).collect();
    let mut states: Vec<JointState> = results
        .iter()
        .zip(&seeds)
        .map(|(r, s)| r.as_ref().map(|s| s.state.clone()).unwrap_or_else(|_| s.clone()))
        .collect();
    interpolate_failed(&mut states, &ok);

    if config.lambda_smooth > 0.0 && t >= 3 {
        states = smooth_windows(skeleton, &frames, &states, &ok, config);
    }

    let mut per_frame_rms = Vec::with_capacity(t);
    let mut per_marker = Vec::with_capacity(t);
    for (f, state) in states.iter_mut().enumerate() {
        state.timestamp = targets.timestamps[f];
        let p = skeleton.forward_kinematics(state)?;
        let res: Vec<Option<f64>> = p
            .iter()
            .zip(&frames[f].positions)
            .zip(&frames[f].weights)
            .map(|((p, z), w)| (*w > 0.0 && ok[f]).then(|| (p - z).norm()))
            .collect();
        let sq: Vec<f64> = res.iter().flatten().map(|r| r * r).collect();
        per_frame_rms.push(if sq.is_empty() {
            f64::NAN
        } else {
            (sq.iter().sum::<f64>() / sq.len() as f64).sqrt()
        });
        per_marker.push(res);
    }
    let mut trajectory = JointTrajectory::new(skeleton.coordinate_names.clone(), states);
    trajectory.flagged = ok.iter().map(|o| !o).collect();
    Ok(IkSolution {
        states: trajectory,
        per_frame_rms,
        per_marker_residuals: per_marker,
        converged: ok,
    })
}

/// Replaces states of failed frames by linear interpolation between the
/// nearest successful neighbours (or the nearest one at the ends).
fn interpolate_failed(states: &mut [JointState], ok: &[bool]) {
    let good: Vec<usize> = (0..ok.len()).filter(|&f| ok[f]).collect();
    if good.is_empty() {
        return;
    }
    for f in 0..ok.len() {
        if ok[f] {
            continue;
        }
        let after = good.partition_point(|&g| g < f);
        let values = match (after.checked_sub(1).map(|i| good[i]), good.get(after).copied()) {
            (Some(a), Some(b)) => {
                let w = (f - a) as f64 / (b - a) as f64;
                states[a]
                    .values
                    .iter()
                    .zip(&states[b].values)
                    .map(|(x, y)| x * (1.0 - w) + y * w)
                    .collect()
            }
            (Some(a), None) => states[a].values.clone(),
            (None, Some(b)) => states[b].values.clone(),
            (None, None) => unreachable!(),
        };
        states[f].values = values;
    }
}

/// Window start indices: stride `window / 2`, last window flush with the end.
fn window_starts(t: usize, window: usize) -> Vec<usize> {
    if t <= window {
        return vec![0];
    }
    let stride = (window / 2).max(1);
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + window < t).collect();
    starts.push(t - window);
    starts.dedup();
    starts
}

/// Finite-difference operator `D` for a window of `w` frames.
fn difference_matrix(w: usize, op: SmoothOperator) -> DMatrix<f64> {
    match op {
        SmoothOperator::Velocity => DMatrix::from_fn(w - 1, w, |r, c| {
            if c == r {
                -1.0
            } else if c == r + 1 {
                1.0
            } else {
                0.0
            }
        }),
        SmoothOperator::Acceleration => DMatrix::from_fn(w - 2, w, |r, c| {
            if c == r || c == r + 2 {
                1.0
            } else if c == r + 1 {
                -2.0
            } else {
                0.0
            }
        }),
    }
}

fn smooth_windows(
    skeleton: &SkeletonDefinition,
    frames: &[MarkerFrame],
    init: &[JointState],
    ok: &[bool],
    config: &IkConfig,
) -> Vec<JointState> {
    let t = frames.len();
    let w = config.window.min(t);
    let starts = window_starts(t, w);
    let solved: Vec<Vec<Vec<f64>>> = starts
        .par_iter()
        .map(|&s| solve_window(skeleton, &frames[s..s + w], &init[s..s + w], &ok[s..s + w], config))
        .collect();
    let n = skeleton.coordinate_count();
    let mut acc = vec![vec![0.0; n]; t];
    let mut wsum = vec![0.0; t];
    for (&s, sol) in starts.iter().zip(&solved) {
        for (i, q) in sol.iter().enumerate() {
            // tent weight: small at window edges, largest mid-window
            let wt = ((i + 1).min(w - i)) as f64;
            for c in 0..n {
                acc[s + i][c] += wt * q[c];
            }
            wsum[s + i] += wt;
        }
    }
    (0..t)
        .map(|f| {
            let values = acc[f].iter().map(|v| v / wsum[f]).collect();
            JointState::new(values, init[f].timestamp)
        })
        .collect()
}

/// Block-banded symmetric positive-definite matrix stored by its lower
/// blocks: `blocks[i][k]` is block `(i, i - band + k)` for `k ≤ band`.
struct BlockBanded {
    n: usize,
    band: usize,
    blocks: Vec<Vec<DMatrix<f64>>>,
}

impl BlockBanded {
    fn zeros(count: usize, n: usize, band: usize) -> Self {
        Self {
            n,
            band,
            blocks: (0..count).map(|_| vec![DMatrix::zeros(n, n); band + 1]).collect(),
        }
    }

    fn block_mut(&mut self, i: usize, j: usize) -> &mut DMatrix<f64> {
        debug_assert!(j <= i && i - j <= self.band);
        let k = self.band + j - i;
        &mut self.blocks[i][k]
    }

    fn block(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.blocks[i][self.band + j - i]
    }

    /// In-place block Cholesky `A = L Lᵀ`; `None` if not positive definite.
    fn factor(&self) -> Option<BlockBanded> {
        let count = self.blocks.len();
        let mut l = BlockBanded::zeros(count, self.n, self.band);
        for i in 0..count {
            let lo = i.saturating_sub(self.band);
            for j in lo..i {
                let mut s = self.block(i, j).clone();
                for k in lo..j {
                    if j - k <= self.band {
                        s -= l.block(i, k) * l.block(j, k).transpose();
                    }
                }
                // L_ij = S L_jj^{-T}  ⇔  L_jj L_ijᵀ = Sᵀ
                let lt = l.block(j, j).solve_lower_triangular(&s.transpose())?;
                *l.block_mut(i, j) = lt.transpose();
            }
            let mut s = self.block(i, i).clone();
            for k in lo..i {
                s -= l.block(i, k) * l.block(i, k).transpose();
            }
            let chol = Cholesky::<f64, Dyn>::new(s)?;
            *l.block_mut(i, i) = chol.l();
        }
        Some(l)
    }

    /// Solves `L Lᵀ x = b` given the factor `self = L`.
    #[allow(clippy::needless_range_loop)]
    fn solve_factored(&self, b: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let count = self.blocks.len();
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(count);
        for i in 0..count {
            let mut r = b[i].clone();
            for k in i.saturating_sub(self.band)..i {
                r -= self.block(i, k) * &y[k];
            }
            y.push(self.block(i, i).solve_lower_triangular(&r).expect("nonsingular factor"));
        }
        let mut x = vec![DVector::zeros(self.n); count];
        for i in (0..count).rev() {
            let mut r = y[i].clone();
            for k in i + 1..(i + self.band + 1).min(count) {
                r -= self.block(k, i).transpose() * &x[k];
            }
            x[i] = self
                .block(i, i)
                .tr_solve_lower_triangular(&r)
                .expect("nonsingular factor");
        }
        x
    }
}

/// Joint solve of `w` consecutive frames with the smoothness penalty.
/// Frames that failed per-frame IK contribute no data term.
fn solve_window(
    skeleton: &SkeletonDefinition,
    frames: &[MarkerFrame],
    init: &[JointState],
    ok: &[bool],
    config: &IkConfig,
) -> Vec<Vec<f64>> {
    let w = frames.len();
    let free = skeleton.free_coordinates();
    let n = free.len();
    let d = difference_matrix(w, config.smooth_operator);
    let s = d.transpose() * &d * config.lambda_smooth;
    let band = match config.smooth_operator {
        SmoothOperator::Velocity => 1,
        SmoothOperator::Acceleration => 2,
    };
    let problems: Vec<FrameProblem> = frames
        .iter()
        .map(|f| FrameProblem {
            skeleton,
            free: &free,
            targets: f,
        })
        .collect();
    let free_vals = |qs: &[Vec<f64>], i: usize| DVector::from_iterator(n, free.iter().map(|&c| qs[i][c]));
    let smooth_cost = |qs: &[Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for r in 0..d.nrows() {
            let mut v = DVector::zeros(n);
            for c in 0..w {
                if d[(r, c)] != 0.0 {
                    v += free_vals(qs, c) * d[(r, c)];
                }
            }
            total += v.norm_squared();
        }
        config.lambda_smooth * total
    };
    let data_cost = |qs: &[Vec<f64>]| -> f64 { (0..w).filter(|&i| ok[i]).map(|i| problems[i].cost(&qs[i])).sum() };

    let mut qs: Vec<Vec<f64>> = init.iter().map(|s| s.values.clone()).collect();
    let mut mu = MU_INIT;
    let mut cost = data_cost(&qs) + smooth_cost(&qs);
    for _ in 0..config.max_iterations {
        let mut a = BlockBanded::zeros(w, n, band);
        let mut g: Vec<DVector<f64>> = vec![DVector::zeros(n); w];
        for i in 0..w {
            if ok[i] {
                let (h, gi, _) = problems[i].linearize(&qs[i]);
                *a.block_mut(i, i) += h;
                g[i] += gi;
            }
        }
        for i in 0..w {
            for j in i.saturating_sub(band)..=i {
                let sij = s[(i, j)];
                if sij != 0.0 {
                    let blk = a.block_mut(i, j);
                    for k in 0..n {
                        blk[(k, k)] += sij;
                    }
                }
            }
            for j in 0..w {
                let sij = s[(i, j)];
                if sij != 0.0 {
                    g[i] += free_vals(&qs, j) * sij;
                }
            }
        }
        let gnorm = g.iter().map(|v| v.amax()).fold(0.0, f64::max);
        if gnorm < config.gradient_tol {
            break;
        }
        let mut accepted = false;
        let mut small_step = false;
        while mu <= MU_STALL {
            let mut damped = BlockBanded {
                n,
                band,
                blocks: a.blocks.clone(),
            };
            for i in 0..w {
                let blk = damped.block_mut(i, i);
                for k in 0..n {
                    blk[(k, k)] += mu;
                }
            }
            let Some(l) = damped.factor() else {
                mu *= MU_UP;
                continue;
            };
            let neg: Vec<DVector<f64>> = g.iter().map(|v| -v).collect();
            let delta = l.solve_factored(&neg);
            let mut trial = qs.clone();
            let mut step2 = 0.0;
            for i in 0..w {
                for (k, &c) in free.iter().enumerate() {
                    trial[i][c] += delta[i][k];
                }
                if config.enforce_limits {
                    clamp_free(skeleton, &free, &mut trial[i]);
                }
                step2 += free.iter().map(|&c| (trial[i][c] - qs[i][c]).powi(2)).sum::<f64>();
            }
            let trial_cost = data_cost(&trial) + smooth_cost(&trial);
            if trial_cost < cost {
                qs = trial;
                cost = trial_cost;
                mu = (mu / MU_DOWN).max(1e-12);
                accepted = true;
                small_step = step2.sqrt() < config.step_tol;
                break;
            }
            mu *= MU_UP;
        }
        if !accepted || small_step {
            break;
        }
    }
    qs
}

mod common;

use nalgebra::Vector3;
use proptest::prelude::*;

use spinekin::ik::{solve_frame, solve_sequence, IkConfig, MarkerFrame, SmoothOperator};
use spinekin::{JointState, MarkerTrajectory, SkeletonDefinition};

fn skel() -> SkeletonDefinition {
    SkeletonDefinition::default_definition()
}

/// FK markers of `q` displaced by up to `noise` meters per axis.
fn noisy_targets(s: &SkeletonDefinition, q: &JointState, noise: f64, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = common::rng(seed);
    s.forward_kinematics(q)
        .unwrap()
        .into_iter()
        .map(|p| p + common::random_vector(&mut rng, noise))
        .collect()
}

fn frame(positions: Vec<Vector3<f64>>) -> MarkerFrame {
    let weights = vec![1.0; positions.len()];
    MarkerFrame { positions, weights }
}

fn trajectory(s: &SkeletonDefinition, frames: Vec<Vec<Vector3<f64>>>) -> MarkerTrajectory {
    let mut t = MarkerTrajectory::new(s.marker_names(), 50.0);
    for (f, p) in frames.into_iter().enumerate() {
        t.push_frame(f as f64 / 50.0, p);
    }
    t
}

fn non_root(s: &SkeletonDefinition) -> Vec<usize> {
    let roots = common::root_coordinates();
    (0..s.coordinate_count())
        .filter(|&c| !roots.contains(&s.coordinate_names[c].as_str()))
        .collect()
}

fn second_difference_energy(states: &[JointState], coords: &[usize]) -> f64 {
    states
        .windows(3)
        .map(|w| {
            coords
                .iter()
                .map(|&c| (w[0].values[c] - 2.0 * w[1].values[c] + w[2].values[c]).powi(2))
                .sum::<f64>()
        })
        .sum()
}

#[test]
fn static_targets_give_constant_pose_for_any_lambda() {
    let s = skel();
    let mut rng = common::rng(3);
    let q = common::random_state(&s, &mut rng, 0.3);
    let targets = noisy_targets(&s, &q, 0.005, 4);
    let traj = trajectory(&s, vec![targets; 12]);
    let reference = solve_sequence(&s, &traj, &IkConfig::default()).unwrap();
    for lambda in [0.0, 0.1, 10.0, 1000.0] {
        for op in [SmoothOperator::Velocity, SmoothOperator::Acceleration] {
            let config = IkConfig {
                lambda_smooth: lambda,
                smooth_operator: op,
                window: 6,
                ..IkConfig::default()
            };
            let sol = solve_sequence(&s, &traj, &config).unwrap();
            assert!(sol.converged.iter().all(|c| *c));
            for state in &sol.states.states {
                for (a, b) in state.values.iter().zip(&reference.states.states[0].values) {
                    assert!((a - b).abs() < 1e-6, "lambda {lambda} {op:?}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn smoothing_reduces_acceleration_energy() {
    let s = skel();
    let mut rng = common::rng(8);
    let (a, b) = (
        common::random_state(&s, &mut rng, 0.2),
        common::random_state(&s, &mut rng, 0.2),
    );
    let frames: Vec<Vec<Vector3<f64>>> = (0..20)
        .map(|f| {
            let u = f as f64 / 19.0;
            let values = a.values.iter().zip(&b.values).map(|(x, y)| x + u * (y - x)).collect();
            noisy_targets(&s, &JointState::new(values, 0.0), 0.01, 100 + f)
        })
        .collect();
    let traj = trajectory(&s, frames);
    let coords = non_root(&s);
    let raw = solve_sequence(&s, &traj, &IkConfig::default()).unwrap();
    let smooth = solve_sequence(
        &s,
        &traj,
        &IkConfig {
            lambda_smooth: 1.0,
            window: 10,
            ..IkConfig::default()
        },
    )
    .unwrap();
    let (e_raw, e_smooth) = (
        second_difference_energy(&raw.states.states, &coords),
        second_difference_energy(&smooth.states.states, &coords),
    );
    assert!(e_smooth < e_raw, "smoothed {e_smooth} vs raw {e_raw}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solution_is_equivariant_under_root_motion(seed in any::<u64>()) {
        let s = skel();
        let mut rng = common::rng(seed);
        let q1 = common::random_state(&s, &mut rng, 0.3);
        let mut q2 = q1.clone();
        let moved = common::random_state(&s, &mut rng, 0.8);
        for name in common::root_coordinates() {
            let c = s.coordinate_index(name).unwrap();
            q2.values[c] = moved.values[c];
        }
        let root = s.joint_index("pelvis").unwrap();
        let (k1, k2) = (s.kinematics(&q1.values).unwrap(), s.kinematics(&q2.values).unwrap());
        let r = k2.rotations[root] * k1.rotations[root].transpose();
        let t = k2.origins[root] - r * k1.origins[root];
        let z1 = noisy_targets(&s, &q1, 0.005, seed ^ 1);
        let z2: Vec<Vector3<f64>> = z1.iter().map(|p| r * p + t).collect();
        let config = IkConfig { enforce_limits: false, ..IkConfig::default() };
        let a = solve_frame(&s, &frame(z1), &q1, &config).unwrap();
        let b = solve_frame(&s, &frame(z2), &q2, &config).unwrap();
        prop_assert!((a.rms - b.rms).abs() < 1e-9);
        for c in non_root(&s) {
            prop_assert!((a.state.values[c] - b.state.values[c]).abs() < 1e-6,
                "{}: {} vs {}", s.coordinate_names[c], a.state.values[c], b.state.values[c]);
        }
    }

    #[test]
    fn uniform_weight_scaling_keeps_minimizer(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let s = skel();
        let mut rng = common::rng(seed);
        let q = common::random_state(&s, &mut rng, 0.3);
        let base = frame(noisy_targets(&s, &q, 0.005, seed ^ 2));
        let scaled = MarkerFrame { weights: base.weights.iter().map(|w| w * scale).collect(), ..base.clone() };
        let config = IkConfig::default();
        let a = solve_frame(&s, &base, &q, &config).unwrap();
        let b = solve_frame(&s, &scaled, &q, &config).unwrap();
        for (x, y) in a.state.values.iter().zip(&b.state.values) {
            prop_assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn cost_never_increases(seed in any::<u64>()) {
        let s = skel();
        let mut rng = common::rng(seed);
        let q = common::random_state(&s, &mut rng, 0.4);
        // far from the warm start; the budget is not what is under test
        let config = IkConfig { max_iterations: 2000, ..IkConfig::default() };
        let sol = solve_frame(&s, &frame(noisy_targets(&s, &q, 0.01, seed ^ 3)), &s.neutral_state(), &config).unwrap();
        prop_assert!(sol.cost_history.windows(2).all(|w| w[1] <= w[0]), "{:?}", sol.cost_history);
    }
}

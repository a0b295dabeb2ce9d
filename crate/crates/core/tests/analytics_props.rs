mod common;

use proptest::prelude::*;
use rand::Rng;

use spinekin::analytics::{
    cobb_angles, curvature_stats_by_action, reject_implausible_curvature, rom_summary, CurvatureBounds, CurvatureSample,
};
use spinekin::{JointState, JointTrajectory, SkeletonDefinition};

fn skel() -> SkeletonDefinition {
    SkeletonDefinition::default_definition()
}

fn samples(seed: u64, n: usize) -> Vec<CurvatureSample> {
    let mut rng = common::rng(seed);
    (0..n)
        .map(|frame| CurvatureSample {
            frame,
            lla_deg: rng.random_range(-20.0..100.0),
            tka_deg: rng.random_range(-20.0..100.0),
            subject: "S1".into(),
            action: ["walk", "sit", "bend"][rng.random_range(0..3)].into(),
            valid: rng.random::<f64>() > 0.1,
        })
        .collect()
}

fn single_channel(values: &[f64]) -> JointTrajectory {
    let states = values
        .iter()
        .enumerate()
        .map(|(f, v)| JointState::new(vec![*v], f as f64))
        .collect();
    JointTrajectory::new(vec!["x".into()], states)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cobb_angles_ignore_root_pose(seed in any::<u64>()) {
        let s = skel();
        let mut rng = common::rng(seed);
        let state = common::random_state(&s, &mut rng, 0.5);
        let other = common::random_state(&s, &mut rng, 1.0);
        let mut moved = state.clone();
        for name in common::root_coordinates() {
            let c = s.coordinate_index(name).unwrap();
            moved.values[c] = other.values[c];
        }
        let (a, b) = (cobb_angles(&s, &state).unwrap(), cobb_angles(&s, &moved).unwrap());
        prop_assert!((a.lla_deg - b.lla_deg).abs() < 1e-9, "{} vs {}", a.lla_deg, b.lla_deg);
        prop_assert!((a.tka_deg - b.tka_deg).abs() < 1e-9, "{} vs {}", a.tka_deg, b.tka_deg);
    }

    #[test]
    fn untrimmed_rom_is_min_max(seed in any::<u64>(), n in 10usize..200) {
        let mut rng = common::rng(seed);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let rom = rom_summary(&single_channel(&values), &["x".to_string()], 0.0).unwrap();
        let e = rom.entry("x").unwrap();
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        prop_assert_eq!(e.min_deg, lo.to_degrees());
        prop_assert_eq!(e.max_deg, hi.to_degrees());
        prop_assert_eq!(rom.frames, n);
    }

    #[test]
    fn rom_shrinks_with_trim(seed in any::<u64>(), n in 10usize..200, t1 in 0.0f64..49.0, t2 in 0.0f64..49.0) {
        let mut rng = common::rng(seed);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let traj = single_channel(&values);
        let (small, large) = (t1.min(t2), t1.max(t2));
        let names = ["x".to_string()];
        let a = rom_summary(&traj, &names, small).unwrap();
        let b = rom_summary(&traj, &names, large).unwrap();
        let (a, b) = (a.entry("x").unwrap(), b.entry("x").unwrap());
        prop_assert!(b.range_deg <= a.range_deg + 1e-12);
        prop_assert!(b.min_deg >= a.min_deg - 1e-12 && b.max_deg <= a.max_deg + 1e-12);
    }

    #[test]
    fn rejection_is_idempotent(seed in any::<u64>(), n in 0usize..300) {
        let bounds = CurvatureBounds::default();
        let once = reject_implausible_curvature(&samples(seed, n), &bounds);
        let twice = reject_implausible_curvature(&once, &bounds);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn rejection_and_stats_ignore_sample_order(seed in any::<u64>(), n in 1usize..300) {
        let bounds = CurvatureBounds::normative();
        let original = samples(seed, n);
        let mut shuffled = original.clone();
        let mut rng = common::rng(seed ^ 0x5eed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let mut a = reject_implausible_curvature(&original, &bounds);
        let mut b = reject_implausible_curvature(&shuffled, &bounds);
        let (sa, sb) = (curvature_stats_by_action(&a), curvature_stats_by_action(&b));
        prop_assert_eq!(sa.len(), sb.len());
        for (x, y) in sa.iter().zip(&sb) {
            prop_assert_eq!(&x.action, &y.action);
            prop_assert_eq!((x.samples, x.rejected), (y.samples, y.rejected));
            let close = |p: f64, q: f64| (p.is_nan() && q.is_nan()) || (p - q).abs() < 1e-9;
            prop_assert!(close(x.lla_mean, y.lla_mean) && close(x.tka_std, y.tka_std));
        }
        a.sort_by_key(|s| s.frame);
        b.sort_by_key(|s| s.frame);
        prop_assert_eq!(a, b);
    }
}

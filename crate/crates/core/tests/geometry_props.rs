mod common;

use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::Rng;

use spinekin::geometry::{alignment_rms, procrustes_align, SimilarityTransform};
use spinekin::CameraModel;

fn camera(seed: u64) -> CameraModel {
    let mut rng = common::rng(seed);
    let k = Matrix3::new(
        rng.random_range(500.0..2000.0),
        0.0,
        rng.random_range(300.0..700.0),
        0.0,
        rng.random_range(500.0..2000.0),
        rng.random_range(300.0..700.0),
        0.0,
        0.0,
        1.0,
    );
    CameraModel::new(
        "c",
        k,
        common::random_rotation(&mut rng),
        common::random_vector(&mut rng, 2.0),
        1000,
        1000,
    )
    .unwrap()
}

fn cloud(seed: u64, n: usize) -> Vec<Vector3<f64>> {
    let mut rng = common::rng(seed);
    (0..n).map(|_| common::random_vector(&mut rng, 1.0)).collect()
}

fn similarity(seed: u64) -> SimilarityTransform {
    let mut rng = common::rng(seed);
    SimilarityTransform::new(
        rng.random_range(0.2..5.0),
        common::random_rotation(&mut rng),
        common::random_vector(&mut rng, 10.0),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn backprojection_round_trips_pixels(seed in any::<u64>(), u in 0.0..1000.0f64, v in 0.0..1000.0f64, depth in 0.1..20.0f64) {
        let cam = camera(seed);
        let pixel = Vector2::new(u, v);
        let back = cam.project(&cam.backproject(&pixel, depth)).unwrap();
        prop_assert!((back - pixel).norm() < 1e-9, "{back} vs {pixel}");
    }

    #[test]
    fn residual_invariant_under_source_similarity(seed in any::<u64>(), n in 4usize..30) {
        let source = cloud(seed, n);
        let mut rng = common::rng(seed ^ 1);
        let target: Vec<Vector3<f64>> = source
            .iter()
            .map(|p| p * 1.3 + Vector3::new(0.1, -0.2, 0.3) + common::random_vector(&mut rng, 0.05))
            .collect();
        let base = alignment_rms(&procrustes_align(&source, &target, true).unwrap(), &source, &target);
        let moved = similarity(seed ^ 2).apply_all(&source);
        let again = alignment_rms(&procrustes_align(&moved, &target, true).unwrap(), &moved, &target);
        prop_assert!((base - again).abs() < 1e-9, "{base} vs {again}");
    }

    #[test]
    fn self_alignment_after_perturbation_is_exact(seed in any::<u64>(), n in 3usize..30) {
        let target = cloud(seed, n);
        let source = similarity(seed ^ 3).apply_all(&target);
        let t = procrustes_align(&source, &target, true).unwrap();
        prop_assert!(alignment_rms(&t, &source, &target) < 1e-9);
    }

    #[test]
    fn compose_and_inverse_agree(seed in any::<u64>()) {
        let (a, b) = (similarity(seed), similarity(seed ^ 4));
        let p = Vector3::new(0.3, -1.0, 2.0);
        prop_assert!((a.compose(&b).apply(&p) - a.apply(&b.apply(&p))).norm() < 1e-9);
        prop_assert!((a.inverse().apply(&a.apply(&p)) - p).norm() < 1e-9);
    }
}

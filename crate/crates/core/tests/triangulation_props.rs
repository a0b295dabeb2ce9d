mod common;

use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use spinekin::synth::RigSpec;
use spinekin::triangulation::{triangulate_dlt, triangulate_point, CameraSet, TriangulationConfig};
use spinekin::Observation2D;

fn rig(n: usize) -> CameraSet {
    RigSpec {
        cameras: n,
        ..Default::default()
    }
    .build()
    .unwrap()
}

/// Projections of `p` into every camera with optional Gaussian pixel noise
/// and random confidences in [0.5, 1].
fn observe(p: &Vector3<f64>, cams: &CameraSet, sigma: f64, seed: u64) -> Vec<Observation2D> {
    let mut rng = common::rng(seed);
    cams.values()
        .map(|c| {
            let n: Vector2<f64> = Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            Observation2D::new(
                c.view_id.clone(),
                0,
                c.project(p).unwrap() + n * sigma,
                rng.random_range(0.5..1.0),
            )
        })
        .collect()
}

/// Converged far below the default step tolerance, so comparisons see the
/// minimizer rather than where iteration happened to stop.
fn tight() -> TriangulationConfig {
    TriangulationConfig {
        convergence_tol: 1e-13,
        max_irls_iterations: 200,
        ..Default::default()
    }
}

fn point(seed: u64) -> Vector3<f64> {
    let mut rng = common::rng(seed);
    Vector3::new(0.0, 1.0, 0.0) + common::random_vector(&mut rng, 0.6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn squared_loss_agrees_with_dlt_on_exact_data(seed in any::<u64>(), n in 2usize..7) {
        let cams = rig(n);
        let p = point(seed);
        let mut obs = observe(&p, &cams, 0.0, seed);
        for o in &mut obs {
            o.confidence = 1.0;
        }
        let config = TriangulationConfig { huber_delta: f64::INFINITY, ..Default::default() };
        let (x, _) = triangulate_point(&obs, &cams, &config).unwrap();
        let dlt = triangulate_dlt(&obs, &cams).unwrap();
        prop_assert!((x - dlt).norm() < 1e-8, "{x} vs {dlt}");
        prop_assert!((x - p).norm() < 1e-8);
    }

    #[test]
    fn relabeling_and_reordering_views_is_invisible(seed in any::<u64>(), n in 3usize..7) {
        let cams = rig(n);
        let obs = observe(&point(seed), &cams, 1.5, seed);
        let config = tight();
        let (x, _) = triangulate_point(&obs, &cams, &config).unwrap();

        let rename = |v: &str| format!("view_{}", 99 - v.trim_start_matches("cam").parse::<usize>().unwrap());
        let renamed: CameraSet = cams
            .values()
            .map(|c| {
                let mut c = c.clone();
                c.view_id = rename(&c.view_id);
                (c.view_id.clone(), c)
            })
            .collect();
        let mut shuffled: Vec<Observation2D> = obs
            .iter()
            .map(|o| Observation2D { view_id: rename(&o.view_id), ..o.clone() })
            .collect();
        shuffled.reverse();
        let (y, _) = triangulate_point(&shuffled, &renamed, &config).unwrap();
        prop_assert!((x - y).norm() < 1e-9, "{x} vs {y}");
    }

    #[test]
    fn uniform_confidence_scaling_keeps_minimizer(seed in any::<u64>(), scale in 0.2..1.0f64) {
        let cams = rig(4);
        let obs = observe(&point(seed), &cams, 1.5, seed);
        let config = tight();
        let (x, _) = triangulate_point(&obs, &cams, &config).unwrap();
        let scaled: Vec<Observation2D> = obs
            .iter()
            .map(|o| Observation2D { confidence: o.confidence * scale, ..o.clone() })
            .collect();
        let (y, _) = triangulate_point(&scaled, &cams, &config).unwrap();
        prop_assert!((x - y).norm() < 1e-9, "{x} vs {y}");
    }

    #[test]
    fn exact_extra_view_never_hurts(seed in any::<u64>(), n in 2usize..6) {
        let cams = rig(n + 1);
        let p = point(seed);
        let obs = observe(&p, &cams, 0.0, seed);
        let config = TriangulationConfig::default();
        let fewer: Vec<Observation2D> = obs[..n].to_vec();
        let (a, _) = triangulate_point(&fewer, &cams, &config).unwrap();
        let (b, _) = triangulate_point(&obs, &cams, &config).unwrap();
        prop_assert!((b - p).norm() <= (a - p).norm() + 1e-9);
    }
}

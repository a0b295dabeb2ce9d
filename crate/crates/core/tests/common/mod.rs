#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spinekin::geometry::rotation_vector;
use spinekin::{JointState, SkeletonDefinition};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = random_vector(rng, 1.0);
    rotation_vector(&(axis.normalize() * rng.random_range(0.0..std::f64::consts::PI)))
}

pub fn random_vector(rng: &mut ChaCha8Rng, half_width: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-half_width..half_width),
        rng.random_range(-half_width..half_width),
        rng.random_range(-half_width..half_width),
    )
}

/// Uniform within limits for free rotations, within ±1 m for free
/// translations, defaults for locked coordinates.
pub fn random_state(skel: &SkeletonDefinition, rng: &mut ChaCha8Rng, fraction: f64) -> JointState {
    let values = (0..skel.coordinate_count())
        .map(|c| {
            let d = skel.dof(c);
            if d.locked {
                d.default_value
            } else if skel.is_rotational(c) {
                let mid = 0.5 * (d.limits.0 + d.limits.1);
                let half = 0.5 * (d.limits.1 - d.limits.0) * fraction;
                if half > 0.0 {
                    rng.random_range(mid - half..=mid + half)
                } else {
                    mid
                }
            } else {
                rng.random_range(-fraction..=fraction)
            }
        })
        .collect();
    JointState::new(values, 0.0)
}

pub fn root_coordinates() -> [&'static str; 6] {
    [
        "pelvis_tilt",
        "pelvis_list",
        "pelvis_rotation",
        "pelvis_tx",
        "pelvis_ty",
        "pelvis_tz",
    ]
}

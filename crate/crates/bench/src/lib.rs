//! Shared fixtures for the benchmarks.

use spinekin::synth::{generate_motion, render_observations, NoiseModel, SynthScenario};
use spinekin::triangulation::CameraSet;
use spinekin::{JointTrajectory, MarkerTrajectory, Observation2D, SkeletonDefinition};

pub struct Fixture {
    pub skeleton: SkeletonDefinition,
    pub cameras: CameraSet,
    pub joints: JointTrajectory,
    pub markers: MarkerTrajectory,
    pub observations: Vec<Vec<Observation2D>>,
    pub frame_rate: f64,
}

/// Default-rig scenario with 2 px noise and 5% outliers.
pub fn fixture(frames: usize) -> Fixture {
    let skeleton = SkeletonDefinition::default_definition();
    let scenario = SynthScenario {
        seed: 1,
        num_frames: frames,
        noise: NoiseModel {
            pixel_noise_sigma: 2.0,
            outlier_rate: 0.05,
            ..NoiseModel::default()
        },
        ..SynthScenario::default()
    };
    let cameras = scenario.cameras().expect("default rig");
    let (joints, markers) = generate_motion(&skeleton, &scenario).expect("default scenario");
    let observations = render_observations(&markers, &cameras, &scenario).expect("markers in view");
    Fixture {
        skeleton,
        cameras,
        joints,
        markers,
        observations,
        frame_rate: scenario.frame_rate,
    }
}

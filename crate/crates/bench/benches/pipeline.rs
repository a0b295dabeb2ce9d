use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use spinekin::ik::{solve_sequence, IkConfig};
use spinekin::metrics::{mpjpe, p_mpjpe, PoseSet3};
use spinekin::temporal::{zero_phase_lowpass, FilterSpec};
use spinekin::triangulation::{triangulate_point, triangulate_sequence};
use spinekin::TriangulationConfig;
use spinekin_bench::fixture;

fn triangulation(c: &mut Criterion) {
    let f = fixture(20);
    let config = TriangulationConfig::default();
    let first: Vec<_> = f.observations[0]
        .iter()
        .filter(|o| o.keypoint_id == 0)
        .cloned()
        .collect();
    c.bench_function("triangulate_point/robust", |b| {
        b.iter(|| triangulate_point(black_box(&first), &f.cameras, &config))
    });
    let names = f.skeleton.marker_names();
    c.bench_function("triangulate_sequence/20_frames", |b| {
        b.iter(|| triangulate_sequence(black_box(&f.observations), &f.cameras, &names, f.frame_rate, &config))
    });
}

fn inverse_kinematics(c: &mut Criterion) {
    let f = fixture(10);
    let mut group = c.benchmark_group("ik");
    group.sample_size(10);
    let plain = IkConfig::for_skeleton(&f.skeleton);
    group.bench_function("solve_sequence/10_frames", |b| {
        b.iter(|| solve_sequence(&f.skeleton, black_box(&f.markers), &plain))
    });
    let smooth = IkConfig {
        lambda_smooth: 0.5,
        window: 10,
        ..plain
    };
    group.bench_function("solve_sequence/10_frames_smoothed", |b| {
        b.iter(|| solve_sequence(&f.skeleton, black_box(&f.markers), &smooth))
    });
    group.finish();
}

fn filtering(c: &mut Criterion) {
    let f = fixture(500);
    let signal: Vec<Vec<f64>> = f.joints.states.iter().map(|s| s.values.clone()).collect();
    let validity = vec![vec![true; signal[0].len()]; signal.len()];
    let spec = FilterSpec::new(6.0, 4, f.frame_rate).expect("valid filter");
    c.bench_function("zero_phase_lowpass/500x57", |b| {
        b.iter(|| zero_phase_lowpass(black_box(&signal), &spec, &validity))
    });
}

fn metrics(c: &mut Criterion) {
    let f = fixture(200);
    let gt = PoseSet3::from_markers(&f.markers);
    let pred = gt.map_points(|p| p * 1.01);
    let all: Vec<usize> = (0..gt.num_keypoints()).collect();
    c.bench_function("mpjpe/200_frames", |b| b.iter(|| mpjpe(black_box(&pred), &gt, &all)));
    c.bench_function("p_mpjpe/200_frames", |b| {
        b.iter(|| p_mpjpe(black_box(&pred), &gt, &all))
    });
}

criterion_group!(benches, triangulation, inverse_kinematics, filtering, metrics);
criterion_main!(benches);

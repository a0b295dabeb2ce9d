mod common;

use nalgebra::Vector3;
use proptest::prelude::*;
use rand::Rng;

use spinekin::temporal::{fill_gaps, lowpass_channel, merge_streams, zero_phase_lowpass, FilterSpec, MarkerWeights};
use spinekin::MarkerTrajectory;

fn series(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = common::rng(seed);
    let mut x = 0.0;
    (0..n)
        .map(|_| {
            x += rng.random_range(-1.0..1.0);
            x
        })
        .collect()
}

fn spec(order_pick: usize, cutoff: f64) -> FilterSpec {
    FilterSpec::new(cutoff, [2, 4, 8][order_pick], 100.0).unwrap()
}

fn gappy(seed: u64, names: &[&str], frames: usize, rate: f64) -> MarkerTrajectory {
    let mut rng = common::rng(seed);
    let mut t = MarkerTrajectory::new(names.iter().map(|s| s.to_string()).collect(), 100.0);
    for f in 0..frames {
        let positions = names.iter().map(|_| common::random_vector(&mut rng, 1.0)).collect();
        let validity = names.iter().map(|_| rng.random::<f64>() >= rate).collect::<Vec<bool>>();
        let confidence = validity.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        t.push_frame_with(f as f64 / 100.0, positions, validity, confidence);
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn filter_is_linear(seed in any::<u64>(), n in 30usize..300, a in -3.0..3.0f64, b in -3.0..3.0f64,
                        order in 0usize..3, cutoff in 1.0..20.0f64) {
        let s = spec(order, cutoff);
        let x = series(seed, n);
        let y = series(seed ^ 9, n);
        let valid = vec![true; n];
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let fm = lowpass_channel(&mix, &valid, &s).unwrap();
        let (fx, fy) = (lowpass_channel(&x, &valid, &s).unwrap(), lowpass_channel(&y, &valid, &s).unwrap());
        for i in 0..n {
            prop_assert!((fm[i] - (a * fx[i] + b * fy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn filter_commutes_with_time_reversal(seed in any::<u64>(), n in 30usize..300, order in 0usize..3,
                                          cutoff in 1.0..20.0f64) {
        let s = spec(order, cutoff);
        let x = series(seed, n);
        let valid = vec![true; n];
        let fx = lowpass_channel(&x, &valid, &s).unwrap();
        let xr: Vec<f64> = x.iter().rev().copied().collect();
        let fr = lowpass_channel(&xr, &valid, &s).unwrap();
        for i in 0..n {
            prop_assert!((fr[i] - fx[n - 1 - i]).abs() < 1e-9);
        }
    }

    #[test]
    fn multichannel_matches_single_channel(seed in any::<u64>(), n in 30usize..120) {
        let s = spec(1, 6.0);
        let x = series(seed, n);
        let y = series(seed ^ 3, n);
        let rows: Vec<Vec<f64>> = x.iter().zip(&y).map(|(a, b)| vec![*a, *b]).collect();
        let valid = vec![vec![true, true]; n];
        let out = zero_phase_lowpass(&rows, &s, &valid).unwrap();
        let fx = lowpass_channel(&x, &vec![true; n], &s).unwrap();
        for i in 0..n {
            prop_assert_eq!(out[i][0], fx[i]);
        }
    }

    #[test]
    fn fill_gaps_is_idempotent(seed in any::<u64>(), rate in 0.0..0.5f64, max_gap in 1usize..6) {
        let t = gappy(seed, &["a", "b", "c"], 40, rate);
        let once = fill_gaps(&t, max_gap);
        prop_assert_eq!(fill_gaps(&once, max_gap), once);
    }

    #[test]
    fn fill_gaps_is_exact_on_cubics(seed in any::<u64>(), gap in 1usize..8) {
        let mut rng = common::rng(seed);
        let c: [Vector3<f64>; 4] = std::array::from_fn(|_| common::random_vector(&mut rng, 1.0));
        let at = |f: usize| {
            let t = f as f64 / 10.0;
            c[0] + c[1] * t + c[2] * t * t + c[3] * t * t * t
        };
        let start = rng.random_range(2..20);
        let mut traj = MarkerTrajectory::new(vec!["m".into()], 100.0);
        for f in 0..30 {
            let ok = !(start..start + gap).contains(&f);
            traj.push_frame_with(f as f64 / 100.0, vec![if ok { at(f) } else { Vector3::zeros() }], vec![ok], vec![1.0]);
        }
        let filled = fill_gaps(&traj, 8);
        for f in start..start + gap {
            prop_assert!(filled.validity[f][0] && filled.interpolated[f][0]);
            prop_assert!((filled.positions[f][0] - at(f)).norm() < 1e-9);
        }
    }

    #[test]
    fn merge_marker_count_is_name_union(seed in any::<u64>(), overlap in 0usize..3) {
        let primary_names = ["a", "b", "c"];
        let secondary_names: Vec<&str> = ["a", "b", "c", "d", "e"][3 - overlap..].to_vec();
        let p = gappy(seed, &primary_names, 20, 0.1);
        let s = gappy(seed ^ 1, &secondary_names, 20, 0.1);
        let merged = merge_streams(&p, &s, &MarkerWeights::uniform(1.0)).unwrap();
        let mut union: Vec<&str> = primary_names.iter().chain(&secondary_names).copied().collect();
        union.sort();
        union.dedup();
        prop_assert_eq!(merged.markers.num_markers(), union.len());
        prop_assert_eq!(merged.conflicts.len(), overlap);
    }
}

#[test]
fn dc_gain_is_one() {
    for order in 0..3 {
        let s = spec(order, 5.0);
        let x = vec![-42.5; 200];
        let y = lowpass_channel(&x, &[true; 200], &s).unwrap();
        assert!(y.iter().all(|v| (v + 42.5).abs() < 1e-12));
    }
}

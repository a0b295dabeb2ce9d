mod common;

use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::Rng;

use spinekin::io::{
    read_annotations, read_motion, read_trc, write_annotations, write_motion, write_trc, AnnotationSet, IoError,
    LengthUnit, MotionDocument, TrcDocument,
};
use spinekin::triangulation::Observation2D;
use spinekin::{JointState, JointTrajectory, MarkerTrajectory, SkeletonDefinition};

fn markers(seed: u64, frames: usize, k: usize, rate: f64) -> MarkerTrajectory {
    let mut rng = common::rng(seed);
    let mut t = MarkerTrajectory::new((0..k).map(|i| format!("M{i}")).collect(), rate);
    for f in 0..frames {
        let positions: Vec<Vector3<f64>> = (0..k).map(|_| common::random_vector(&mut rng, 2.0)).collect();
        let validity: Vec<bool> = (0..k).map(|_| rng.random::<f64>() > 0.15).collect();
        let confidence = validity.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        t.push_frame_with(f as f64 / rate, positions, validity, confidence);
    }
    t
}

fn keypoints() -> Vec<String> {
    SkeletonDefinition::default_definition().marker_names()
}

fn annotations(seed: u64, rows: usize, keypoints: &[String]) -> AnnotationSet {
    let mut rng = common::rng(seed);
    let views = ["cam0", "cam1", "cam2", "cam3"];
    let mut set = AnnotationSet::default();
    let mut written = 0;
    let mut frame = 0;
    while written < rows {
        let mut obs = Vec::new();
        for view in views {
            if rng.random::<f64>() < 0.5 {
                set.bboxes.insert(
                    (frame, view.to_string()),
                    (rng.random_range(10.0..900.0), rng.random_range(10.0..900.0)),
                );
            }
            for k in 0..keypoints.len() {
                if written < rows && rng.random::<f64>() < 0.8 {
                    let p = Vector2::new(rng.random_range(-50.0..1050.0), rng.random_range(-50.0..1050.0));
                    obs.push(Observation2D::new(view, k, p, rng.random::<f64>()));
                    written += 1;
                }
            }
        }
        set.frames.push(obs);
        frame += 1;
    }
    set
}

/// Independent reader for well-formed tables: plain tab splitting.
fn split_reader(text: &str, keypoints: &[String]) -> AnnotationSet {
    let mut set = AnnotationSet::default();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let frame: usize = f[0].parse().unwrap();
        let keypoint = keypoints.iter().position(|k| k == f[2]).unwrap();
        if set.frames.len() <= frame {
            set.frames.resize(frame + 1, Vec::new());
        }
        set.frames[frame].push(Observation2D::new(
            f[1],
            keypoint,
            Vector2::new(f[3].parse().unwrap(), f[4].parse().unwrap()),
            f[5].parse().unwrap(),
        ));
        if !f[6].is_empty() {
            set.bboxes.insert(
                (frame, f[1].to_string()),
                (f[6].parse().unwrap(), f[7].parse().unwrap()),
            );
        }
    }
    set
}

#[test]
fn large_annotation_table_matches_reference_reader() {
    let names = keypoints();
    let set = annotations(17, 10_000, &names);
    let text = write_annotations(&set, &names);
    assert_eq!(text.lines().count(), 10_001);
    let parsed = read_annotations(&text, &names).unwrap();
    assert_eq!(parsed, split_reader(&text, &names));
    assert_eq!(parsed.frames, set.frames);
}

#[test]
fn annotation_errors_name_line_and_field() {
    let names = keypoints();
    let good = write_annotations(&annotations(2, 20, &names), &names);
    let mut lines: Vec<String> = good.lines().map(str::to_string).collect();
    let mut fields: Vec<String> = lines[5].split('\t').map(str::to_string).collect();
    fields[4] = "oops".into();
    lines[5] = fields.join("\t");
    match read_annotations(&lines.join("\n"), &names) {
        Err(IoError::Field { line, field, .. }) => {
            assert_eq!(line, 6);
            assert_eq!(field, "v");
        }
        other => panic!("expected a field error, got {other:?}"),
    }
    let mut lines: Vec<String> = good.lines().map(str::to_string).collect();
    lines[3] = lines[3].split('\t').take(3).collect::<Vec<_>>().join("\t");
    assert!(matches!(
        read_annotations(&lines.join("\n"), &names),
        Err(IoError::RaggedRow { line: 4, .. })
    ));
}

#[test]
fn trc_errors_name_line_and_field() {
    let doc = TrcDocument::from_markers(&markers(3, 5, 4, 50.0), LengthUnit::Meters, "x");
    let text = write_trc(&doc);
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut fields: Vec<&str> = lines[7].split('\t').collect();
    fields[1] = "not-a-time";
    lines[7] = fields.join("\t");
    let err = read_trc(&lines.join("\n")).unwrap_err();
    let message = err.to_string();
    assert!(message.contains("line 8"), "{message}");
    assert!(message.to_lowercase().contains("time"), "{message}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trc_read_write_is_a_fixpoint(seed in any::<u64>(), frames in 1usize..30, k in 1usize..40, mm in any::<bool>()) {
        let units = if mm { LengthUnit::Millimeters } else { LengthUnit::Meters };
        let doc = TrcDocument::from_markers(&markers(seed, frames, k, 60.0), units, "trial");
        let text = write_trc(&doc);
        let back = read_trc(&text).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(write_trc(&back), text);
        let traj = back.to_markers();
        prop_assert_eq!(traj.validity, doc.to_markers().validity);
    }

    #[test]
    fn motion_read_write_is_a_fixpoint(seed in any::<u64>(), frames in 1usize..30, degrees in any::<bool>()) {
        let skel = SkeletonDefinition::default_definition();
        let mut rng = common::rng(seed);
        let states = (0..frames)
            .map(|f| {
                let mut s = common::random_state(&skel, &mut rng, 1.0);
                s.timestamp = f as f64 / 100.0;
                s
            })
            .collect();
        let traj = JointTrajectory::new(skel.coordinate_names.clone(), states);
        let doc = MotionDocument::from_trajectory(&traj, &skel.rotational_mask(), degrees, "ik");
        let text = write_motion(&doc);
        let back = read_motion(&text).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(write_motion(&back), text);
        let again = back.to_trajectory(&skel.coordinate_names, &skel.rotational_mask()).unwrap();
        for (a, b) in again.states.iter().zip(&traj.states) {
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-15 * (1.0 + y.abs()) * 4.0, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn motion_columns_bind_by_name(seed in any::<u64>(), frames in 1usize..10) {
        let names: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
        let rot = vec![true, false, true, true, false, true];
        let mut rng = common::rng(seed);
        let states: Vec<JointState> = (0..frames)
            .map(|f| JointState::new((0..6).map(|_| rng.random_range(-1.0..1.0)).collect(), f as f64))
            .collect();
        let doc = MotionDocument::from_trajectory(&JointTrajectory::new(names.clone(), states), &rot, false, "m");
        let mut perm: Vec<usize> = (0..6).collect();
        for i in (1..6).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled = MotionDocument {
            coordinate_names: perm.iter().map(|&i| names[i].clone()).collect(),
            rows: doc.rows.iter().map(|r| perm.iter().map(|&i| r[i]).collect()).collect(),
            ..doc.clone()
        };
        let a = doc.to_trajectory(&names, &rot).unwrap();
        let b = shuffled.to_trajectory(&names, &rot).unwrap();
        prop_assert_eq!(a, b);
    }
}

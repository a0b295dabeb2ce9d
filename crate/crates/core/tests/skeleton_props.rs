mod common;

use nalgebra::Vector3;
use proptest::prelude::*;

use spinekin::skeleton::{
    extract_vertebral_rotations, rotation_coordinates, KEYPOINT_COUNT, LUMBAR_JOINTS, NECK_JOINT,
};
use spinekin::SkeletonDefinition;

fn skel() -> SkeletonDefinition {
    SkeletonDefinition::default_definition()
}

#[test]
fn shipped_definition_counts() {
    let s = skel();
    assert_eq!(s.markers.len(), KEYPOINT_COUNT);
    assert_eq!(s.coordinate_count(), 57);
    for j in LUMBAR_JOINTS {
        let joint = &s.joints[s.joint_index(j).unwrap()];
        assert_eq!(joint.dofs.len(), 3, "{j}");
    }
}

#[test]
fn definition_survives_serialization() {
    let s = skel();
    let again = SkeletonDefinition::from_toml_str(&s.to_toml_string()).unwrap();
    assert_eq!(again.coordinate_names, s.coordinate_names);
    assert_eq!(again.marker_names(), s.marker_names());
    let mut rng = common::rng(5);
    for _ in 0..20 {
        // angles pass through degrees in the file, so agreement is to rounding
        let state = common::random_state(&s, &mut rng, 1.0);
        let (a, b) = (
            s.forward_kinematics(&state).unwrap(),
            again.forward_kinematics(&state).unwrap(),
        );
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).norm() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fk_is_equivariant_under_root_motion(seed in any::<u64>()) {
        let s = skel();
        let mut rng = common::rng(seed);
        let state = common::random_state(&s, &mut rng, 0.8);
        let mut rooted = state.clone();
        for name in common::root_coordinates() {
            rooted.values[s.coordinate_index(name).unwrap()] = 0.0;
        }
        let root = s.joint_index("pelvis").unwrap();
        let (k1, k0) = (s.kinematics(&state.values).unwrap(), s.kinematics(&rooted.values).unwrap());
        let r0 = k1.rotations[root] * k0.rotations[root].transpose();
        let t0 = k1.origins[root] - r0 * k0.origins[root];
        let moved = s.marker_positions(&k1);
        let base = s.marker_positions(&k0);
        for (a, b) in moved.iter().zip(&base) {
            prop_assert!((a - (r0 * b + t0)).norm() < 1e-12);
        }
    }

    #[test]
    fn same_body_distances_are_rigid(seed in any::<u64>()) {
        let s = skel();
        let mut rng = common::rng(seed);
        let neutral = s.forward_kinematics(&s.neutral_state()).unwrap();
        let posed = s.forward_kinematics(&common::random_state(&s, &mut rng, 1.0)).unwrap();
        for (i, a) in s.markers.iter().enumerate() {
            for (j, b) in s.markers.iter().enumerate().skip(i + 1) {
                if a.joint_id == b.joint_id {
                    let d0 = (neutral[i] - neutral[j]).norm();
                    let d1 = (posed[i] - posed[j]).norm();
                    prop_assert!((d0 - d1).abs() < 1e-12, "{} {}", a.marker_name, b.marker_name);
                }
            }
        }
    }

    #[test]
    fn rotation_extraction_round_trips_degrees(seed in any::<u64>()) {
        let s = skel();
        let mut rng = common::rng(seed);
        let state = common::random_state(&s, &mut rng, 1.0);
        let rotations = extract_vertebral_rotations(&s, &state).unwrap();
        let joints: Vec<&str> = LUMBAR_JOINTS.iter().copied().chain([NECK_JOINT]).collect();
        prop_assert_eq!(rotations.len(), joints.len());
        for (r, joint) in rotations.iter().zip(joints) {
            let names = rotation_coordinates(joint);
            let got = [r.flexion_extension, r.lateral_bending, r.axial_rotation];
            for (v, name) in got.iter().zip(&names) {
                let want = state.values[s.coordinate_index(name).unwrap()];
                prop_assert!((v.to_radians() - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn root_translation_moves_every_marker() {
    let s = skel();
    let mut state = s.neutral_state();
    let base = s.forward_kinematics(&state).unwrap();
    state.values[s.coordinate_index("pelvis_tx").unwrap()] = 0.5;
    let moved = s.forward_kinematics(&state).unwrap();
    for (a, b) in moved.iter().zip(&base) {
        assert!((a - b - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    }
}

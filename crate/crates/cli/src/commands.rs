//! One function per pipeline stage. Each validates its configuration and
//! inputs before computing anything and returns the files it wrote.

use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use spinekin::analytics::{
    curvature_series, curvature_stats_by_action, neck_rom_report, reject_implausible_curvature, rom_coordinates,
    rom_summary_by_action, CurvatureBounds, CurvatureSample,
};
use spinekin::io::{self, MotionDocument, TrcDocument};
use spinekin::metrics::{
    default_sigmas, oks_ap_ar, pck_auc, root_center, subset_table, Detection, EvaluationReport, GroundTruthInstance,
    PoseSet2, PoseSet3, RegionSubsets,
};
use spinekin::skeleton::{estimate_subject_height, load_skeleton, scale_skeleton, LoadOptions};
use spinekin::synth::{generate_motion, render_annotations};
use spinekin::temporal::{fill_gaps, lowpass_markers, unwrap_and_clamp_angles};
use spinekin::triangulation::{triangulate_sequence, CameraSet};
use spinekin::{JointState, JointTrajectory, MarkerTrajectory, SkeletonDefinition};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::output::{prepare_output_dir, require_file, Written};
use crate::plot;

pub const SCENARIO_FILE: &str = "scenario.toml";
pub const CALIBRATION_FILE: &str = "calibration.toml";
pub const GROUND_TRUTH_TRC: &str = "ground_truth.trc";
pub const GROUND_TRUTH_MOT: &str = "ground_truth.mot";
pub const ANNOTATIONS_FILE: &str = "annotations.tsv";
pub const TRIANGULATED_FILE: &str = "triangulated.trc";
pub const TRIANGULATION_RESIDUALS: &str = "triangulation_residuals.tsv";
pub const IK_MOTION_FILE: &str = "ik.mot";
pub const IK_RESIDUALS: &str = "ik_residuals.tsv";
pub const MODEL_FILE: &str = "model.toml";
pub const FK_MARKERS: &str = "fk_markers.trc";
pub const ROTATIONS_FILE: &str = "vertebral_rotations.tsv";
pub const CURVATURE_FILE: &str = "curvature.tsv";
pub const CURVATURE_SAMPLES: &str = "curvature_samples.tsv";
pub const ROM_FILE: &str = "rom.tsv";
pub const NECK_FILE: &str = "neck_rom.tsv";
pub const AUDIT_FILE: &str = "curvature_audit.tsv";
pub const CURVATURE_PLOT: &str = "curvature.svg";
pub const ROM_PLOT: &str = "rom.svg";
pub const EVALUATION_FILE: &str = "evaluation.tsv";

/// Reference cohort curvature, degrees: (mean, tolerance) for LLA and TKA.
pub const REFERENCE_LLA: (f64, f64) = (36.20, 2.95);
pub const REFERENCE_TKA: (f64, f64) = (32.89, 4.10);

/// Fraction of each side added around projected keypoints to form a
/// person box.
const BOX_PADDING: f64 = 0.1;

fn out_path(config: &PipelineConfig, name: &str) -> PathBuf {
    config.paths.output.join(name)
}

/// Configured skeleton file, or the model written by `ik`, or the built-in
/// definition.
pub fn load_configured_skeleton(config: &PipelineConfig) -> Result<SkeletonDefinition, CliError> {
    match config.skeleton_path() {
        Some(path) => {
            require_file(&path, "skeleton")?;
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            load_skeleton(&text, LoadOptions::default()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        }
        None => Ok(SkeletonDefinition::default_definition()),
    }
}

fn start(config: &PipelineConfig) -> Result<(), CliError> {
    config.validate()?;
    prepare_output_dir(&config.paths.output)
}

/// Generates motion, ground-truth markers, a camera rig and noisy 2D
/// annotations from `config.synth`.
pub fn cmd_synth(config: &PipelineConfig) -> Result<Written, CliError> {
    start(config)?;
    let units = config.units()?;
    let skeleton = load_configured_skeleton(config)?;
    let scenario = &config.synth;
    let cameras = scenario.cameras()?;
    let (joints, markers) = generate_motion(&skeleton, scenario)?;
    let annotations = render_annotations(&markers, &cameras, scenario)?;
    let names = skeleton.marker_names();

    let mut w = Written::default();
    w.write(out_path(config, SCENARIO_FILE), &scenario.to_toml_string())?;
    w.write(out_path(config, CALIBRATION_FILE), &io::write_calibration(&cameras))?;
    w.write(
        out_path(config, GROUND_TRUTH_TRC),
        &io::write_trc(&TrcDocument::from_markers(&markers, units, GROUND_TRUTH_TRC)),
    )?;
    w.write(
        out_path(config, GROUND_TRUTH_MOT),
        &io::write_motion(&MotionDocument::from_trajectory(
            &joints,
            &skeleton.rotational_mask(),
            true,
            GROUND_TRUTH_MOT,
        )),
    )?;
    w.write(
        out_path(config, ANNOTATIONS_FILE),
        &io::write_annotations(&annotations, &names),
    )?;
    Ok(w)
}

fn read_cameras(path: &Path) -> Result<CameraSet, CliError> {
    Ok(io::read_calibration_file(path)?)
}

/// Triangulates the annotation file against the calibration.
pub fn cmd_triangulate(config: &PipelineConfig) -> Result<Written, CliError> {
    start(config)?;
    let tri = config.triangulation.to_config()?;
    let units = config.units()?;
    let cal_path = config.calibration_path();
    let ann_path = config.annotations_path();
    require_file(&cal_path, "calibration")?;
    require_file(&ann_path, "annotations")?;
    let cameras = read_cameras(&cal_path)?;
    if tri.min_views > cameras.len() {
        return Err(CliError::Usage(format!(
            "triangulation.min_views is {} but {} lists only {} cameras",
            tri.min_views,
            cal_path.display(),
            cameras.len()
        )));
    }
    let skeleton = load_configured_skeleton(config)?;
    let names = skeleton.marker_names();
    let annotations = io::read_annotations_file(&ann_path, &names)?;
    for view in annotations.views() {
        if !cameras.contains_key(&view) {
            return Err(CliError::Data(format!(
                "{} references view `{view}` missing from {}",
                ann_path.display(),
                cal_path.display()
            )));
        }
    }

    let result = triangulate_sequence(
        &annotations.frames,
        &cameras,
        &names,
        config.triangulation.frame_rate,
        &tri,
    )?;
    let failures = result.failure_count();
    if failures > 0 {
        log::warn!("{failures} keypoint samples could not be triangulated; they are missing in the output");
    }
    let hash = config.hash();
    let mut w = Written::default();
    w.write(
        out_path(config, TRIANGULATED_FILE),
        &io::write_trc(&TrcDocument::from_markers(&result.markers, units, TRIANGULATED_FILE)),
    )?;
    w.write(
        out_path(config, TRIANGULATION_RESIDUALS),
        &io::format_triangulation_residuals(&result, &hash),
    )?;
    Ok(w)
}

/// Fits the skeleton to a marker file and writes angles, residuals and the
/// (possibly scaled) model.
pub fn cmd_ik(config: &PipelineConfig) -> Result<Written, CliError> {
    start(config)?;
    let markers_path = config.markers_path();
    require_file(&markers_path, "marker")?;
    let mut skeleton = load_configured_skeleton(config)?;
    let ik = config.ik.to_config(&skeleton)?;
    let mut markers = io::read_trc_file(&markers_path)?.to_markers();
    if markers.num_frames() == 0 {
        return Err(CliError::Data(format!("{} has no frames", markers_path.display())));
    }
    if config.filter.enabled {
        let spec = config.filter.spec(markers.frame_rate)?;
        markers = lowpass_markers(&fill_gaps(&markers, config.filter.max_gap), &spec)?;
    }
    if config.ik.scale_to_subject {
        let height = estimate_subject_height(&skeleton, &markers)?;
        log::info!("estimated stature {height:.4} m");
        skeleton = scale_skeleton(&skeleton, height, skeleton.reference_height)?;
    }

    let solution = spinekin::ik::solve_sequence(&skeleton, &markers, &ik)?;
    let unconverged = solution.converged.iter().filter(|c| !**c).count();
    if unconverged > 0 {
        log::warn!("{unconverged} frames did not converge; see the residual report");
    }
    let rotational = skeleton.rotational_mask();
    let states = unwrap_and_clamp_angles(&solution.states, &rotational, config.ik.jump_threshold);
    let hash = config.hash();
    let mut w = Written::default();
    w.write(
        out_path(config, IK_MOTION_FILE),
        &io::write_motion(&MotionDocument::from_trajectory(
            &states,
            &rotational,
            true,
            IK_MOTION_FILE,
        )),
    )?;
    w.write(
        out_path(config, IK_RESIDUALS),
        &io::format_ik_residuals(&solution, &skeleton.marker_names(), &hash),
    )?;
    w.write(out_path(config, MODEL_FILE), &skeleton.to_toml_string())?;
    Ok(w)
}

fn read_joint_trajectory(path: &Path, skeleton: &SkeletonDefinition) -> Result<JointTrajectory, CliError> {
    require_file(path, "motion")?;
    let doc = io::read_motion_file(path)?;
    doc.to_trajectory(&skeleton.coordinate_names, &skeleton.rotational_mask())
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Mean sampling rate of a trajectory; `fallback` when it has one frame.
fn trajectory_rate(traj: &JointTrajectory, fallback: f64) -> f64 {
    match (traj.states.first(), traj.states.last()) {
        (Some(a), Some(b)) if traj.len() > 1 && b.timestamp > a.timestamp => {
            (traj.len() - 1) as f64 / (b.timestamp - a.timestamp)
        }
        _ => fallback,
    }
}

/// Virtual markers and vertebral rotation tables for a motion file.
pub fn cmd_fk(config: &PipelineConfig) -> Result<Written, CliError> {
    start(config)?;
    let units = config.units()?;
    let skeleton = load_configured_skeleton(config)?;
    let traj = read_joint_trajectory(&config.motion_path(), &skeleton)?;
    let positions: Vec<Vec<Vector3<f64>>> = traj
        .states
        .par_iter()
        .map(|s| skeleton.forward_kinematics(s))
        .collect::<Result<_, _>>()?;
    let mut markers = MarkerTrajectory::new(
        skeleton.marker_names(),
        trajectory_rate(&traj, config.triangulation.frame_rate),
    );
    for (s, p) in traj.states.iter().zip(positions) {
        markers.push_frame(s.timestamp, p);
    }
    let hash = config.hash();
    let mut w = Written::default();
    w.write(
        out_path(config, FK_MARKERS),
        &io::write_trc(&TrcDocument::from_markers(&markers, units, FK_MARKERS)),
    )?;
    w.write(
        out_path(config, ROTATIONS_FILE),
        &io::format_rotation_table(&skeleton, &traj, &hash)?,
    )?;
    Ok(w)
}

/// Concatenation of labelled trajectories.
struct Cohort {
    trajectory: JointTrajectory,
    actions: Vec<String>,
    samples: Vec<CurvatureSample>,
}

fn load_cohort(config: &PipelineConfig, skeleton: &SkeletonDefinition) -> Result<Cohort, CliError> {
    let a = &config.analysis;
    let inputs: Vec<(PathBuf, String, String)> = if a.inputs.is_empty() {
        vec![(config.motion_path(), a.subject.clone(), a.action.clone())]
    } else {
        a.inputs
            .iter()
            .map(|i| (i.path.clone(), i.subject.clone(), i.action.clone()))
            .collect()
    };
    for (path, _, _) in &inputs {
        require_file(path, "motion")?;
    }
    let mut states: Vec<JointState> = Vec::new();
    let mut actions = Vec::new();
    let mut samples = Vec::new();
    for (path, subject, action) in &inputs {
        let traj = read_joint_trajectory(path, skeleton)?;
        let labels = vec![action.clone(); traj.len()];
        samples.extend(curvature_series(skeleton, &traj, subject, &labels)?);
        actions.extend(labels);
        states.extend(traj.states);
    }
    Ok(Cohort {
        trajectory: JointTrajectory::new(skeleton.coordinate_names.clone(), states),
        actions,
        samples,
    })
}

/// Pass/fail lines comparing pooled and per-action curvature means with
/// the reference cohort.
fn audit_report(samples: &[CurvatureSample], hash: &str) -> String {
    let stats = curvature_stats_by_action(samples);
    let normative = CurvatureBounds::normative();
    let mut out = format!("# curvature audit\n# config_hash\t{hash}\ncheck\tvalue_deg\texpected_deg\tresult\n");
    let verdict = |ok: bool| if ok { "pass" } else { "fail" };
    for s in &stats {
        if s.action == "all" {
            for (name, v, (m, tol)) in [
                ("mean LLA", s.lla_mean, REFERENCE_LLA),
                ("mean TKA", s.tka_mean, REFERENCE_TKA),
            ] {
                out.push_str(&format!(
                    "{name}\t{v:.4}\t{m:.2} ± {tol:.2}\t{}\n",
                    verdict((v - m).abs() <= tol)
                ));
            }
        } else {
            let (l, t) = (normative.lla_deg, normative.tka_deg);
            out.push_str(&format!(
                "{} LLA\t{:.4}\t[{}, {}]\t{}\n",
                s.action,
                s.lla_mean,
                l.0,
                l.1,
                verdict(s.lla_mean >= l.0 && s.lla_mean <= l.1)
            ));
            out.push_str(&format!(
                "{} TKA\t{:.4}\t[{}, {}]\t{}\n",
                s.action,
                s.tka_mean,
                t.0,
                t.1,
                verdict(s.tka_mean >= t.0 && s.tka_mean <= t.1)
            ));
        }
    }
    out
}

/// Curvature statistics, range of motion, neck distributions and figures.
pub fn cmd_analyze(config: &PipelineConfig) -> Result<Written, CliError> {
    start(config)?;
    let a = &config.analysis;
    let skeleton = load_configured_skeleton(config)?;
    if skeleton.curvature.is_none() {
        return Err(CliError::Data("skeleton defines no curvature frames".into()));
    }
    let cohort = load_cohort(config, &skeleton)?;
    let samples = reject_implausible_curvature(&cohort.samples, &a.bounds());
    let stats = curvature_stats_by_action(&samples);
    let rom = rom_summary_by_action(&cohort.trajectory, &cohort.actions, &rom_coordinates(), a.trim)?;
    let neck = neck_rom_report(
        &cohort.trajectory,
        &cohort.actions,
        (a.neck_envelope[0], a.neck_envelope[1]),
    )?;

    let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for s in samples.iter().filter(|s| s.valid) {
        match groups.iter_mut().find(|g| g.0 == s.action) {
            Some(g) => {
                g.1.push(s.lla_deg);
                g.2.push(s.tka_deg);
            }
            None => groups.push((s.action.clone(), vec![s.lla_deg], vec![s.tka_deg])),
        }
    }
    groups.sort_by(|x, y| x.0.cmp(&y.0));

    let hash = config.hash();
    let mut w = Written::default();
    w.write(
        out_path(config, CURVATURE_FILE),
        &io::format_curvature_report(&stats, &hash),
    )?;
    w.write(
        out_path(config, CURVATURE_SAMPLES),
        &io::format_curvature_samples(&samples, &hash),
    )?;
    w.write(out_path(config, ROM_FILE), &io::format_rom_report(&rom, &hash))?;
    w.write(out_path(config, NECK_FILE), &io::format_neck_report(&neck, &hash))?;
    if a.audit {
        w.write(out_path(config, AUDIT_FILE), &audit_report(&samples, &hash))?;
    }
    w.write(out_path(config, CURVATURE_PLOT), &plot::curvature_violins(&groups))?;
    w.write(out_path(config, ROM_PLOT), &plot::rotation_curves(&cohort.trajectory))?;
    Ok(w)
}

/// Width and height of the padded extent of `points`.
pub fn person_box(points: &[Vector2<f64>]) -> Option<(f64, f64)> {
    let first = points.first()?;
    let (mut lo, mut hi) = (*first, *first);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let scale = 1.0 + 2.0 * BOX_PADDING;
    Some(((hi.x - lo.x) * scale, (hi.y - lo.y) * scale))
}

/// Ground truth and prediction projected into every view; one pose per
/// (frame, view) with its person box from the ground truth.
struct Projected {
    gt: PoseSet2,
    pred: PoseSet2,
    boxes: Vec<(f64, f64)>,
}

fn project_pair(gt: &PoseSet3, pred: &PoseSet3, cameras: &CameraSet) -> Projected {
    let names = gt.keypoint_names.clone();
    let k = names.len();
    let mut out = Projected {
        gt: PoseSet2::new(names.clone(), Vec::new()),
        pred: PoseSet2::new(names, Vec::new()),
        boxes: Vec::new(),
    };
    for f in 0..gt.num_frames() {
        for cam in cameras.values() {
            let proj = |p: &PoseSet3, j: usize| p.validity[f][j].then(|| cam.project(&p.frames[f][j]).ok()).flatten();
            let g: Vec<Option<Vector2<f64>>> = (0..k).map(|j| proj(gt, j)).collect();
            let visible: Vec<Vector2<f64>> = g.iter().flatten().copied().collect();
            let Some(bbox) = person_box(&visible) else { continue };
            let p: Vec<Option<Vector2<f64>>> = (0..k).map(|j| proj(pred, j)).collect();
            out.gt
                .frames
                .push(g.iter().map(|x| x.unwrap_or_else(Vector2::zeros)).collect());
            out.gt.validity.push(g.iter().map(Option::is_some).collect());
            out.pred
                .frames
                .push(p.iter().map(|x| x.unwrap_or_else(Vector2::zeros)).collect());
            out.pred.validity.push(p.iter().map(Option::is_some).collect());
            out.boxes.push(bbox);
        }
    }
    out
}

/// 3D error tables and, when a calibration is available, 2D scores of the
/// reprojected prediction.
pub fn cmd_evaluate(config: &PipelineConfig) -> Result<Written, CliError> {
    start(config)?;
    let subset = config.subset()?;
    let gt_path = config.ground_truth_path();
    let pred_path = config.prediction_path();
    require_file(&gt_path, "ground-truth")?;
    require_file(&pred_path, "prediction")?;
    let cal_path = config.calibration_path();
    let cameras = if cal_path.is_file() {
        Some(read_cameras(&cal_path)?)
    } else if config.paths.calibration.is_some() {
        return Err(CliError::Data(format!(
            "calibration file not found: {}",
            cal_path.display()
        )));
    } else {
        log::info!("no calibration at {}; 2D metrics skipped", cal_path.display());
        None
    };
    let skeleton = load_configured_skeleton(config)?;

    let gt_markers = io::read_trc_file(&gt_path)?.to_markers();
    let pred_markers = io::read_trc_file(&pred_path)?.to_markers();
    if let Some(missing) = gt_markers
        .marker_names
        .iter()
        .find(|n| pred_markers.marker_index(n).is_none())
    {
        return Err(CliError::Data(format!(
            "{} lacks keypoint `{missing}`",
            pred_path.display()
        )));
    }
    let pred_markers = pred_markers.select(&gt_markers.marker_names);
    if pred_markers.num_frames() != gt_markers.num_frames() {
        return Err(CliError::Data(format!(
            "{} has {} frames but {} has {}",
            pred_path.display(),
            pred_markers.num_frames(),
            gt_path.display(),
            gt_markers.num_frames()
        )));
    }
    let names = gt_markers.marker_names.clone();
    let mut gt = PoseSet3::from_markers(&gt_markers);
    let mut pred = PoseSet3::from_markers(&pred_markers);
    let subsets = RegionSubsets::from_skeleton(&skeleton, &names)?;

    let mut report = EvaluationReport {
        config_hash: config.hash(),
        ..Default::default()
    };
    if let Some(cameras) = &cameras {
        let proj = project_pair(&gt, &pred, cameras);
        let idx = subsets.indices(subset);
        let label = subset.label();
        report.scalars.push((
            format!("AUC({label})"),
            pck_auc(&proj.pred, &proj.gt, &proj.boxes, idx)?,
        ));
        let gts: Vec<GroundTruthInstance> = (0..proj.gt.num_frames())
            .map(|i| GroundTruthInstance {
                image: i,
                keypoints: proj.gt.frames[i].clone(),
                visible: proj.gt.validity[i].clone(),
                area: proj.boxes[i].0 * proj.boxes[i].1,
            })
            .collect();
        // missing predicted keypoints sit far outside any box
        let far = Vector2::repeat(f64::MAX.sqrt());
        let dets: Vec<Detection> = (0..proj.pred.num_frames())
            .map(|i| Detection {
                image: i,
                keypoints: (0..names.len())
                    .map(|j| {
                        if proj.pred.validity[i][j] {
                            proj.pred.frames[i][j]
                        } else {
                            far
                        }
                    })
                    .collect(),
                score: 1.0,
            })
            .collect();
        let sigmas = default_sigmas(&names, config.metrics.spine_sigma);
        let apar = oks_ap_ar(&dets, &gts, &sigmas, &names, idx)?;
        report.scalars.push((format!("AP({label})"), apar.ap));
        report.scalars.push((format!("AR({label})"), apar.ar));
    }

    if config.metrics.root_center {
        let root: Vec<usize> = config
            .metrics
            .root
            .iter()
            .map(|n| {
                names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| CliError::Usage(format!("metrics.root names unknown keypoint `{n}`")))
            })
            .collect::<Result<_, _>>()?;
        gt = root_center(&gt, &root)?;
        pred = root_center(&pred, &root)?;
    }
    let actions = vec![config.analysis.action.clone(); gt.num_frames()];
    report
        .tables
        .push(subset_table("MPJPE (mm)", &pred, &gt, &subsets, &actions, false)?);
    report
        .tables
        .push(subset_table("P-MPJPE (mm)", &pred, &gt, &subsets, &actions, true)?);

    let mut w = Written::default();
    w.write(
        out_path(config, EVALUATION_FILE),
        &io::format_evaluation_report(&report),
    )?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_in(dir: &Path) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.paths.output = dir.to_path_buf();
        c.synth.num_frames = 12;
        c
    }

    #[test]
    fn person_box_pads_extent() {
        let b = person_box(&[Vector2::new(0.0, 0.0), Vector2::new(10.0, 20.0)]).unwrap();
        assert!((b.0 - 12.0).abs() < 1e-12 && (b.1 - 24.0).abs() < 1e-12);
        assert!(person_box(&[]).is_none());
    }

    #[test]
    fn min_views_above_camera_count_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config_in(dir.path());
        cmd_synth(&c).unwrap();
        c.triangulation.min_views = 5;
        let err = cmd_triangulate(&c).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)), "{err}");
        assert!(!dir.path().join(TRIANGULATED_FILE).exists());
    }

    #[test]
    fn missing_calibration_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let c = config_in(dir.path());
        let err = cmd_triangulate(&c).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_DATA);
        assert!(err.to_string().contains(CALIBRATION_FILE));
    }

    #[test]
    fn evaluate_ground_truth_against_itself_is_perfect() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config_in(dir.path());
        cmd_synth(&c).unwrap();
        c.paths.prediction = Some(dir.path().join(GROUND_TRUTH_TRC));
        cmd_evaluate(&c).unwrap();
        let text = std::fs::read_to_string(dir.path().join(EVALUATION_FILE)).unwrap();
        assert!(text.contains("AUC(All)\t1.0000"), "{text}");
        assert!(text.contains("AP(All)\t1.0000"), "{text}");
        assert!(text.contains("Mean\t0.0000\t0.0000"), "{text}");
    }
}

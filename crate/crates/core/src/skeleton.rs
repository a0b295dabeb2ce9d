//! Articulated skeleton, generalized-coordinate state, forward kinematics
//! and virtual vertebral markers.
//!
//! A [`SkeletonDefinition`] holds two trees:
//!
//! * the kinematic tree of joints, each carrying a fixed offset, an optional
//!   built-in rotation and an ordered list of degrees of freedom, and
//! * the keypoint hierarchy: 37 named markers (ids, regions, parent links,
//!   left/right swaps) each riding on one joint's body at a local offset.
//!
//! The joint tree drives forward kinematics; the keypoint hierarchy is the
//! labeling used by datasets and metrics.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{axis_angle, rotation_vector};

/// The canonical definition shipped with the crate.
pub const DEFAULT_SKELETON_TOML: &str = include_str!("../data/default_skeleton.toml");

/// Number of keypoints in a strict definition.
pub const KEYPOINT_COUNT: usize = 37;

/// Intervertebral joints carrying three rotational dofs, caudal to cranial.
pub const LUMBAR_JOINTS: [&str; 6] = ["L5_S1", "L4_L5", "L3_L4", "L2_L3", "L1_L2", "L1_T12"];

const AXIS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("skeleton document parse error: {0}")]
    Parse(String),
    #[error("cycle detected in {tree} tree at `{name}`")]
    CycleDetected { tree: &'static str, name: String },
    #[error("unknown parent `{parent}` referenced by `{child}`")]
    UnknownParent { child: String, parent: String },
    #[error("axis of coordinate `{coordinate}` is not unit length (norm {norm})")]
    AxisNotUnit { coordinate: String, norm: f64 },
    #[error("region count mismatch: {0}")]
    RegionCountMismatch(String),
    #[error("invalid skeleton definition: {0}")]
    Invalid(String),
    #[error("missing coordinate `{0}`")]
    MissingCoordinate(String),
    #[error("missing keypoint `{0}`")]
    MissingKeypoint(String),
    #[error("height must be positive (subject {subject}, reference {reference})")]
    NonPositiveHeight { subject: f64, reference: f64 },
    #[error("state has {got} values but skeleton has {expected} coordinates")]
    StateLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DofKind {
    Rotation,
    Translation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DofSpec {
    pub coordinate: String,
    pub axis: Vector3<f64>,
    pub kind: DofKind,
    /// Radians for rotations, meters for translations.
    pub limits: (f64, f64),
    pub locked: bool,
    pub default_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub parent_id: Option<usize>,
    pub fixed_offset: Vector3<f64>,
    pub fixed_rotation: Matrix3<f64>,
    pub dofs: Vec<DofSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Lumbar,
    Thoracic,
    Cervical,
    Body,
}

impl Region {
    pub fn is_spine(self) -> bool {
        !matches!(self, Region::Body)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Lumbar => "lumbar",
            Region::Thoracic => "thoracic",
            Region::Cervical => "cervical",
            Region::Body => "body",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerAttachment {
    pub id: usize,
    pub marker_name: String,
    pub joint_id: usize,
    pub local_offset: Vector3<f64>,
    pub region: Region,
    /// Parent in the keypoint hierarchy; `None` for the root keypoint.
    pub parent_keypoint: Option<usize>,
    pub swap: Option<String>,
    /// Coordinates associated with this keypoint in the dataset table.
    pub axes: Vec<String>,
}

/// Joint frames used for sagittal curvature measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureFrames {
    pub sacrum: usize,
    pub l1: usize,
    pub t12: usize,
    pub t3: usize,
    pub anterior_axis: Vector3<f64>,
    pub vertical_axis: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonDefinition {
    pub name: String,
    pub reference_height: f64,
    pub joints: Vec<JointSpec>,
    pub markers: Vec<MarkerAttachment>,
    pub coordinate_names: Vec<String>,
    pub curvature: Option<CurvatureFrames>,
    coordinate_index: HashMap<String, usize>,
    /// Global coordinate index of each joint's first dof.
    dof_start: Vec<usize>,
    /// Joints in parent-before-child order.
    topo_order: Vec<usize>,
    /// Global coordinate indices of every dof on the path root → joint.
    chain_dofs: Vec<Vec<usize>>,
}

/// Joint-space state aligned with a skeleton's `coordinate_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub values: Vec<f64>,
    pub timestamp: f64,
}

impl JointState {
    pub fn new(values: Vec<f64>, timestamp: f64) -> Self {
        Self { values, timestamp }
    }
}

/// A time series of joint states with per-frame QC flags.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    pub coordinate_names: Vec<String>,
    pub states: Vec<JointState>,
    pub flagged: Vec<bool>,
}

impl JointTrajectory {
    pub fn new(coordinate_names: Vec<String>, states: Vec<JointState>) -> Self {
        let flagged = vec![false; states.len()];
        Self {
            coordinate_names,
            states,
            flagged,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn coordinate_index(&self, name: &str) -> Option<usize> {
        self.coordinate_names.iter().position(|c| c == name)
    }

    /// Values of one coordinate over time.
    pub fn channel(&self, index: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.values[index]).collect()
    }
}

/// Time series of named 3D markers. Entries whose `validity` is false carry
/// no information and must be ignored by consumers.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerTrajectory {
    pub marker_names: Vec<String>,
    pub frame_rate: f64,
    pub timestamps: Vec<f64>,
    pub positions: Vec<Vec<Vector3<f64>>>,
    pub validity: Vec<Vec<bool>>,
    pub confidence: Vec<Vec<f64>>,
    /// Set for samples synthesized by gap filling.
    pub interpolated: Vec<Vec<bool>>,
}

impl MarkerTrajectory {
    pub fn new(marker_names: Vec<String>, frame_rate: f64) -> Self {
        Self {
            marker_names,
            frame_rate,
            timestamps: Vec::new(),
            positions: Vec::new(),
            validity: Vec::new(),
            confidence: Vec::new(),
            interpolated: Vec::new(),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.timestamps.len()
    }

    pub fn num_markers(&self) -> usize {
        self.marker_names.len()
    }

    pub fn marker_index(&self, name: &str) -> Option<usize> {
        self.marker_names.iter().position(|m| m == name)
    }

    /// Appends a fully valid frame with unit confidence.
    pub fn push_frame(&mut self, timestamp: f64, positions: Vec<Vector3<f64>>) {
        let k = positions.len();
        self.push_frame_with(timestamp, positions, vec![true; k], vec![1.0; k]);
    }

    pub fn push_frame_with(
        &mut self,
        timestamp: f64,
        positions: Vec<Vector3<f64>>,
        validity: Vec<bool>,
        confidence: Vec<f64>,
    ) {
        assert_eq!(positions.len(), self.marker_names.len(), "marker count");
        assert_eq!(validity.len(), self.marker_names.len(), "validity count");
        assert_eq!(confidence.len(), self.marker_names.len(), "confidence count");
        let k = positions.len();
        self.timestamps.push(timestamp);
        self.positions.push(positions);
        self.validity.push(validity);
        self.confidence.push(confidence);
        self.interpolated.push(vec![false; k]);
    }

    /// Checks shape consistency and strictly increasing timestamps.
    pub fn validate(&self) -> Result<(), String> {
        let t = self.timestamps.len();
        let k = self.marker_names.len();
        for (what, len) in [
            ("positions", self.positions.len()),
            ("validity", self.validity.len()),
            ("confidence", self.confidence.len()),
            ("interpolated", self.interpolated.len()),
        ] {
            if len != t {
                return Err(format!("{what} has {len} frames, expected {t}"));
            }
        }
        for f in 0..t {
            if self.positions[f].len() != k
                || self.validity[f].len() != k
                || self.confidence[f].len() != k
                || self.interpolated[f].len() != k
            {
                return Err(format!("frame {f} does not have {k} markers"));
            }
        }
        if let Some(w) = self.timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(format!("timestamps not strictly increasing at frame {}", w + 1));
        }
        Ok(())
    }

    /// Copy restricted to the named markers, in the given order. Names missing
    /// from `self` become invalid columns.
    pub fn select(&self, names: &[String]) -> MarkerTrajectory {
        let idx: Vec<Option<usize>> = names.iter().map(|n| self.marker_index(n)).collect();
        let pick = |row: &Vec<Vector3<f64>>| -> Vec<Vector3<f64>> {
            idx.iter()
                .map(|i| i.map(|i| row[i]).unwrap_or_else(Vector3::zeros))
                .collect()
        };
        MarkerTrajectory {
            marker_names: names.to_vec(),
            frame_rate: self.frame_rate,
            timestamps: self.timestamps.clone(),
            positions: self.positions.iter().map(pick).collect(),
            validity: self
                .validity
                .iter()
                .map(|row| idx.iter().map(|i| i.map(|i| row[i]).unwrap_or(false)).collect())
                .collect(),
            confidence: self
                .confidence
                .iter()
                .map(|row| idx.iter().map(|i| i.map(|i| row[i]).unwrap_or(0.0)).collect())
                .collect(),
            interpolated: self
                .interpolated
                .iter()
                .map(|row| idx.iter().map(|i| i.map(|i| row[i]).unwrap_or(false)).collect())
                .collect(),
        }
    }
}

/// World poses of every joint body plus the world axes/centers of every dof,
/// produced by [`SkeletonDefinition::kinematics`].
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub rotations: Vec<Matrix3<f64>>,
    pub origins: Vec<Vector3<f64>>,
    pub dof_axes: Vec<Vector3<f64>>,
    pub dof_centers: Vec<Vector3<f64>>,
}

// ---- document schema ----

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SkeletonDoc {
    name: String,
    reference_height: f64,
    curvature: Option<CurvatureDoc>,
    #[serde(rename = "joint")]
    joints: Vec<JointDoc>,
    #[serde(rename = "keypoint")]
    keypoints: Vec<KeypointDoc>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct CurvatureDoc {
    sacrum: String,
    l1: String,
    t12: String,
    t3: String,
    anterior_axis: [f64; 3],
    vertical_axis: [f64; 3],
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    name: String,
    parent: Option<String>,
    offset: [f64; 3],
    rotation_deg: Option<[f64; 3]>,
    #[serde(default)]
    dofs: Vec<DofDoc>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct DofDoc {
    coordinate: String,
    kind: DofKind,
    axis: [f64; 3],
    limits: Option<[f64; 2]>,
    #[serde(default)]
    locked: bool,
    default: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct KeypointDoc {
    id: usize,
    name: String,
    region: Region,
    parent: i64,
    swap: Option<String>,
    #[serde(default)]
    axes: Vec<String>,
    body: String,
    offset: [f64; 3],
}

/// Loader switches. Strict mode enforces the 37-keypoint regional layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub strict: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { strict: true }
    }
}

impl SkeletonDefinition {
    /// The shipped default definition.
    pub fn default_definition() -> Self {
        Self::from_toml_str(DEFAULT_SKELETON_TOML).expect("shipped skeleton definition is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SkeletonError> {
        load_skeleton(text, LoadOptions::default())
    }

    pub fn coordinate_count(&self) -> usize {
        self.coordinate_names.len()
    }

    pub fn coordinate_index(&self, name: &str) -> Option<usize> {
        self.coordinate_index.get(name).copied()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn marker_index(&self, name: &str) -> Option<usize> {
        self.markers.iter().position(|m| m.marker_name == name)
    }

    pub fn marker_names(&self) -> Vec<String> {
        self.markers.iter().map(|m| m.marker_name.clone()).collect()
    }

    /// Dof spec for a global coordinate index.
    pub fn dof(&self, coordinate: usize) -> &DofSpec {
        let (j, d) = self.dof_owner(coordinate);
        &self.joints[j].dofs[d]
    }

    /// `(joint index, dof index within joint)` owning a coordinate.
    pub fn dof_owner(&self, coordinate: usize) -> (usize, usize) {
        let j = match self.dof_start.binary_search(&coordinate) {
            Ok(mut j) => {
                // skip joints without dofs that share the same start
                while self.joints[j].dofs.is_empty() {
                    j += 1;
                }
                j
            }
            Err(j) => j - 1,
        };
        (j, coordinate - self.dof_start[j])
    }

    pub fn is_rotational(&self, coordinate: usize) -> bool {
        self.dof(coordinate).kind == DofKind::Rotation
    }

    pub fn rotational_mask(&self) -> Vec<bool> {
        (0..self.coordinate_count()).map(|c| self.is_rotational(c)).collect()
    }

    /// Coordinates that IK and synthesis are allowed to move.
    pub fn free_coordinates(&self) -> Vec<usize> {
        (0..self.coordinate_count()).filter(|&c| !self.dof(c).locked).collect()
    }

    pub fn joint_order(&self) -> &[usize] {
        &self.topo_order
    }

    /// Global coordinate indices on the path from the root to `joint`.
    pub fn chain_dofs(&self, joint: usize) -> &[usize] {
        &self.chain_dofs[joint]
    }

    /// State with every coordinate at its default value.
    pub fn neutral_state(&self) -> JointState {
        JointState::new(
            (0..self.coordinate_count())
                .map(|c| self.dof(c).default_value)
                .collect(),
            0.0,
        )
    }

    pub fn markers_in_region(&self, region: Region) -> Vec<usize> {
        self.markers
            .iter()
            .filter(|m| m.region == region)
            .map(|m| m.id)
            .collect()
    }

    fn check_state(&self, values: &[f64]) -> Result<(), SkeletonError> {
        if values.len() != self.coordinate_count() {
            return Err(SkeletonError::StateLength {
                expected: self.coordinate_count(),
                got: values.len(),
            });
        }
        Ok(())
    }

    /// World poses of all joint bodies and dof axes for generalized
    /// coordinates `q`.
    pub fn kinematics(&self, q: &[f64]) -> Result<Kinematics, SkeletonError> {
        self.check_state(q)?;
        let nj = self.joints.len();
        let nd = self.coordinate_count();
        let mut rotations = vec![Matrix3::identity(); nj];
        let mut origins = vec![Vector3::zeros(); nj];
        let mut dof_axes = vec![Vector3::zeros(); nd];
        let mut dof_centers = vec![Vector3::zeros(); nd];
        for &j in &self.topo_order {
            let joint = &self.joints[j];
            let (parent_r, parent_o) = match joint.parent_id {
                Some(p) => (rotations[p], origins[p]),
                None => (Matrix3::identity(), Vector3::zeros()),
            };
            let start = self.dof_start[j];
            let mut local_t = joint.fixed_offset;
            for (k, dof) in joint.dofs.iter().enumerate() {
                if dof.kind == DofKind::Translation {
                    local_t += dof.axis * q[start + k];
                    dof_axes[start + k] = parent_r * dof.axis;
                }
            }
            let origin = parent_o + parent_r * local_t;
            let mut r = parent_r * joint.fixed_rotation;
            for (k, dof) in joint.dofs.iter().enumerate() {
                if dof.kind == DofKind::Rotation {
                    dof_axes[start + k] = r * dof.axis;
                    dof_centers[start + k] = origin;
                    r *= axis_angle(&dof.axis, q[start + k]);
                }
            }
            rotations[j] = r;
            origins[j] = origin;
        }
        Ok(Kinematics {
            rotations,
            origins,
            dof_axes,
            dof_centers,
        })
    }

    pub fn marker_positions(&self, kin: &Kinematics) -> Vec<Vector3<f64>> {
        self.markers
            .iter()
            .map(|m| kin.origins[m.joint_id] + kin.rotations[m.joint_id] * m.local_offset)
            .collect()
    }

    /// Marker positions (K × 3, meters) for a joint state.
    pub fn forward_kinematics(&self, state: &JointState) -> Result<Vec<Vector3<f64>>, SkeletonError> {
        let kin = self.kinematics(&state.values)?;
        Ok(self.marker_positions(&kin))
    }

    /// Analytic Jacobian of the stacked marker positions (3K rows) with
    /// respect to the listed coordinates (one column each).
    pub fn marker_jacobian(&self, kin: &Kinematics, columns: &[usize]) -> DMatrix<f64> {
        let positions = self.marker_positions(kin);
        let mut col_of = vec![usize::MAX; self.coordinate_count()];
        for (c, &coord) in columns.iter().enumerate() {
            col_of[coord] = c;
        }
        let mut jac = DMatrix::zeros(3 * self.markers.len(), columns.len());
        for (m, marker) in self.markers.iter().enumerate() {
            let p = positions[m];
            for &d in &self.chain_dofs[marker.joint_id] {
                let c = col_of[d];
                if c == usize::MAX {
                    continue;
                }
                let axis = kin.dof_axes[d];
                let col = match self.dof(d).kind {
                    DofKind::Rotation => axis.cross(&(p - kin.dof_centers[d])),
                    DofKind::Translation => axis,
                };
                jac.fixed_view_mut::<3, 1>(3 * m, c).copy_from(&col);
            }
        }
        jac
    }

    /// Serializes back to the definition document format.
    pub fn to_toml_string(&self) -> String {
        let joint_name = |id: Option<usize>| id.map(|p| self.joints[p].name.clone());
        let doc = SkeletonDoc {
            name: self.name.clone(),
            reference_height: self.reference_height,
            curvature: self.curvature.as_ref().map(|c| CurvatureDoc {
                sacrum: self.joints[c.sacrum].name.clone(),
                l1: self.joints[c.l1].name.clone(),
                t12: self.joints[c.t12].name.clone(),
                t3: self.joints[c.t3].name.clone(),
                anterior_axis: c.anterior_axis.into(),
                vertical_axis: c.vertical_axis.into(),
            }),
            joints: self
                .joints
                .iter()
                .map(|j| {
                    let rv = nalgebra::Rotation3::from_matrix_unchecked(j.fixed_rotation).scaled_axis();
                    JointDoc {
                        name: j.name.clone(),
                        parent: joint_name(j.parent_id),
                        offset: j.fixed_offset.into(),
                        rotation_deg: (rv.norm() > 0.0).then(|| (rv * 180.0 / std::f64::consts::PI).into()),
                        dofs: j
                            .dofs
                            .iter()
                            .map(|d| {
                                let to_file = |v: f64| match d.kind {
                                    DofKind::Rotation => v.to_degrees(),
                                    DofKind::Translation => v,
                                };
                                DofDoc {
                                    coordinate: d.coordinate.clone(),
                                    kind: d.kind,
                                    axis: d.axis.into(),
                                    limits: Some([to_file(d.limits.0), to_file(d.limits.1)]),
                                    locked: d.locked,
                                    default: (d.default_value != 0.0).then(|| to_file(d.default_value)),
                                }
                            })
                            .collect(),
                    }
                })
                .collect(),
            keypoints: self
                .markers
                .iter()
                .map(|m| KeypointDoc {
                    id: m.id,
                    name: m.marker_name.clone(),
                    region: m.region,
                    parent: m.parent_keypoint.map(|p| p as i64).unwrap_or(-1),
                    swap: m.swap.clone(),
                    axes: m.axes.clone(),
                    body: self.joints[m.joint_id].name.clone(),
                    offset: m.local_offset.into(),
                })
                .collect(),
        };
        toml::to_string(&doc).expect("skeleton serializes")
    }
}

/// Parses and validates a skeleton definition document.
pub fn load_skeleton(text: &str, options: LoadOptions) -> Result<SkeletonDefinition, SkeletonError> {
    let doc: SkeletonDoc = toml::from_str(text).map_err(|e| SkeletonError::Parse(e.to_string()))?;
    build(doc, options)
}

fn build(doc: SkeletonDoc, options: LoadOptions) -> Result<SkeletonDefinition, SkeletonError> {
    if !(doc.reference_height > 0.0) {
        return Err(SkeletonError::Invalid("reference_height must be positive".into()));
    }
    let mut joint_ids = HashMap::new();
    for (i, j) in doc.joints.iter().enumerate() {
        if joint_ids.insert(j.name.clone(), i).is_some() {
            return Err(SkeletonError::Invalid(format!("duplicate joint `{}`", j.name)));
        }
    }

    let mut joints = Vec::with_capacity(doc.joints.len());
    for j in &doc.joints {
        let parent_id = match &j.parent {
            None => None,
            Some(p) => Some(*joint_ids.get(p).ok_or_else(|| SkeletonError::UnknownParent {
                child: j.name.clone(),
                parent: p.clone(),
            })?),
        };
        let fixed_rotation = match j.rotation_deg {
            Some(rv) => rotation_vector(&(Vector3::from(rv) * std::f64::consts::PI / 180.0)),
            None => Matrix3::identity(),
        };
        let mut dofs = Vec::with_capacity(j.dofs.len());
        for d in &j.dofs {
            let axis = Vector3::from(d.axis);
            let norm = axis.norm();
            if !((norm - 1.0).abs() <= AXIS_TOL) {
                return Err(SkeletonError::AxisNotUnit {
                    coordinate: d.coordinate.clone(),
                    norm,
                });
            }
            let to_internal = |v: f64| match d.kind {
                DofKind::Rotation => v.to_radians(),
                DofKind::Translation => v,
            };
            let limits = match (d.limits, d.kind) {
                (Some([lo, hi]), _) => (to_internal(lo), to_internal(hi)),
                (None, DofKind::Rotation) => (-std::f64::consts::PI, std::f64::consts::PI),
                (None, DofKind::Translation) => (f64::NEG_INFINITY, f64::INFINITY),
            };
            if !(limits.0 <= limits.1) {
                return Err(SkeletonError::Invalid(format!(
                    "limits of `{}` are inverted",
                    d.coordinate
                )));
            }
            if d.kind == DofKind::Rotation
                && (limits.0 < -std::f64::consts::PI - 1e-12 || limits.1 > std::f64::consts::PI + 1e-12)
            {
                return Err(SkeletonError::Invalid(format!(
                    "rotational limits of `{}` exceed [-180, 180] degrees",
                    d.coordinate
                )));
            }
            let default_value = to_internal(d.default.unwrap_or(0.0));
            dofs.push(DofSpec {
                coordinate: d.coordinate.clone(),
                axis,
                kind: d.kind,
                limits,
                locked: d.locked,
                default_value,
            });
        }
        joints.push(JointSpec {
            name: j.name.clone(),
            parent_id,
            fixed_offset: Vector3::from(j.offset),
            fixed_rotation,
            dofs,
        });
    }

    let roots: Vec<usize> = (0..joints.len()).filter(|&i| joints[i].parent_id.is_none()).collect();
    if roots.len() != 1 {
        return Err(SkeletonError::Invalid(format!(
            "expected exactly one root joint, found {}",
            roots.len()
        )));
    }
    let root = roots[0];
    let joint_parents: Vec<Option<usize>> = joints.iter().map(|j| j.parent_id).collect();
    let joint_names: Vec<String> = joints.iter().map(|j| j.name.clone()).collect();
    let topo_order = topological_order(&joint_parents, &joint_names, "joint")?;

    // coordinates
    let mut coordinate_names = Vec::new();
    let mut coordinate_index = HashMap::new();
    let mut dof_start = Vec::with_capacity(joints.len());
    for (ji, j) in joints.iter().enumerate() {
        dof_start.push(coordinate_names.len());
        for d in &j.dofs {
            if d.kind == DofKind::Translation && ji != root {
                return Err(SkeletonError::Invalid(format!(
                    "translational coordinate `{}` on non-root joint `{}`",
                    d.coordinate, j.name
                )));
            }
            if coordinate_index
                .insert(d.coordinate.clone(), coordinate_names.len())
                .is_some()
            {
                return Err(SkeletonError::Invalid(format!(
                    "duplicate coordinate `{}`",
                    d.coordinate
                )));
            }
            coordinate_names.push(d.coordinate.clone());
        }
    }

    let mut chain_dofs = vec![Vec::new(); joints.len()];
    for &j in &topo_order {
        let mut chain = match joints[j].parent_id {
            Some(p) => chain_dofs[p].clone(),
            None => Vec::new(),
        };
        chain.extend(dof_start[j]..dof_start[j] + joints[j].dofs.len());
        chain_dofs[j] = chain;
    }

    // keypoints
    let k = doc.keypoints.len();
    let mut markers = Vec::with_capacity(k);
    let mut seen_names = HashMap::new();
    for (pos, kp) in doc.keypoints.iter().enumerate() {
        if kp.id != pos {
            return Err(SkeletonError::Invalid(format!(
                "keypoint ids must be contiguous from 0; `{}` has id {} at position {}",
                kp.name, kp.id, pos
            )));
        }
        if seen_names.insert(kp.name.clone(), kp.id).is_some() {
            return Err(SkeletonError::Invalid(format!("duplicate keypoint `{}`", kp.name)));
        }
        let joint_id = *joint_ids.get(&kp.body).ok_or_else(|| SkeletonError::UnknownParent {
            child: kp.name.clone(),
            parent: kp.body.clone(),
        })?;
        let parent_keypoint = match kp.parent {
            -1 => None,
            p if p >= 0 && (p as usize) < k => Some(p as usize),
            p => {
                return Err(SkeletonError::UnknownParent {
                    child: kp.name.clone(),
                    parent: p.to_string(),
                })
            }
        };
        for a in &kp.axes {
            if !coordinate_index.contains_key(a) {
                return Err(SkeletonError::MissingCoordinate(a.clone()));
            }
        }
        markers.push(MarkerAttachment {
            id: kp.id,
            marker_name: kp.name.clone(),
            joint_id,
            local_offset: Vector3::from(kp.offset),
            region: kp.region,
            parent_keypoint,
            swap: kp.swap.clone().filter(|s| !s.is_empty() && s != "--"),
            axes: kp.axes.clone(),
        });
    }
    let kp_parents: Vec<Option<usize>> = markers.iter().map(|m| m.parent_keypoint).collect();
    let kp_names: Vec<String> = markers.iter().map(|m| m.marker_name.clone()).collect();
    topological_order(&kp_parents, &kp_names, "keypoint")?;
    let kp_roots: Vec<&MarkerAttachment> = markers.iter().filter(|m| m.parent_keypoint.is_none()).collect();
    if kp_roots.len() != 1 {
        return Err(SkeletonError::Invalid(format!(
            "expected exactly one root keypoint (parent -1), found {}",
            kp_roots.len()
        )));
    }

    if options.strict {
        let mut counts: BTreeMap<Region, usize> = BTreeMap::new();
        for m in &markers {
            *counts.entry(m.region).or_default() += 1;
        }
        let expected = [
            (Region::Lumbar, 4usize),
            (Region::Thoracic, 6),
            (Region::Cervical, 5),
            (Region::Body, 22),
        ];
        for (region, n) in expected {
            let got = counts.get(&region).copied().unwrap_or(0);
            if got != n {
                return Err(SkeletonError::RegionCountMismatch(format!(
                    "{} region has {} keypoints, expected {} (total {}, expected {})",
                    region.as_str(),
                    got,
                    n,
                    markers.len(),
                    KEYPOINT_COUNT
                )));
            }
        }
        if kp_roots[0].joint_id != root {
            return Err(SkeletonError::Invalid(format!(
                "root keypoint `{}` must ride on the root joint",
                kp_roots[0].marker_name
            )));
        }
        for name in LUMBAR_JOINTS {
            let j = joint_ids
                .get(name)
                .ok_or_else(|| SkeletonError::Invalid(format!("missing intervertebral joint `{name}`")))?;
            let dofs = &joints[*j].dofs;
            if dofs.len() != 3 || dofs.iter().any(|d| d.kind != DofKind::Rotation) {
                return Err(SkeletonError::Invalid(format!(
                    "intervertebral joint `{name}` must carry exactly 3 rotational dofs"
                )));
            }
        }
    }

    let curvature = match doc.curvature {
        None => None,
        Some(c) => {
            let find = |n: &str| {
                joint_ids
                    .get(n)
                    .copied()
                    .ok_or_else(|| SkeletonError::Invalid(format!("curvature frame references unknown joint `{n}`")))
            };
            let anterior = Vector3::from(c.anterior_axis);
            let vertical = Vector3::from(c.vertical_axis);
            for (what, axis) in [("anterior_axis", anterior), ("vertical_axis", vertical)] {
                if !((axis.norm() - 1.0).abs() <= AXIS_TOL) {
                    return Err(SkeletonError::AxisNotUnit {
                        coordinate: format!("curvature.{what}"),
                        norm: axis.norm(),
                    });
                }
            }
            if anterior.dot(&vertical).abs() > AXIS_TOL {
                return Err(SkeletonError::Invalid(
                    "curvature anterior and vertical axes must be orthogonal".into(),
                ));
            }
            Some(CurvatureFrames {
                sacrum: find(&c.sacrum)?,
                l1: find(&c.l1)?,
                t12: find(&c.t12)?,
                t3: find(&c.t3)?,
                anterior_axis: anterior,
                vertical_axis: vertical,
            })
        }
    };

    Ok(SkeletonDefinition {
        name: doc.name,
        reference_height: doc.reference_height,
        joints,
        markers,
        coordinate_names,
        curvature,
        coordinate_index,
        dof_start,
        topo_order,
        chain_dofs,
    })
}

/// Parent-before-child ordering of a forest given by parent links; fails on
/// cycles (including self-parenting).
fn topological_order(
    parents: &[Option<usize>],
    names: &[String],
    tree: &'static str,
) -> Result<Vec<usize>, SkeletonError> {
    let n = parents.len();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    let mut order = Vec::with_capacity(n);
    for start in 0..n {
        if state[start] == 2 {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = Some(start);
        while let Some(c) = cur {
            match state[c] {
                2 => break,
                1 => {
                    return Err(SkeletonError::CycleDetected {
                        tree,
                        name: names[c].clone(),
                    })
                }
                _ => {
                    state[c] = 1;
                    path.push(c);
                    cur = parents[c];
                }
            }
        }
        for &c in path.iter().rev() {
            state[c] = 2;
            order.push(c);
        }
    }
    Ok(order)
}

/// Per-vertebra rotation triplet in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct VertebralRotation {
    pub joint: String,
    pub flexion_extension: f64,
    pub lateral_bending: f64,
    pub axial_rotation: f64,
}

/// Name of the aggregate cervicothoracic joint in rotation reports.
pub const NECK_JOINT: &str = "neck";

/// Coordinate names of the (flexion/extension, lateral bending, axial rotation)
/// triplet for a reported joint.
pub fn rotation_coordinates(joint: &str) -> [String; 3] {
    if joint == NECK_JOINT {
        [
            "neck_flexion".to_string(),
            "neck_bending".to_string(),
            "neck_rotation".to_string(),
        ]
    } else {
        [
            format!("{joint}_Flex_Ext"),
            format!("{joint}_Lat_Bending"),
            format!("{joint}_axial_rotation"),
        ]
    }
}

/// The six intervertebral triplets followed by the aggregate neck triplet.
pub fn extract_vertebral_rotations(
    skeleton: &SkeletonDefinition,
    state: &JointState,
) -> Result<Vec<VertebralRotation>, SkeletonError> {
    skeleton.check_state(&state.values)?;
    LUMBAR_JOINTS
        .iter()
        .copied()
        .chain(std::iter::once(NECK_JOINT))
        .map(|joint| {
            let names = rotation_coordinates(joint);
            let mut v = [0.0; 3];
            for (slot, name) in v.iter_mut().zip(&names) {
                let idx = skeleton
                    .coordinate_index(name)
                    .ok_or_else(|| SkeletonError::MissingCoordinate(name.clone()))?;
                *slot = state.values[idx].to_degrees();
            }
            Ok(VertebralRotation {
                joint: joint.to_string(),
                flexion_extension: v[0],
                lateral_bending: v[1],
                axial_rotation: v[2],
            })
        })
        .collect()
}

/// Uniformly scales all segment offsets and marker offsets by
/// `subject_height / reference_height`.
pub fn scale_skeleton(
    skeleton: &SkeletonDefinition,
    subject_height: f64,
    reference_height: f64,
) -> Result<SkeletonDefinition, SkeletonError> {
    if !(subject_height > 0.0) || !(reference_height > 0.0) {
        return Err(SkeletonError::NonPositiveHeight {
            subject: subject_height,
            reference: reference_height,
        });
    }
    let ratio = subject_height / reference_height;
    let mut scaled = skeleton.clone();
    if ratio == 1.0 {
        return Ok(scaled);
    }
    for j in &mut scaled.joints {
        j.fixed_offset *= ratio;
    }
    for m in &mut scaled.markers {
        m.local_offset *= ratio;
    }
    scaled.reference_height = skeleton.reference_height * ratio;
    Ok(scaled)
}

/// Vertical head-to-heel span of one marker frame: `Head` height minus the
/// mean heel height, measured along `vertical`.
pub fn head_heel_span(
    skeleton: &SkeletonDefinition,
    positions: &[Vector3<f64>],
    vertical: &Vector3<f64>,
) -> Result<f64, SkeletonError> {
    let get = |name: &str| {
        skeleton
            .marker_index(name)
            .map(|i| positions[i])
            .ok_or_else(|| SkeletonError::MissingKeypoint(name.to_string()))
    };
    let head = get("Head")?;
    let heels = (get("LHeel")? + get("RHeel")?) * 0.5;
    Ok((head - heels).dot(vertical))
}

/// Subject stature estimated from a marker trajectory: the median per-frame
/// head-to-heel span, converted to stature with the definition's neutral
/// span-to-height ratio.
pub fn estimate_subject_height(
    skeleton: &SkeletonDefinition,
    trajectory: &MarkerTrajectory,
) -> Result<f64, SkeletonError> {
    let vertical = skeleton
        .curvature
        .as_ref()
        .map(|c| c.vertical_axis)
        .unwrap_or_else(Vector3::y);
    let need = ["Head", "LHeel", "RHeel"];
    let idx: Vec<usize> = need
        .iter()
        .map(|n| {
            trajectory
                .marker_index(n)
                .ok_or_else(|| SkeletonError::MissingKeypoint(n.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let mut spans: Vec<f64> = (0..trajectory.num_frames())
        .filter(|&f| idx.iter().all(|&i| trajectory.validity[f][i]))
        .map(|f| {
            let p = &trajectory.positions[f];
            let heels = (p[idx[1]] + p[idx[2]]) * 0.5;
            (p[idx[0]] - heels).dot(&vertical)
        })
        .collect();
    if spans.is_empty() {
        return Err(SkeletonError::Invalid("no frame with Head and both heels valid".into()));
    }
    spans.sort_by(f64::total_cmp);
    let measured = crate::numeric::percentile_sorted(&spans, 50.0).unwrap_or(spans[0]);
    let neutral = skeleton.forward_kinematics(&skeleton.neutral_state())?;
    let neutral_span = head_heel_span(skeleton, &neutral, &vertical)?;
    if !(neutral_span > 0.0) {
        return Err(SkeletonError::Invalid("neutral head-heel span is not positive".into()));
    }
    Ok(measured * skeleton.reference_height / neutral_span)
}

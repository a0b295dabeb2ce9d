//! Readers and writers for marker trajectories (TRC), joint-angle motion
//! files (MOT), 2D annotation tables, camera calibration documents and
//! tab-separated reports.
//!
//! Readers reject malformed input with the offending line and field; they
//! never repair it. Writers use the shortest decimal that round-trips each
//! float, so write→read→write is a byte fixpoint.
//!
//! TRC grammar (tab-separated, `\n` line ends):
//!
//! ```text
//! PathFileType  4  (X/Y/Z)  <name>
//! DataRate  CameraRate  NumFrames  NumMarkers  Units  OrigDataRate  OrigDataStartFrame  OrigNumFrames
//! <values of the line above>
//! Frame#  Time  <marker 1>  ""  ""  <marker 2> ...
//! ""  ""  X1  Y1  Z1  X2 ...
//! <empty line>
//! <frame>  <time>  <x y z per marker; three empty cells for a missing marker>
//! ```
//!
//! MOT grammar: a name line, `version=1`, `nRows=N`, `nColumns=C`,
//! `inDegrees=yes|no`, `endheader`, a tab-separated column-name line starting
//! with `time`, then N rows of C values. Only rotational coordinates are
//! scaled by `inDegrees`.
//!
//! Annotation grammar: tab-separated with header
//! `frame view keypoint u v confidence bbox_w bbox_h`; frames are 0-based,
//! box cells may both be empty.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{CurvatureSample, CurvatureStats, NeckRomBlock, RomSummary};
use crate::geometry::CameraModel;
use crate::ik::IkSolution;
use crate::metrics::{EvaluationReport, Subset};
use crate::skeleton::{extract_vertebral_rotations, JointState, JointTrajectory, MarkerTrajectory, SkeletonDefinition};
use crate::triangulation::{CameraSet, Observation2D, SequenceTriangulation};

/// Tolerance between a row's time and the one implied by the data rate.
pub const TIME_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<IoError>,
    },
    #[error("line {line}: header mismatch: {message}")]
    HeaderMismatch { line: usize, message: String },
    #[error("line {line}: unknown units `{token}`")]
    UnitError { line: usize, token: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: usize, expected: usize, found: usize },
    #[error("line {line}, field `{field}`: {message}")]
    Field {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: unknown keypoint `{name}`")]
    UnknownKeypointName { line: usize, name: String },
    #[error("no person box for frame {frame}, view `{view}`")]
    MissingBBox { frame: usize, view: String },
    #[error("motion file lacks coordinate `{0}`")]
    MissingColumn(String),
    #[error("motion file column `{0}` is not a skeleton coordinate")]
    UnknownColumn(String),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IoError {
    fn in_file(self, path: &Path) -> IoError {
        IoError::File {
            path: path.display().to_string(),
            source: Box::new(self),
        }
    }
}

fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::Io(e).in_file(path))
}

fn field_err(line: usize, field: impl Into<String>, message: impl Into<String>) -> IoError {
    IoError::Field {
        line,
        field: field.into(),
        message: message.into(),
    }
}

fn parse_f64(text: &str, line: usize, field: &str) -> Result<f64, IoError> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| field_err(line, field, format!("`{text}` is not a number")))?;
    if !v.is_finite() {
        return Err(field_err(line, field, format!("`{text}` is not finite")));
    }
    Ok(v)
}

fn parse_usize(text: &str, line: usize, field: &str) -> Result<usize, IoError> {
    text.trim()
        .parse()
        .map_err(|_| field_err(line, field, format!("`{text}` is not a non-negative integer")))
}

/// Shortest round-trip decimal.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthUnit {
    Meters,
    Millimeters,
}

impl LengthUnit {
    pub fn parse(token: &str) -> Option<Self> {
        match token.trim() {
            "m" => Some(Self::Meters),
            "mm" => Some(Self::Millimeters),
            _ => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Self::Meters => "m",
            Self::Millimeters => "mm",
        }
    }

    /// Meters per file unit.
    pub fn to_meters(self) -> f64 {
        match self {
            Self::Meters => 1.0,
            Self::Millimeters => 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrcRow {
    pub frame: usize,
    pub time: f64,
    /// File units; `None` for a missing marker.
    pub points: Vec<Option<[f64; 3]>>,
}

/// A TRC file as written, values in the declared units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrcDocument {
    pub name: String,
    pub data_rate: f64,
    pub camera_rate: f64,
    pub units: LengthUnit,
    pub orig_data_rate: f64,
    pub orig_start_frame: usize,
    pub orig_num_frames: usize,
    pub marker_names: Vec<String>,
    pub rows: Vec<TrcRow>,
}

const TRC_KEYS: [&str; 8] = [
    "DataRate",
    "CameraRate",
    "NumFrames",
    "NumMarkers",
    "Units",
    "OrigDataRate",
    "OrigDataStartFrame",
    "OrigNumFrames",
];

impl TrcDocument {
    pub fn from_markers(traj: &MarkerTrajectory, units: LengthUnit, name: &str) -> Self {
        let scale = 1.0 / units.to_meters();
        let rows = (0..traj.num_frames())
            .map(|f| TrcRow {
                frame: f + 1,
                time: traj.timestamps[f],
                points: traj.positions[f]
                    .iter()
                    .zip(&traj.validity[f])
                    .map(|(p, &v)| v.then(|| [p.x * scale, p.y * scale, p.z * scale]))
                    .collect(),
            })
            .collect();
        Self {
            name: name.to_string(),
            data_rate: traj.frame_rate,
            camera_rate: traj.frame_rate,
            units,
            orig_data_rate: traj.frame_rate,
            orig_start_frame: 1,
            orig_num_frames: traj.num_frames(),
            marker_names: traj.marker_names.clone(),
            rows,
        }
    }

    /// Positions in meters; missing markers become invalid with zero
    /// confidence.
    pub fn to_markers(&self) -> MarkerTrajectory {
        let scale = self.units.to_meters();
        let mut traj = MarkerTrajectory::new(self.marker_names.clone(), self.data_rate);
        for row in &self.rows {
            let positions = row
                .points
                .iter()
                .map(|p| p.map_or(Vector3::zeros(), |p| Vector3::new(p[0], p[1], p[2]) * scale))
                .collect();
            let validity: Vec<bool> = row.points.iter().map(Option::is_some).collect();
            let confidence = validity.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
            traj.push_frame_with(row.time, positions, validity, confidence);
        }
        traj
    }
}

pub fn write_trc(doc: &TrcDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "PathFileType\t4\t(X/Y/Z)\t{}", doc.name);
    out.push_str(&TRC_KEYS.join("\t"));
    out.push('\n');
    let _ = writeln!(
        out,
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        fmt_f64(doc.data_rate),
        fmt_f64(doc.camera_rate),
        doc.rows.len(),
        doc.marker_names.len(),
        doc.units.token(),
        fmt_f64(doc.orig_data_rate),
        doc.orig_start_frame,
        doc.orig_num_frames
    );
    out.push_str("Frame#\tTime");
    for n in &doc.marker_names {
        let _ = write!(out, "\t{n}\t\t");
    }
    out.push_str("\n\t");
    for i in 1..=doc.marker_names.len() {
        let _ = write!(out, "\tX{i}\tY{i}\tZ{i}");
    }
    out.push_str("\n\n");
    for row in &doc.rows {
        let _ = write!(out, "{}\t{}", row.frame, fmt_f64(row.time));
        for p in &row.points {
            match p {
                Some(p) => {
                    let _ = write!(out, "\t{}\t{}\t{}", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(p[2]));
                }
                None => out.push_str("\t\t\t"),
            }
        }
        out.push('\n');
    }
    out
}

/// Splits off trailing empty cells beyond `expected`.
fn cells(line: &str, expected: usize, lineno: usize) -> Result<Vec<&str>, IoError> {
    let mut parts: Vec<&str> = line.split('\t').collect();
    while parts.len() > expected && parts.last().is_some_and(|p| p.trim().is_empty()) {
        parts.pop();
    }
    if parts.len() != expected {
        return Err(IoError::RaggedRow {
            line: lineno,
            expected,
            found: parts.len(),
        });
    }
    Ok(parts)
}

pub fn read_trc(text: &str) -> Result<TrcDocument, IoError> {
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let get = |i: usize| -> Result<&str, IoError> {
        lines.get(i).copied().ok_or(IoError::HeaderMismatch {
            line: i + 1,
            message: "file ends inside the header".into(),
        })
    };
    let first: Vec<&str> = get(0)?.split('\t').collect();
    if first.first().map(|s| s.trim()) != Some("PathFileType") {
        return Err(IoError::HeaderMismatch {
            line: 1,
            message: "expected `PathFileType`".into(),
        });
    }
    let name = first.get(3).map(|s| s.trim().to_string()).unwrap_or_default();
    let keys = cells(get(1)?, TRC_KEYS.len(), 2)?;
    for (k, want) in keys.iter().zip(TRC_KEYS) {
        if k.trim() != want {
            return Err(field_err(2, want, format!("found `{}`", k.trim())));
        }
    }
    let vals = cells(get(2)?, TRC_KEYS.len(), 3)?;
    let data_rate = parse_f64(vals[0], 3, "DataRate")?;
    let camera_rate = parse_f64(vals[1], 3, "CameraRate")?;
    let num_frames = parse_usize(vals[2], 3, "NumFrames")?;
    let num_markers = parse_usize(vals[3], 3, "NumMarkers")?;
    let units = LengthUnit::parse(vals[4]).ok_or_else(|| IoError::UnitError {
        line: 3,
        token: vals[4].trim().to_string(),
    })?;
    let orig_data_rate = parse_f64(vals[5], 3, "OrigDataRate")?;
    let orig_start_frame = parse_usize(vals[6], 3, "OrigDataStartFrame")?;
    let orig_num_frames = parse_usize(vals[7], 3, "OrigNumFrames")?;
    if !(data_rate > 0.0) {
        return Err(field_err(3, "DataRate", "must be positive"));
    }

    let width = 2 + 3 * num_markers;
    let names_line = cells(get(3)?, width, 4)?;
    if names_line[0].trim() != "Frame#" || names_line[1].trim() != "Time" {
        return Err(IoError::HeaderMismatch {
            line: 4,
            message: "expected `Frame#` and `Time` columns".into(),
        });
    }
    let mut marker_names = Vec::with_capacity(num_markers);
    for m in 0..num_markers {
        let n = names_line[2 + 3 * m].trim();
        if n.is_empty() || !names_line[3 + 3 * m].trim().is_empty() || !names_line[4 + 3 * m].trim().is_empty() {
            return Err(IoError::HeaderMismatch {
                line: 4,
                message: format!("marker name layout broken at marker {}", m + 1),
            });
        }
        marker_names.push(n.to_string());
    }
    let axes_line = cells(get(4)?, width, 5)?;
    for m in 0..num_markers {
        for (k, axis) in ["X", "Y", "Z"].iter().enumerate() {
            let want = format!("{axis}{}", m + 1);
            if axes_line[2 + 3 * m + k].trim() != want {
                return Err(field_err(
                    5,
                    want,
                    format!("found `{}`", axes_line[2 + 3 * m + k].trim()),
                ));
            }
        }
    }

    let mut rows = Vec::with_capacity(num_frames);
    for (i, line) in lines.iter().enumerate().skip(5) {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts = cells(line, width, lineno)?;
        let frame = parse_usize(parts[0], lineno, "Frame#")?;
        let time = parse_f64(parts[1], lineno, "Time")?;
        let mut points = Vec::with_capacity(num_markers);
        for (m, name) in marker_names.iter().enumerate() {
            let c = &parts[2 + 3 * m..5 + 3 * m];
            let empty = c.iter().filter(|s| s.trim().is_empty()).count();
            points.push(match empty {
                3 => None,
                0 => Some([
                    parse_f64(c[0], lineno, name)?,
                    parse_f64(c[1], lineno, name)?,
                    parse_f64(c[2], lineno, name)?,
                ]),
                _ => return Err(field_err(lineno, name.as_str(), "partially missing coordinates")),
            });
        }
        if let Some(first) = rows.first() {
            let first: &TrcRow = first;
            let expect = first.time + (frame as f64 - first.frame as f64) / data_rate;
            if (time - expect).abs() > TIME_TOLERANCE {
                return Err(field_err(
                    lineno,
                    "Time",
                    format!("{time} inconsistent with data rate (expected {expect})"),
                ));
            }
        }
        rows.push(TrcRow { frame, time, points });
    }
    if rows.len() != num_frames {
        return Err(IoError::HeaderMismatch {
            line: 3,
            message: format!("NumFrames {num_frames} but {} data rows", rows.len()),
        });
    }
    Ok(TrcDocument {
        name,
        data_rate,
        camera_rate,
        units,
        orig_data_rate,
        orig_start_frame,
        orig_num_frames,
        marker_names,
        rows,
    })
}

pub fn read_trc_file(path: &Path) -> Result<TrcDocument, IoError> {
    read_trc(&read_text(path)?).map_err(|e| e.in_file(path))
}

/// A motion file as written; rotational values in degrees when
/// `in_degrees`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionDocument {
    pub name: String,
    pub in_degrees: bool,
    pub coordinate_names: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl MotionDocument {
    /// `rotational[c]` selects the columns converted to degrees.
    pub fn from_trajectory(traj: &JointTrajectory, rotational: &[bool], in_degrees: bool, name: &str) -> Self {
        let rows = traj
            .states
            .iter()
            .map(|s| {
                s.values
                    .iter()
                    .zip(rotational)
                    .map(|(&v, &rot)| if in_degrees && rot { v.to_degrees() } else { v })
                    .collect()
            })
            .collect();
        Self {
            name: name.to_string(),
            in_degrees,
            coordinate_names: traj.coordinate_names.clone(),
            times: traj.states.iter().map(|s| s.timestamp).collect(),
            rows,
        }
    }

    /// Values land on `coordinate_names` by column name. Every coordinate
    /// must be present and no other column is allowed.
    pub fn to_trajectory(&self, coordinate_names: &[String], rotational: &[bool]) -> Result<JointTrajectory, IoError> {
        let by_name: HashMap<&str, usize> = self
            .coordinate_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let wanted: HashSet<&str> = coordinate_names.iter().map(String::as_str).collect();
        if let Some(extra) = self.coordinate_names.iter().find(|n| !wanted.contains(n.as_str())) {
            return Err(IoError::UnknownColumn(extra.clone()));
        }
        let cols: Vec<usize> = coordinate_names
            .iter()
            .map(|n| {
                by_name
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| IoError::MissingColumn(n.clone()))
            })
            .collect::<Result<_, _>>()?;
        let states = self
            .rows
            .iter()
            .zip(&self.times)
            .map(|(row, &t)| {
                let values = cols
                    .iter()
                    .zip(rotational)
                    .map(|(&c, &rot)| {
                        if self.in_degrees && rot {
                            row[c].to_radians()
                        } else {
                            row[c]
                        }
                    })
                    .collect();
                JointState::new(values, t)
            })
            .collect();
        Ok(JointTrajectory::new(coordinate_names.to_vec(), states))
    }
}

pub fn write_motion(doc: &MotionDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", doc.name);
    out.push_str("version=1\n");
    let _ = writeln!(out, "nRows={}", doc.rows.len());
    let _ = writeln!(out, "nColumns={}", doc.coordinate_names.len() + 1);
    let _ = writeln!(out, "inDegrees={}", if doc.in_degrees { "yes" } else { "no" });
    out.push_str("endheader\ntime");
    for n in &doc.coordinate_names {
        let _ = write!(out, "\t{n}");
    }
    out.push('\n');
    for (t, row) in doc.times.iter().zip(&doc.rows) {
        out.push_str(&fmt_f64(*t));
        for v in row {
            let _ = write!(out, "\t{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn read_motion(text: &str) -> Result<MotionDocument, IoError> {
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let name = lines.first().map(|s| s.trim().to_string()).unwrap_or_default();
    let mut n_rows = None;
    let mut n_cols = None;
    let mut in_degrees = None;
    let mut i = 1;
    loop {
        let Some(line) = lines.get(i) else {
            return Err(IoError::HeaderMismatch {
                line: i + 1,
                message: "missing `endheader`".into(),
            });
        };
        let line = line.trim();
        i += 1;
        if line == "endheader" {
            break;
        }
        let Some((key, value)) = line.split_once('=') else {
            if line.is_empty() {
                continue;
            }
            return Err(IoError::HeaderMismatch {
                line: i,
                message: format!("expected key=value, found `{line}`"),
            });
        };
        match key.trim() {
            "nRows" => n_rows = Some(parse_usize(value, i, "nRows")?),
            "nColumns" => n_cols = Some(parse_usize(value, i, "nColumns")?),
            "inDegrees" => {
                in_degrees = Some(match value.trim() {
                    "yes" => true,
                    "no" => false,
                    other => return Err(field_err(i, "inDegrees", format!("`{other}` is not yes/no"))),
                })
            }
            _ => {}
        }
    }
    let missing = |k: &str| IoError::HeaderMismatch {
        line: i,
        message: format!("header lacks `{k}`"),
    };
    let n_rows = n_rows.ok_or_else(|| missing("nRows"))?;
    let n_cols = n_cols.ok_or_else(|| missing("nColumns"))?;
    let in_degrees = in_degrees.ok_or_else(|| missing("inDegrees"))?;
    let header_line = i + 1;
    let header = cells(
        lines.get(i).ok_or_else(|| missing("column names"))?,
        n_cols,
        header_line,
    )?;
    if header[0].trim() != "time" {
        return Err(field_err(header_line, "time", "first column must be `time`"));
    }
    let coordinate_names: Vec<String> = header[1..].iter().map(|s| s.trim().to_string()).collect();
    let mut seen = HashSet::new();
    if let Some(dup) = coordinate_names.iter().find(|n| !seen.insert(n.as_str())) {
        return Err(field_err(header_line, dup.as_str(), "duplicate column"));
    }
    let mut times: Vec<f64> = Vec::with_capacity(n_rows);
    let mut rows = Vec::with_capacity(n_rows);
    for (k, line) in lines.iter().enumerate().skip(i + 1) {
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts = cells(line, n_cols, lineno)?;
        let t = parse_f64(parts[0], lineno, "time")?;
        if times.last().is_some_and(|&prev| t <= prev) {
            return Err(field_err(lineno, "time", "times must be strictly increasing"));
        }
        let row = parts[1..]
            .iter()
            .zip(&coordinate_names)
            .map(|(s, n)| parse_f64(s, lineno, n))
            .collect::<Result<Vec<_>, _>>()?;
        times.push(t);
        rows.push(row);
    }
    if rows.len() != n_rows {
        return Err(IoError::HeaderMismatch {
            line: 3,
            message: format!("nRows {n_rows} but {} data rows", rows.len()),
        });
    }
    Ok(MotionDocument {
        name,
        in_degrees,
        coordinate_names,
        times,
        rows,
    })
}

pub fn read_motion_file(path: &Path) -> Result<MotionDocument, IoError> {
    read_motion(&read_text(path)?).map_err(|e| e.in_file(path))
}

/// 2D detections grouped by frame, with optional person boxes per
/// (frame, view).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub frames: Vec<Vec<Observation2D>>,
    pub bboxes: BTreeMap<(usize, String), (f64, f64)>,
}

impl AnnotationSet {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn by_view(&self, frame: usize) -> BTreeMap<&str, Vec<&Observation2D>> {
        let mut out: BTreeMap<&str, Vec<&Observation2D>> = BTreeMap::new();
        for o in &self.frames[frame] {
            out.entry(o.view_id.as_str()).or_default().push(o);
        }
        out
    }

    pub fn bbox(&self, frame: usize, view: &str) -> Result<(f64, f64), IoError> {
        self.bboxes
            .get(&(frame, view.to_string()))
            .copied()
            .ok_or_else(|| IoError::MissingBBox {
                frame,
                view: view.to_string(),
            })
    }

    pub fn views(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> = self.frames.iter().flatten().map(|o| o.view_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }
}

const ANNOTATION_HEADER: [&str; 8] = ["frame", "view", "keypoint", "u", "v", "confidence", "bbox_w", "bbox_h"];

/// Parses an annotation table; keypoint names resolve to indices in
/// `keypoint_names`.
pub fn read_annotations(text: &str, keypoint_names: &[String]) -> Result<AnnotationSet, IoError> {
    let index: HashMap<&str, usize> = keypoint_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| IoError::HeaderMismatch {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != ANNOTATION_HEADER {
        return Err(IoError::HeaderMismatch {
            line: 1,
            message: format!("expected columns {}", ANNOTATION_HEADER.join(" ")),
        });
    }
    let mut set = AnnotationSet::default();
    let mut seen: HashSet<(usize, String, usize)> = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| IoError::HeaderMismatch {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != ANNOTATION_HEADER.len() {
            return Err(IoError::RaggedRow {
                line,
                expected: ANNOTATION_HEADER.len(),
                found: record.len(),
            });
        }
        let frame = parse_usize(&record[0], line, "frame")?;
        let view = record[1].trim().to_string();
        if view.is_empty() {
            return Err(field_err(line, "view", "empty view id"));
        }
        let name = record[2].trim();
        let keypoint = *index.get(name).ok_or_else(|| IoError::UnknownKeypointName {
            line,
            name: name.to_string(),
        })?;
        let u = parse_f64(&record[3], line, "u")?;
        let v = parse_f64(&record[4], line, "v")?;
        let confidence = parse_f64(&record[5], line, "confidence")?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(field_err(line, "confidence", format!("{confidence} outside [0, 1]")));
        }
        let bbox = match (record[6].trim(), record[7].trim()) {
            ("", "") => None,
            (w, h) => Some((parse_f64(w, line, "bbox_w")?, parse_f64(h, line, "bbox_h")?)),
        };
        if !seen.insert((frame, view.clone(), keypoint)) {
            return Err(field_err(line, "keypoint", format!("duplicate record for `{name}`")));
        }
        if let Some(b) = bbox {
            match set.bboxes.get(&(frame, view.clone())) {
                Some(&prev) if prev != b => {
                    return Err(field_err(
                        line,
                        "bbox_w",
                        "box differs from earlier record of this frame and view",
                    ))
                }
                _ => {
                    set.bboxes.insert((frame, view.clone()), b);
                }
            }
        }
        if set.frames.len() <= frame {
            set.frames.resize(frame + 1, Vec::new());
        }
        set.frames[frame].push(Observation2D::new(view, keypoint, Vector2::new(u, v), confidence));
    }
    Ok(set)
}

pub fn read_annotations_file(path: &Path, keypoint_names: &[String]) -> Result<AnnotationSet, IoError> {
    read_annotations(&read_text(path)?, keypoint_names).map_err(|e| e.in_file(path))
}

pub fn write_annotations(set: &AnnotationSet, keypoint_names: &[String]) -> String {
    let mut out = ANNOTATION_HEADER.join("\t");
    out.push('\n');
    for (f, obs) in set.frames.iter().enumerate() {
        for o in obs {
            let bbox = set.bboxes.get(&(f, o.view_id.clone())).map_or_else(
                || "\t".to_string(),
                |(w, h)| format!("{}\t{}", fmt_f64(*w), fmt_f64(*h)),
            );
            let _ = writeln!(
                out,
                "{f}\t{}\t{}\t{}\t{}\t{}\t{bbox}",
                o.view_id,
                keypoint_names[o.keypoint_id],
                fmt_f64(o.position.x),
                fmt_f64(o.position.y),
                fmt_f64(o.confidence)
            );
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    view_id: String,
    width: u32,
    height: u32,
    /// Rows of K.
    intrinsics: [[f64; 3]; 3],
    /// Rows of the world-to-camera rotation.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distortion: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationRecord {
    camera: Vec<CameraRecord>,
}

fn mat_from_rows(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::new(
        r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
    )
}

fn rows_of(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

/// Camera set from a calibration document (`[[camera]]` tables). Nonzero
/// distortion coefficients are ignored with a warning.
pub fn read_calibration(text: &str) -> Result<CameraSet, IoError> {
    let doc: CalibrationRecord = toml::from_str(text).map_err(|e| IoError::Calibration(e.to_string()))?;
    let mut set = CameraSet::new();
    for c in doc.camera {
        if c.distortion.as_ref().is_some_and(|d| d.iter().any(|&k| k != 0.0)) {
            log::warn!("camera `{}`: distortion coefficients ignored", c.view_id);
        }
        let cam = CameraModel::new(
            c.view_id.clone(),
            mat_from_rows(&c.intrinsics),
            mat_from_rows(&c.rotation),
            Vector3::from(c.translation),
            c.width,
            c.height,
        )
        .map_err(|e| IoError::Calibration(e.to_string()))?;
        if set.insert(c.view_id.clone(), cam).is_some() {
            return Err(IoError::Calibration(format!("duplicate view `{}`", c.view_id)));
        }
    }
    if set.is_empty() {
        return Err(IoError::Calibration("no cameras".into()));
    }
    Ok(set)
}

pub fn read_calibration_file(path: &Path) -> Result<CameraSet, IoError> {
    read_calibration(&read_text(path)?).map_err(|e| e.in_file(path))
}

pub fn write_calibration(cameras: &CameraSet) -> String {
    let doc = CalibrationRecord {
        camera: cameras
            .values()
            .map(|c| CameraRecord {
                view_id: c.view_id.clone(),
                width: c.width,
                height: c.height,
                intrinsics: rows_of(&c.intrinsics),
                rotation: rows_of(&c.rotation),
                translation: [c.translation.x, c.translation.y, c.translation.z],
                distortion: None,
            })
            .collect(),
    };
    toml::to_string(&doc).expect("calibration serializes")
}

fn report_header(kind: &str, config_hash: &str) -> String {
    format!("# {kind}\n# config_hash\t{config_hash}\n")
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Metric tables with one row per action plus the pooled mean and one
/// column per evaluation subset.
pub fn format_evaluation_report(report: &EvaluationReport) -> String {
    let mut out = report_header("evaluation", &report.config_hash);
    for table in &report.tables {
        let _ = writeln!(out, "\n[{}]", table.metric);
        out.push_str("action");
        for s in Subset::REPORT_ORDER {
            let _ = write!(out, "\t{}", s.label());
        }
        out.push('\n');
        for row in &table.rows {
            out.push_str(&row.label);
            for v in &row.values {
                let _ = write!(out, "\t{}", cell(*v));
            }
            out.push('\n');
        }
    }
    if !report.scalars.is_empty() {
        out.push_str("\n[scalars]\n");
        for (k, v) in &report.scalars {
            let _ = writeln!(out, "{k}\t{}", cell(Some(*v)));
        }
    }
    out
}

/// Mean ± std curvature per action, degrees.
pub fn format_curvature_report(stats: &[CurvatureStats], config_hash: &str) -> String {
    let mut out = report_header("curvature", config_hash);
    out.push_str("action\tframes\trejected\tlla_mean_deg\tlla_std_deg\ttka_mean_deg\ttka_std_deg\n");
    for s in stats {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            s.action, s.samples, s.rejected, s.lla_mean, s.lla_std, s.tka_mean, s.tka_std
        );
    }
    out
}

pub fn format_curvature_samples(samples: &[CurvatureSample], config_hash: &str) -> String {
    let mut out = report_header("curvature samples", config_hash);
    out.push_str("frame\tsubject\taction\tlla_deg\ttka_deg\tvalid\n");
    for s in samples {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            s.frame, s.subject, s.action, s.lla_deg, s.tka_deg, s.valid as u8
        );
    }
    out
}

pub fn format_rom_report(summaries: &[RomSummary], config_hash: &str) -> String {
    let mut out = report_header("range of motion", config_hash);
    out.push_str("action\tcoordinate\tmin_deg\tmax_deg\trange_deg\n");
    for s in summaries {
        let action = s.action.as_deref().unwrap_or("all");
        for e in &s.entries {
            let _ = writeln!(
                out,
                "{action}\t{}\t{:.4}\t{:.4}\t{:.4}",
                e.coordinate, e.min_deg, e.max_deg, e.range_deg
            );
        }
    }
    out
}

/// One block per neck coordinate, one row per action.
pub fn format_neck_report(blocks: &[NeckRomBlock], config_hash: &str) -> String {
    let mut out = report_header("neck range of motion", config_hash);
    let Some(first) = blocks.first() else {
        return out;
    };
    for (d, dof) in first.dofs.iter().enumerate() {
        let _ = writeln!(out, "\n[{}]", dof.coordinate);
        out.push_str("action\tframes\tmean_deg\tstd_deg\tlow_deg\tmedian_deg\thigh_deg\n");
        for b in blocks {
            let x = &b.dofs[d];
            let _ = writeln!(
                out,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                b.action, b.frames, x.mean, x.std, x.low, x.median, x.high
            );
        }
    }
    out
}

/// Per (frame, keypoint) triangulation status and reprojection errors.
pub fn format_triangulation_residuals(result: &SequenceTriangulation, config_hash: &str) -> String {
    let mut out = report_header("triangulation residuals", config_hash);
    out.push_str("frame\tkeypoint\tstatus\tviews\tinliers\trms_px\tmax_px\n");
    for (f, frame) in result.outcomes.iter().enumerate() {
        for (k, outcome) in frame.iter().enumerate() {
            let name = &result.markers.marker_names[k];
            match outcome {
                Ok((_, r)) => {
                    let _ = writeln!(
                        out,
                        "{f}\t{name}\tok\t{}\t{}\t{:.6}\t{:.6}",
                        r.view_ids.len(),
                        r.inlier_count(),
                        r.rms_error(),
                        r.max_error()
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "{f}\t{name}\tfailed: {e}\t0\t0\t-\t-");
                }
            }
        }
    }
    out
}

/// Per-frame marker RMS and convergence, followed by per-marker RMS over
/// the sequence.
pub fn format_ik_residuals(solution: &IkSolution, marker_names: &[String], config_hash: &str) -> String {
    let mut out = report_header("inverse kinematics residuals", config_hash);
    out.push_str("frame\ttime\trms_m\tconverged\n");
    for (f, rms) in solution.per_frame_rms.iter().enumerate() {
        let _ = writeln!(
            out,
            "{f}\t{}\t{:.9}\t{}",
            fmt_f64(solution.states.states[f].timestamp),
            rms,
            solution.converged[f] as u8
        );
    }
    out.push_str("\nmarker\trms_m\tframes\n");
    for (m, name) in marker_names.iter().enumerate() {
        let r: Vec<f64> = solution.per_marker_residuals.iter().filter_map(|f| f[m]).collect();
        if r.is_empty() {
            let _ = writeln!(out, "{name}\t-\t0");
        } else {
            let rms = (r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64).sqrt();
            let _ = writeln!(out, "{name}\t{rms:.9}\t{}", r.len());
        }
    }
    out
}

/// Per-frame intervertebral and neck rotation triplets, degrees.
pub fn format_rotation_table(
    skeleton: &SkeletonDefinition,
    trajectory: &JointTrajectory,
    config_hash: &str,
) -> Result<String, crate::skeleton::SkeletonError> {
    let mut out = report_header("vertebral rotations", config_hash);
    out.push_str("frame\ttime\tjoint\tflexion_extension_deg\tlateral_bending_deg\taxial_rotation_deg\n");
    for (f, state) in trajectory.states.iter().enumerate() {
        for r in extract_vertebral_rotations(skeleton, state)? {
            let _ = writeln!(
                out,
                "{f}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
                fmt_f64(state.timestamp),
                r.joint,
                r.flexion_extension,
                r.lateral_bending,
                r.axial_rotation
            );
        }
    }
    Ok(out)
}

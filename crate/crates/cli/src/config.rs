//! Pipeline configuration document (TOML) and its provenance hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use spinekin::analytics::CurvatureBounds;
use spinekin::ik::{IkConfig, SmoothOperator};
use spinekin::io::LengthUnit;
use spinekin::metrics::Subset;
use spinekin::skeleton::SkeletonDefinition;
use spinekin::synth::SynthScenario;
use spinekin::temporal::{FilterSpec, MarkerWeights};
use spinekin::triangulation::{TriangulationConfig, TriangulationMethod};

use crate::error::CliError;

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "SPINEKIN_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub output: PathBuf,
    pub calibration: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub skeleton: Option<PathBuf>,
    /// Marker trajectory fed to inverse kinematics.
    pub markers: Option<PathBuf>,
    /// Motion file fed to forward kinematics and analysis.
    pub motion: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub prediction: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            output: PathBuf::from("spinekin-out"),
            calibration: None,
            annotations: None,
            skeleton: None,
            markers: None,
            motion: None,
            ground_truth: None,
            prediction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriangulationSection {
    pub method: String,
    /// Frame rate of the annotation sequence, Hz.
    pub frame_rate: f64,
    pub huber_delta: f64,
    pub max_irls_iterations: usize,
    pub convergence_tol: f64,
    pub min_views: usize,
    pub confidence_floor: f64,
    pub reprojection_reject_threshold: f64,
    pub view_consistency_threshold: f64,
}

impl Default for TriangulationSection {
    fn default() -> Self {
        let d = TriangulationConfig::default();
        Self {
            method: "robust".into(),
            frame_rate: 50.0,
            huber_delta: d.huber_delta,
            max_irls_iterations: d.max_irls_iterations,
            convergence_tol: d.convergence_tol,
            min_views: d.min_views,
            confidence_floor: d.confidence_floor,
            reprojection_reject_threshold: d.reprojection_reject_threshold,
            view_consistency_threshold: d.view_consistency_threshold,
        }
    }
}

impl TriangulationSection {
    pub fn to_config(&self) -> Result<TriangulationConfig, CliError> {
        let method = match self.method.as_str() {
            "robust" => TriangulationMethod::Robust,
            "least_squares" => TriangulationMethod::LeastSquares,
            other => {
                return Err(CliError::Usage(format!(
                    "triangulation.method `{other}` is not robust or least_squares"
                )))
            }
        };
        let c = TriangulationConfig {
            huber_delta: self.huber_delta,
            max_irls_iterations: self.max_irls_iterations,
            convergence_tol: self.convergence_tol,
            min_views: self.min_views,
            confidence_floor: self.confidence_floor,
            reprojection_reject_threshold: self.reprojection_reject_threshold,
            view_consistency_threshold: self.view_consistency_threshold,
            method,
        };
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if !(self.frame_rate > 0.0) {
            return Err(CliError::Usage("triangulation.frame_rate must be positive".into()));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    /// Gap filling and zero-phase low-pass of markers before IK.
    pub enabled: bool,
    pub cutoff: f64,
    pub order: usize,
    /// Longest gap, in frames, bridged by interpolation.
    pub max_gap: usize,
}

impl Default for FilterSection {
    fn default() -> Self {
        let d = FilterSpec::default();
        Self {
            enabled: true,
            cutoff: d.cutoff,
            order: d.order,
            max_gap: 10,
        }
    }
}

impl FilterSection {
    pub fn spec(&self, frame_rate: f64) -> Result<FilterSpec, CliError> {
        FilterSpec::new(self.cutoff, self.order, frame_rate).map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkSection {
    pub lambda_smooth: f64,
    /// `velocity` or `acceleration`.
    pub smooth_operator: String,
    pub window: usize,
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub enforce_limits: bool,
    pub body_weight: f64,
    pub spine_weight: f64,
    /// Per-marker weights overriding the two defaults above.
    pub weights: BTreeMap<String, f64>,
    /// Scale the skeleton to the stature estimated from the markers.
    pub scale_to_subject: bool,
    /// Radians; see the angle clean-up pass after IK.
    pub jump_threshold: f64,
}

impl Default for IkSection {
    fn default() -> Self {
        let d = IkConfig::default();
        Self {
            lambda_smooth: d.lambda_smooth,
            smooth_operator: "acceleration".into(),
            window: d.window,
            max_iterations: d.max_iterations,
            gradient_tol: d.gradient_tol,
            step_tol: d.step_tol,
            enforce_limits: d.enforce_limits,
            body_weight: 1.0,
            spine_weight: 0.5,
            weights: BTreeMap::new(),
            scale_to_subject: false,
            jump_threshold: spinekin::temporal::DEFAULT_JUMP_THRESHOLD,
        }
    }
}

impl IkSection {
    pub fn to_config(&self, skeleton: &SkeletonDefinition) -> Result<IkConfig, CliError> {
        let smooth_operator = match self.smooth_operator.as_str() {
            "velocity" => SmoothOperator::Velocity,
            "acceleration" => SmoothOperator::Acceleration,
            other => {
                return Err(CliError::Usage(format!(
                    "ik.smooth_operator `{other}` is not velocity or acceleration"
                )))
            }
        };
        let mut weights = MarkerWeights::uniform(self.body_weight);
        for m in &skeleton.markers {
            if m.region.is_spine() {
                weights.overrides.insert(m.marker_name.clone(), self.spine_weight);
            }
        }
        for (name, w) in &self.weights {
            if skeleton.marker_index(name).is_none() {
                return Err(CliError::Usage(format!("ik.weights names unknown marker `{name}`")));
            }
            weights.overrides.insert(name.clone(), *w);
        }
        let c = IkConfig {
            marker_weights: weights,
            lambda_smooth: self.lambda_smooth,
            smooth_operator,
            max_iterations: self.max_iterations,
            gradient_tol: self.gradient_tol,
            step_tol: self.step_tol,
            window: self.window,
            enforce_limits: self.enforce_limits,
        };
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }
}

/// One motion file for analysis with its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisInput {
    pub path: PathBuf,
    pub subject: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub subject: String,
    pub action: String,
    /// Percentile trimmed from each end of ROM distributions.
    pub trim: f64,
    pub lla_bounds: [f64; 2],
    pub tka_bounds: [f64; 2],
    pub neck_envelope: [f64; 2],
    /// Also report flag rates against the normative curvature envelopes.
    pub audit: bool,
    /// When non-empty, replaces `paths.motion` with several labelled inputs.
    pub inputs: Vec<AnalysisInput>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let b = CurvatureBounds::default();
        Self {
            subject: "S1".into(),
            action: "default".into(),
            trim: spinekin::analytics::DEFAULT_ROM_TRIM,
            lla_bounds: [b.lla_deg.0, b.lla_deg.1],
            tka_bounds: [b.tka_deg.0, b.tka_deg.1],
            neck_envelope: [
                spinekin::analytics::DEFAULT_NECK_ENVELOPE.0,
                spinekin::analytics::DEFAULT_NECK_ENVELOPE.1,
            ],
            audit: false,
            inputs: Vec::new(),
        }
    }
}

impl AnalysisSection {
    pub fn bounds(&self) -> CurvatureBounds {
        CurvatureBounds {
            lla_deg: (self.lla_bounds[0], self.lla_bounds[1]),
            tka_deg: (self.tka_bounds[0], self.tka_bounds[1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Subset for the 2D scalar metrics (AUC, AP, AR).
    pub subset: String,
    pub spine_sigma: f64,
    /// Subtract the mean of these keypoints per frame before 3D metrics.
    pub root_center: bool,
    pub root: Vec<String>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            subset: "All".into(),
            spine_sigma: spinekin::metrics::DEFAULT_SPINE_SIGMA,
            root_center: false,
            root: vec!["Hip".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// `m` or `mm` for written marker files.
    pub units: String,
    pub log_level: String,
    pub paths: Paths,
    pub triangulation: TriangulationSection,
    pub filter: FilterSection,
    pub ik: IkSection,
    pub analysis: AnalysisSection,
    pub metrics: MetricsSection,
    pub synth: SynthScenario,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            units: "m".into(),
            log_level: "warn".into(),
            paths: Paths::default(),
            triangulation: TriangulationSection::default(),
            filter: FilterSection::default(),
            ik: IkSection::default(),
            analysis: AnalysisSection::default(),
            metrics: MetricsSection::default(),
            synth: SynthScenario::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// SHA-256 over the canonical serialization of every setting that can
    /// change results. File locations and logging are excluded, so moving a
    /// run to another directory keeps its hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths = Paths::default();
        canonical.log_level = String::new();
        let text = toml::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn units(&self) -> Result<LengthUnit, CliError> {
        LengthUnit::parse(&self.units).ok_or_else(|| CliError::Usage(format!("units `{}` is not m or mm", self.units)))
    }

    pub fn subset(&self) -> Result<Subset, CliError> {
        Subset::parse(&self.metrics.subset).ok_or_else(|| {
            CliError::Usage(format!(
                "metrics.subset `{}` is not a known subset",
                self.metrics.subset
            ))
        })
    }

    /// Checks every section that does not depend on input data.
    pub fn validate(&self) -> Result<(), CliError> {
        self.units()?;
        self.subset()?;
        self.triangulation.to_config()?;
        if !matches!(self.filter.order, 2 | 4 | 8) || !(self.filter.cutoff > 0.0) {
            return Err(CliError::Usage(
                "filter needs order 2, 4 or 8 and a positive cutoff".into(),
            ));
        }
        if !matches!(self.ik.smooth_operator.as_str(), "velocity" | "acceleration") {
            return Err(CliError::Usage(format!(
                "ik.smooth_operator `{}` is not velocity or acceleration",
                self.ik.smooth_operator
            )));
        }
        if !(self.ik.body_weight >= 0.0) || !(self.ik.spine_weight >= 0.0) || !(self.ik.jump_threshold > 0.0) {
            return Err(CliError::Usage(
                "ik weights must be non-negative and jump_threshold positive".into(),
            ));
        }
        let a = &self.analysis;
        if !(0.0..50.0).contains(&a.trim) {
            return Err(CliError::Usage(format!("analysis.trim {} outside [0, 50)", a.trim)));
        }
        for (name, b) in [
            ("lla_bounds", a.lla_bounds),
            ("tka_bounds", a.tka_bounds),
            ("neck_envelope", a.neck_envelope),
        ] {
            if !(b[0] <= b[1]) {
                return Err(CliError::Usage(format!("analysis.{name} lower bound exceeds upper")));
            }
        }
        if !(self.metrics.spine_sigma > 0.0) || self.metrics.root.is_empty() {
            return Err(CliError::Usage(
                "metrics needs a positive spine_sigma and at least one root".into(),
            ));
        }
        self.synth.validate().map_err(CliError::from)?;
        Ok(())
    }

    fn under_output(&self, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.paths.output.join(default_name))
    }

    pub fn calibration_path(&self) -> PathBuf {
        self.under_output(&self.paths.calibration, crate::commands::CALIBRATION_FILE)
    }

    pub fn annotations_path(&self) -> PathBuf {
        self.under_output(&self.paths.annotations, crate::commands::ANNOTATIONS_FILE)
    }

    pub fn markers_path(&self) -> PathBuf {
        self.under_output(&self.paths.markers, crate::commands::TRIANGULATED_FILE)
    }

    pub fn motion_path(&self) -> PathBuf {
        self.under_output(&self.paths.motion, crate::commands::IK_MOTION_FILE)
    }

    pub fn ground_truth_path(&self) -> PathBuf {
        self.under_output(&self.paths.ground_truth, crate::commands::GROUND_TRUTH_TRC)
    }

    pub fn prediction_path(&self) -> PathBuf {
        self.under_output(&self.paths.prediction, crate::commands::TRIANGULATED_FILE)
    }

    /// Explicit skeleton, else the model written by `ik`, else the
    /// built-in definition.
    pub fn skeleton_path(&self) -> Option<PathBuf> {
        if let Some(p) = &self.paths.skeleton {
            return Some(p.clone());
        }
        let model = self.paths.output.join(crate::commands::MODEL_FILE);
        model.exists().then_some(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn hash_ignores_paths_but_not_settings() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.paths.output = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.ik.lambda_smooth = 1.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            PipelineConfig::from_toml_str("[ik]\nlamda = 1.0\n"),
            Err(CliError::Usage(_))
        ));
    }
}

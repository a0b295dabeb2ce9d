//! Pinhole cameras, similarity transforms and Procrustes alignment.

use nalgebra::{Matrix3, Matrix3x4, Rotation3, Unit, Vector2, Vector3};
use thiserror::Error;

/// Default minimum camera-frame depth accepted by [`CameraModel::project`].
pub const DEFAULT_DEPTH_EPSILON: f64 = 1e-6;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth {depth} in view {view_id}")]
    NonPositiveDepth { view_id: String, depth: f64 },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("invalid camera {view_id}: {reason}")]
    InvalidCamera { view_id: String, reason: String },
    #[error("point sets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// A calibrated, distortion-free pinhole camera. `rotation` and `translation`
/// map world points into the camera frame: `Xc = R X + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub view_id: String,
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(
        view_id: impl Into<String>,
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let camera = Self {
            view_id: view_id.into(),
            intrinsics,
            rotation,
            translation,
            width,
            height,
        };
        camera.validate()?;
        Ok(camera)
    }

    /// Builds a camera at `center` looking at `target`, with image `up`
    /// roughly aligned to world `up`.
    pub fn look_at(
        view_id: impl Into<String>,
        intrinsics: Matrix3<f64>,
        center: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let view_id = view_id.into();
        let forward = target - center;
        let z = forward
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidCamera {
                view_id: view_id.clone(),
                reason: "camera center coincides with target".into(),
            })?;
        // image y grows downward
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidCamera {
                view_id: view_id.clone(),
                reason: "up vector parallel to viewing direction".into(),
            })?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * center);
        Self::new(view_id, intrinsics, rotation, translation, width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let fail = |reason: String| GeometryError::InvalidCamera {
            view_id: self.view_id.clone(),
            reason,
        };
        let r = &self.rotation;
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(dev < ORTHONORMAL_TOL) {
            return Err(fail(format!("rotation not orthonormal (|RtR - I| = {dev:e})")));
        }
        let det = r.determinant();
        if !((det - 1.0).abs() < ORTHONORMAL_TOL) {
            return Err(fail(format!("rotation determinant {det} != +1")));
        }
        let k = &self.intrinsics;
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(fail("intrinsics focal entries must be positive".into()));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(fail("intrinsics lower-left block must be zero".into()));
        }
        if k[(2, 2)] != 1.0 {
            return Err(fail("intrinsics K[2][2] must be 1".into()));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(fail("translation not finite".into()));
        }
        Ok(())
    }

    /// The 3×4 matrix `K [R | t]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.set_column(3, &self.translation);
        self.intrinsics * rt
    }

    pub fn to_camera_frame(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn project(&self, point: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        self.project_with_epsilon(point, DEFAULT_DEPTH_EPSILON)
    }

    pub fn project_with_epsilon(
        &self,
        point: &Vector3<f64>,
        depth_epsilon: f64,
    ) -> Result<Vector2<f64>, GeometryError> {
        let pc = self.to_camera_frame(point);
        if !(pc.z > depth_epsilon) {
            return Err(GeometryError::NonPositiveDepth {
                view_id: self.view_id.clone(),
                depth: pc.z,
            });
        }
        Ok(self.project_camera_point(&pc))
    }

    fn project_camera_point(&self, pc: &Vector3<f64>) -> Vector2<f64> {
        let k = &self.intrinsics;
        let xn = pc.x / pc.z;
        let yn = pc.y / pc.z;
        Vector2::new(k[(0, 0)] * xn + k[(0, 1)] * yn + k[(0, 2)], k[(1, 1)] * yn + k[(1, 2)])
    }

    /// Projection together with its 2×3 Jacobian with respect to the world point.
    pub fn project_with_jacobian(
        &self,
        point: &Vector3<f64>,
        depth_epsilon: f64,
    ) -> Result<(Vector2<f64>, nalgebra::Matrix2x3<f64>), GeometryError> {
        let pc = self.to_camera_frame(point);
        if !(pc.z > depth_epsilon) {
            return Err(GeometryError::NonPositiveDepth {
                view_id: self.view_id.clone(),
                depth: pc.z,
            });
        }
        let iz = 1.0 / pc.z;
        let dn = nalgebra::Matrix2x3::new(iz, 0.0, -pc.x * iz * iz, 0.0, iz, -pc.y * iz * iz);
        let k2 = self.intrinsics.fixed_view::<2, 2>(0, 0).into_owned();
        let jac = k2 * dn * self.rotation;
        Ok((self.project_camera_point(&pc), jac))
    }

    /// Inverse of projection for a pixel at a known camera-frame depth.
    pub fn backproject(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        let yn = (pixel.y - k[(1, 2)]) / k[(1, 1)];
        let xn = (pixel.x - k[(0, 2)] - k[(0, 1)] * yn) / k[(0, 0)];
        let pc = Vector3::new(xn * depth, yn * depth, depth);
        self.rotation.transpose() * (pc - self.translation)
    }
}

/// `x ↦ scale · rotation · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            scale,
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn apply_all(&self, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    /// `self ∘ other`
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rt = self.rotation.transpose();
        SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }
}

/// Rotation of `angle` radians about `axis` (need not be normalized).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
}

/// Rotation from a rotation vector (axis scaled by angle in radians).
pub fn rotation_vector(v: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*v).into_inner()
}

/// Least-squares similarity (or rigid, when `with_scale` is false) alignment
/// of `source` onto `target`, minimizing `Σ‖s R source_i + t − target_i‖²`.
///
/// Reflections are excluded by flipping the weakest singular direction.
pub fn procrustes_align(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    with_scale: bool,
) -> Result<SimilarityTransform, GeometryError> {
    if source.len() != target.len() {
        return Err(GeometryError::LengthMismatch(source.len(), target.len()));
    }
    let n = source.len();
    if n < 3 {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "need at least 3 point pairs, got {n}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mu_s = source.iter().fold(Vector3::zeros(), |a, p| a + p) * inv_n;
    let mu_t = target.iter().fold(Vector3::zeros(), |a, p| a + p) * inv_n;

    let mut cov = Matrix3::zeros();
    let mut src_cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s - mu_s;
        let dt = t - mu_t;
        cov += dt * ds.transpose();
        src_cov += ds * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov *= inv_n;
    src_cov *= inv_n;
    var_s *= inv_n;

    let src_sv = src_cov.symmetric_eigenvalues();
    let mut sv: Vec<f64> = src_sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(GeometryError::DegenerateConfiguration(
            "source points are collinear or coincident".into(),
        ));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    // singular values are not guaranteed sorted; find the weakest direction
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let weakest = order[2];

    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        d[weakest] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&d) * v_t;
    let scale = if with_scale {
        svd.singular_values.dot(&d) / var_s
    } else {
        1.0
    };
    let translation = mu_t - scale * (rotation * mu_s);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// Root-mean-square residual of `transform(source)` against `target`.
pub fn alignment_rms(transform: &SimilarityTransform, source: &[Vector3<f64>], target: &[Vector3<f64>]) -> f64 {
    let sum: f64 = source
        .iter()
        .zip(target)
        .map(|(s, t)| (transform.apply(s) - t).norm_squared())
        .sum();
    (sum / source.len() as f64).sqrt()
}

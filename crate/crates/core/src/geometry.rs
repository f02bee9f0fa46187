//! Rigid transforms and the two-view matrices built from them.
//!
//! A [`Pose`] named "B in A" carries point coordinates expressed in frame B
//! into frame A: `x_a = R * x_b + t`. The essential matrix is built from the
//! point transform that carries τ0 camera coordinates into τ1 camera
//! coordinates, so that `b1ᵀ E b0 = 0` for every noise-free correspondence.

use nalgebra::{Matrix3, Unit, Vector3};

use crate::camera::PinholeIntrinsics;
use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;
const MIN_TRANSLATION: f64 = 1e-12;

/// Rigid transform in 3D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Validates that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::CalibrationInvalid("translation is not finite".into()));
        }
        Ok(Self { rotation, translation })
    }

    /// Skips validation. Callers guarantee `rotation` is orthonormal.
    pub(crate) fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::from_parts(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::from_parts(Matrix3::identity(), translation)
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Result<Self> {
        Self::new(rotation, Vector3::zeros())
    }

    /// Mounting pose of a camera on a vehicle (x forward, y left, z up).
    ///
    /// `heading` rotates the viewing direction about the vehicle z axis:
    /// 0 looks forward, +π/2 looks left, −π/2 looks right. The camera frame
    /// is z forward, x right, y down.
    pub fn camera_mount(heading: f64, position: Vector3<f64>) -> Self {
        // columns: camera x, y, z axes expressed in the vehicle frame
        let forward = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        Self::from_parts(rot_z(heading) * forward, position)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_parts(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::from_parts(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Row-major 3×4 `[R|t]`.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    pub fn from_row_major_3x4(v: &[f64; 12]) -> Result<Pose> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Pose::new(rotation, Vector3::new(v[3], v[7], v[11]))
    }

    /// Rotation angle of the pose in radians, stable near zero.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::CalibrationInvalid("rotation is not finite".into()));
    }
    let defect = (r.transpose() * r - Matrix3::identity()).abs().max();
    if defect >= ORTHONORMAL_TOL {
        return Err(Error::CalibrationInvalid(format!(
            "rotation is not orthonormal (|RᵀR − I|∞ = {defect:e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() >= ORTHONORMAL_TOL {
        return Err(Error::CalibrationInvalid(format!(
            "rotation determinant is {det}, expected 1"
        )));
    }
    Ok(())
}

pub(crate) fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let sin_vec = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = 0.5 * sin_vec.norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Cross-product matrix: `skew(t) * v == t × v`.
pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Lifted to homogeneous `(u, v, 1)`.
    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Unit line of sight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bearing(Unit<Vector3<f64>>);

impl Bearing {
    /// Normalizes `direction`; `None` for zero or non-finite input.
    pub fn new(direction: Vector3<f64>) -> Option<Self> {
        if !direction.iter().all(|v| v.is_finite()) {
            return None;
        }
        Unit::try_new(direction, f64::MIN_POSITIVE).map(Bearing)
    }

    pub fn direction(&self) -> &Vector3<f64> {
        self.0.as_ref()
    }

    pub fn angle_to(&self, other: &Bearing) -> f64 {
        let d = self.direction();
        let o = other.direction();
        d.cross(o).norm().atan2(d.dot(o))
    }
}

/// `[t]× R` of a point transform with nonzero translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Pixel-domain counterpart of [`EssentialMatrix`] for pinhole cameras.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// `E = [t]× R` for the point transform carrying τ0 camera coordinates into
/// τ1 camera coordinates.
pub fn essential_from_motion(m: &Pose) -> Result<EssentialMatrix> {
    if m.translation.norm() < MIN_TRANSLATION {
        return Err(Error::DegenerateTranslation);
    }
    Ok(EssentialMatrix(skew(&m.translation) * m.rotation))
}

/// `F = K1⁻ᵀ E K0⁻¹`.
pub fn fundamental_from_essential(
    e: &EssentialMatrix,
    k0: &PinholeIntrinsics,
    k1: &PinholeIntrinsics,
) -> FundamentalMatrix {
    FundamentalMatrix(k1.k_inverse().transpose() * e.0 * k0.k_inverse())
}

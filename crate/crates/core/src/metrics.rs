//! Reconstruction-free epipolar error metrics and robust losses.
//!
//! Two residuals are provided:
//!
//! * **GeoLine** — symmetric pixel distance of each point to the epipolar
//!   line induced by its partner, pinhole cameras only.
//! * **AnglePlane** — sine of the angle between the τ1 line of sight and the
//!   epipolar plane with normal `E b0`, usable with any central camera.
//!
//! Energies apply the robust loss per match to the squared residual and sum
//! in a fixed order, so results do not depend on evaluation partitioning.
//! Matches sitting on the epipole are skipped and counted.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::geometry::{Bearing, EssentialMatrix, FundamentalMatrix, PixelPoint};

const DEGENERATE_NORM: f64 = 1e-12;
const BEARING_CONSISTENCY: f64 = 1e-9;

/// A pixel correspondence between τ0 and τ1 with its lines of sight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMatch {
    pixel_t0: PixelPoint,
    pixel_t1: PixelPoint,
    bearing_t0: Bearing,
    bearing_t1: Bearing,
}

impl FeatureMatch {
    /// Lifts both pixels through `model`.
    pub fn new(model: &CameraModel, pixel_t0: PixelPoint, pixel_t1: PixelPoint) -> Result<Self> {
        Ok(Self {
            pixel_t0,
            pixel_t1,
            bearing_t0: model.bearing_from_pixel(&pixel_t0)?,
            bearing_t1: model.bearing_from_pixel(&pixel_t1)?,
        })
    }

    /// Checks that the bearings are the model's images of the pixels.
    pub fn from_parts(
        model: &CameraModel,
        pixel_t0: PixelPoint,
        pixel_t1: PixelPoint,
        bearing_t0: Bearing,
        bearing_t1: Bearing,
    ) -> Result<Self> {
        let m = Self::new(model, pixel_t0, pixel_t1)?;
        if m.bearing_t0.angle_to(&bearing_t0) > BEARING_CONSISTENCY
            || m.bearing_t1.angle_to(&bearing_t1) > BEARING_CONSISTENCY
        {
            return Err(Error::InvalidInput(
                "bearings do not match the camera model's lifting of the pixels".into(),
            ));
        }
        Ok(m)
    }

    pub fn pixel_t0(&self) -> &PixelPoint {
        &self.pixel_t0
    }

    pub fn pixel_t1(&self) -> &PixelPoint {
        &self.pixel_t1
    }

    pub fn bearing_t0(&self) -> &Bearing {
        &self.bearing_t0
    }

    pub fn bearing_t1(&self) -> &Bearing {
        &self.bearing_t1
    }
}

/// Matches observed by one camera of the rig.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    pub camera_id: u32,
    pub matches: Vec<FeatureMatch>,
}

impl MatchSet {
    pub fn new(camera_id: u32, matches: Vec<FeatureMatch>) -> Self {
        Self { camera_id, matches }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    None,
    Cauchy,
    Huber,
    Tukey,
}

/// Robust loss `ρ` applied to squared residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustLoss {
    kind: LossKind,
    width: f64,
}

impl RobustLoss {
    pub fn new(kind: LossKind, width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidInput(format!("loss width must be positive, got {width}")));
        }
        Ok(Self { kind, width })
    }

    pub fn none() -> Self {
        Self {
            kind: LossKind::None,
            width: 1.0,
        }
    }

    pub fn cauchy(width: f64) -> Result<Self> {
        Self::new(LossKind::Cauchy, width)
    }

    pub fn huber(width: f64) -> Result<Self> {
        Self::new(LossKind::Huber, width)
    }

    pub fn tukey(width: f64) -> Result<Self> {
        Self::new(LossKind::Tukey, width)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// `(ρ(s), dρ/ds)` for a squared residual `s ≥ 0`.
    pub fn eval(&self, s: f64) -> (f64, f64) {
        let c2 = self.width * self.width;
        match self.kind {
            LossKind::None => (s, 1.0),
            LossKind::Cauchy => {
                let x = s / c2;
                (c2 * x.ln_1p(), 1.0 / (1.0 + x))
            }
            LossKind::Huber => {
                if s <= c2 {
                    (s, 1.0)
                } else {
                    let r = s.sqrt();
                    (2.0 * self.width * r - c2, self.width / r)
                }
            }
            LossKind::Tukey => {
                if s <= c2 {
                    let q = 1.0 - s / c2;
                    (c2 / 3.0 * (1.0 - q * q * q), q * q)
                } else {
                    (c2 / 3.0, 0.0)
                }
            }
        }
    }
}

impl Default for RobustLoss {
    fn default() -> Self {
        Self {
            kind: LossKind::Cauchy,
            width: 0.0065,
        }
    }
}

pub fn robust_loss_eval(loss: &RobustLoss, squared_residual: f64) -> (f64, f64) {
    loss.eval(squared_residual)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    GeoLine,
    #[default]
    AnglePlane,
}

/// An energy sum and the number of matches left out of it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyTotal {
    pub value: f64,
    pub skipped: usize,
}

fn normalized(m: &Matrix3<f64>) -> Matrix3<f64> {
    let n = m.norm();
    if n > 0.0 {
        m / n
    } else {
        *m
    }
}

/// Signed distance in pixels of `x1` to the epipolar line `F x0`.
pub fn epipolar_line_distance(f: &FundamentalMatrix, x0: &PixelPoint, x1: &PixelPoint) -> Result<f64> {
    line_distance(&normalized(f.matrix()), &x0.homogeneous(), &x1.homogeneous())
}

fn line_distance(f: &Matrix3<f64>, x0: &Vector3<f64>, x1: &Vector3<f64>) -> Result<f64> {
    let line = f * x0;
    let q = line.x.hypot(line.y);
    if !(q >= DEGENERATE_NORM) {
        return Err(Error::EpipoleDegenerate);
    }
    Ok(x1.dot(&line) / q)
}

/// `(d(x1, F x0), d(x0, Fᵀ x1))` for a normalized `F`.
fn geoline_pair(f: &Matrix3<f64>, x0: &Vector3<f64>, x1: &Vector3<f64>) -> Result<[f64; 2]> {
    Ok([line_distance(f, x0, x1)?, line_distance(&f.transpose(), x1, x0)?])
}

pub fn geoline_energy(f: &FundamentalMatrix, set: &MatchSet, loss: &RobustLoss) -> EnergyTotal {
    let f = normalized(f.matrix());
    let mut total = EnergyTotal::default();
    for m in &set.matches {
        match geoline_pair(&f, &m.pixel_t0.homogeneous(), &m.pixel_t1.homogeneous()) {
            Ok([a, b]) => total.value += loss.eval(a * a + b * b).0,
            Err(_) => total.skipped += 1,
        }
    }
    total
}

/// Signed sine of the angle between `b1` and the epipolar plane with normal `E b0`.
pub fn angleplane_residual(e: &EssentialMatrix, b0: &Bearing, b1: &Bearing) -> Result<f64> {
    angleplane(&normalized(e.matrix()), b0.direction(), b1.direction())
}

fn angleplane(e: &Matrix3<f64>, b0: &Vector3<f64>, b1: &Vector3<f64>) -> Result<f64> {
    let normal = e * b0;
    let q = normal.norm();
    if !(q >= DEGENERATE_NORM) {
        return Err(Error::EpipoleDegenerate);
    }
    Ok(b1.dot(&normal) / q)
}

pub fn angleplane_energy(e: &EssentialMatrix, set: &MatchSet, loss: &RobustLoss) -> EnergyTotal {
    let e = normalized(e.matrix());
    let mut total = EnergyTotal::default();
    for m in &set.matches {
        match angleplane(&e, m.bearing_t0.direction(), m.bearing_t1.direction()) {
            Ok(r) => total.value += loss.eval(r * r).0,
            Err(_) => total.skipped += 1,
        }
    }
    total
}

/// Per-match residual components and their derivatives with respect to a
/// set of essential-matrix perturbations.
///
/// For AnglePlane only the first component is used. `de` holds `dE/dθ_k`
/// for the (unnormalized) essential matrix `e`; the derivatives account for
/// the normalization, which is scale invariant anyway.
pub(crate) struct ResidualModel {
    kind: MetricKind,
    // essential (AnglePlane) or fundamental (GeoLine) matrix, unnormalized
    m: Matrix3<f64>,
    dm: Vec<Matrix3<f64>>,
}

impl ResidualModel {
    pub(crate) fn angle_plane(e: Matrix3<f64>, de: Vec<Matrix3<f64>>) -> Self {
        let scale = 1.0 / e.norm();
        Self {
            kind: MetricKind::AnglePlane,
            m: e * scale,
            dm: de.into_iter().map(|d| d * scale).collect(),
        }
    }

    /// `left = K1⁻ᵀ`, `right = K0⁻¹`.
    pub(crate) fn geo_line(e: Matrix3<f64>, de: Vec<Matrix3<f64>>, left: &Matrix3<f64>, right: &Matrix3<f64>) -> Self {
        let f = left * e * right;
        let scale = 1.0 / f.norm();
        Self {
            kind: MetricKind::GeoLine,
            m: f * scale,
            dm: de.into_iter().map(|d| left * d * right * scale).collect(),
        }
    }

    pub(crate) fn residual(&self, m: &FeatureMatch) -> Result<[f64; 2]> {
        match self.kind {
            MetricKind::AnglePlane => Ok([
                angleplane(&self.m, m.bearing_t0.direction(), m.bearing_t1.direction())?,
                0.0,
            ]),
            MetricKind::GeoLine => geoline_pair(&self.m, &m.pixel_t0.homogeneous(), &m.pixel_t1.homogeneous()),
        }
    }

    /// Residual plus `d residual / dθ_k` written into `jac[k]`.
    pub(crate) fn residual_and_jacobian(&self, m: &FeatureMatch, jac: &mut [[f64; 2]]) -> Result<[f64; 2]> {
        match self.kind {
            MetricKind::AnglePlane => {
                let (b0, b1) = (m.bearing_t0.direction(), m.bearing_t1.direction());
                let (r, partials) = quotient_partials(&self.m, &self.dm, b0, b1, |n| n.norm_squared());
                for (j, p) in jac.iter_mut().zip(partials) {
                    *j = [p, 0.0];
                }
                Ok([r?, 0.0])
            }
            MetricKind::GeoLine => {
                let (x0, x1) = (m.pixel_t0.homogeneous(), m.pixel_t1.homogeneous());
                let lateral = |n: &Vector3<f64>| n.x * n.x + n.y * n.y;
                let (d1, p1) = quotient_partials(&self.m, &self.dm, &x0, &x1, lateral);
                let ft = self.m.transpose();
                let dft: Vec<_> = self.dm.iter().map(|d| d.transpose()).collect();
                let (d2, p2) = quotient_partials(&ft, &dft, &x1, &x0, lateral);
                for ((j, a), b) in jac.iter_mut().zip(p1).zip(p2) {
                    *j = [a, b];
                }
                Ok([d1?, d2?])
            }
        }
    }
}

/// `r = y·(M x) / sqrt(norm2(M x))` and its partials along each `dM`.
fn quotient_partials(
    m: &Matrix3<f64>,
    dm: &[Matrix3<f64>],
    x: &Vector3<f64>,
    y: &Vector3<f64>,
    norm2: impl Fn(&Vector3<f64>) -> f64,
) -> (Result<f64>, Vec<f64>) {
    let line = m * x;
    let q2 = norm2(&line);
    let q = q2.sqrt();
    let degenerate = !(q >= DEGENERATE_NORM);
    let num = y.dot(&line);
    let partials = dm
        .iter()
        .map(|d| {
            if degenerate {
                return 0.0;
            }
            let dl = d * x;
            // norm2 is a quadratic form, so d(norm2)/2 = <line, dl> restricted
            let half_dq2 = (norm2(&(line + dl)) - norm2(&(line - dl))) / 4.0;
            y.dot(&dl) / q - num * half_dq2 / (q2 * q)
        })
        .collect();
    let r = if degenerate {
        Err(Error::EpipoleDegenerate)
    } else {
        Ok(num / q)
    };
    (r, partials)
}

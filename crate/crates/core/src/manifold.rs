//! Single-track motion manifold and the multi-camera energy.
//!
//! A frame step of the motion center is an arc of yaw change `γ` and arc
//! length `l` in the vehicle's x–y plane (x forward, y left, z up),
//! optionally tilted by pitch and roll. Each camera sees the same rigid
//! motion conjugated by its extrinsic mounting pose.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::geometry::{rot_x, rot_y, rot_z, skew, Pose};
use crate::metrics::{FeatureMatch, MatchSet, MetricKind, ResidualModel, RobustLoss};

const SERIES_SWITCH: f64 = 1e-6;
const DERIVATIVE_SERIES_SWITCH: f64 = 1e-2;
const MIN_TRANSLATION: f64 = 1e-12;

/// Manifold coordinates, in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    Yaw,
    ArcLength,
    Pitch,
    Roll,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::Yaw, Param::ArcLength, Param::Pitch, Param::Roll];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Which coordinates the optimizer may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeMask {
    pub yaw: bool,
    pub arc_length: bool,
    pub pitch: bool,
    pub roll: bool,
}

impl FreeMask {
    pub const YAW: FreeMask = FreeMask {
        yaw: true,
        arc_length: false,
        pitch: false,
        roll: false,
    };
    pub const YAW_AND_ARC: FreeMask = FreeMask {
        yaw: true,
        arc_length: true,
        pitch: false,
        roll: false,
    };
    pub const NONE: FreeMask = FreeMask {
        yaw: false,
        arc_length: false,
        pitch: false,
        roll: false,
    };
    pub const ALL: FreeMask = FreeMask {
        yaw: true,
        arc_length: true,
        pitch: true,
        roll: true,
    };

    pub fn is_free(&self, p: Param) -> bool {
        match p {
            Param::Yaw => self.yaw,
            Param::ArcLength => self.arc_length,
            Param::Pitch => self.pitch,
            Param::Roll => self.roll,
        }
    }

    pub fn set(&mut self, p: Param, free: bool) {
        match p {
            Param::Yaw => self.yaw = free,
            Param::ArcLength => self.arc_length = free,
            Param::Pitch => self.pitch = free,
            Param::Roll => self.roll = free,
        }
    }

    pub fn free_params(&self) -> Vec<Param> {
        Param::ALL.into_iter().filter(|p| self.is_free(*p)).collect()
    }
}

impl Default for FreeMask {
    fn default() -> Self {
        Self::YAW
    }
}

/// Coordinates on the motion manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    /// Change of heading, radians.
    pub yaw: f64,
    /// Travelled arc length of the motion center, meters.
    pub arc_length: f64,
    pub pitch: f64,
    pub roll: f64,
    pub free: FreeMask,
}

impl MotionParams {
    pub fn new(yaw: f64, arc_length: f64) -> Result<Self> {
        Self {
            yaw,
            arc_length,
            pitch: 0.0,
            roll: 0.0,
            free: FreeMask::default(),
        }
        .validated()
    }

    pub fn with_free(mut self, free: FreeMask) -> Self {
        self.free = free;
        self
    }

    pub fn with_tilt(mut self, pitch: f64, roll: f64) -> Result<Self> {
        self.pitch = pitch;
        self.roll = roll;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let values = [self.yaw, self.arc_length, self.pitch, self.roll];
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("motion parameters must be finite".into()));
        }
        if self.yaw.abs() >= std::f64::consts::PI {
            return Err(Error::InvalidInput(format!(
                "yaw change {} exceeds a half turn",
                self.yaw
            )));
        }
        Ok(self)
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::Yaw => self.yaw,
            Param::ArcLength => self.arc_length,
            Param::Pitch => self.pitch,
            Param::Roll => self.roll,
        }
    }

    pub fn set(&mut self, p: Param, value: f64) {
        match p {
            Param::Yaw => self.yaw = value,
            Param::ArcLength => self.arc_length = value,
            Param::Pitch => self.pitch = value,
            Param::Roll => self.roll = value,
        }
    }

    pub fn num_free(&self) -> usize {
        self.free.free_params().len()
    }
}

/// `sin γ / γ`
fn arc_x(g: f64) -> f64 {
    if g.abs() < SERIES_SWITCH {
        let g2 = g * g;
        1.0 - g2 / 6.0 + g2 * g2 / 120.0
    } else {
        g.sin() / g
    }
}

/// `(1 − cos γ) / γ`
fn arc_y(g: f64) -> f64 {
    if g.abs() < SERIES_SWITCH {
        let g2 = g * g;
        g / 2.0 - g * g2 / 24.0 + g * g2 * g2 / 720.0
    } else {
        let h = (0.5 * g).sin();
        2.0 * h * h / g
    }
}

fn arc_x_derivative(g: f64) -> f64 {
    if g.abs() < DERIVATIVE_SERIES_SWITCH {
        let g2 = g * g;
        g * (-1.0 / 3.0 + g2 * (1.0 / 30.0 + g2 * (-1.0 / 840.0 + g2 / 45360.0)))
    } else {
        (g * g.cos() - g.sin()) / (g * g)
    }
}

fn arc_y_derivative(g: f64) -> f64 {
    if g.abs() < DERIVATIVE_SERIES_SWITCH {
        let g2 = g * g;
        0.5 + g2 * (-1.0 / 8.0 + g2 * (1.0 / 144.0 - g2 / 5760.0))
    } else {
        let h = (0.5 * g).sin();
        (g * g.sin() - 2.0 * h * h) / (g * g)
    }
}

/// Pose of the τ1 motion center in the τ0 motion-center frame.
///
/// Translation is the planar arc `(l·sin γ/γ, l·(1 − cos γ)/γ, 0)`,
/// rotation is `Rz(γ)·Ry(pitch)·Rx(roll)`.
pub fn pose_from_params(p: &MotionParams) -> Pose {
    let rotation = rot_z(p.yaw) * rot_y(p.pitch) * rot_x(p.roll);
    let translation = Vector3::new(p.arc_length * arc_x(p.yaw), p.arc_length * arc_y(p.yaw), 0.0);
    Pose::from_parts(rotation, translation)
}

/// Derivatives of rotation and translation of [`pose_from_params`] with
/// respect to each of [`Param::ALL`].
pub(crate) fn pose_derivatives(p: &MotionParams) -> [(Matrix3<f64>, Vector3<f64>); 4] {
    let (rz, ry, rx) = (rot_z(p.yaw), rot_y(p.pitch), rot_x(p.roll));
    let (sz, cz) = p.yaw.sin_cos();
    let (sy, cy) = p.pitch.sin_cos();
    let (sx, cx) = p.roll.sin_cos();
    let drz = Matrix3::new(-sz, -cz, 0.0, cz, -sz, 0.0, 0.0, 0.0, 0.0);
    let dry = Matrix3::new(-sy, 0.0, cy, 0.0, 0.0, 0.0, -cy, 0.0, -sy);
    let drx = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sx, -cx, 0.0, cx, -sx);
    let l = p.arc_length;
    [
        (
            drz * ry * rx,
            Vector3::new(l * arc_x_derivative(p.yaw), l * arc_y_derivative(p.yaw), 0.0),
        ),
        (Matrix3::zeros(), Vector3::new(arc_x(p.yaw), arc_y(p.yaw), 0.0)),
        (rz * dry * rx, Vector3::zeros()),
        (rz * ry * drx, Vector3::zeros()),
    ]
}

/// `extrinsic⁻¹ · motion · extrinsic`: the motion center's step seen from a
/// camera mounted at `extrinsic` (camera pose in the vehicle frame).
pub fn conjugate_to_camera(motion: &Pose, extrinsic: &Pose) -> Pose {
    extrinsic.inverse().compose(motion).compose(extrinsic)
}

/// Point transform from τ0 into τ1 camera coordinates, the input of
/// [`crate::geometry::essential_from_motion`].
pub fn camera_point_transform(motion: &Pose, extrinsic: &Pose) -> Pose {
    conjugate_to_camera(motion, extrinsic).inverse()
}

pub fn pack_free(p: &MotionParams) -> DVector<f64> {
    DVector::from_iterator(p.num_free(), p.free.free_params().into_iter().map(|k| p.get(k)))
}

pub fn unpack_free(v: &DVector<f64>, template: &MotionParams) -> Result<MotionParams> {
    let free = template.free.free_params();
    if v.len() != free.len() {
        return Err(Error::DimensionMismatch {
            expected: free.len(),
            got: v.len(),
        });
    }
    let mut out = *template;
    for (k, value) in free.into_iter().zip(v.iter()) {
        out.set(k, *value);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

/// One camera of the rig.
#[derive(Debug, Clone, PartialEq)]
pub struct RigCamera {
    pub id: u32,
    pub model: CameraModel,
    /// Pose of the camera in the vehicle (motion center) frame.
    pub extrinsic: Pose,
    /// Valid pixel area `[0, width) × [0, height)`; generic models use their
    /// table extent when absent.
    pub image_size: Option<ImageSize>,
}

impl RigCamera {
    pub fn new(id: u32, model: CameraModel, extrinsic: Pose) -> Self {
        Self {
            id,
            model,
            extrinsic,
            image_size: None,
        }
    }

    pub fn with_image_size(mut self, width: f64, height: f64) -> Self {
        self.image_size = Some(ImageSize { width, height });
        self
    }

    /// `(u_min, v_min, u_max, v_max)` of the visible image.
    pub fn image_bounds(&self) -> (f64, f64, f64, f64) {
        match (&self.image_size, &self.model) {
            (Some(s), _) => (0.0, 0.0, s.width, s.height),
            (None, CameraModel::Generic(g)) => g.extent(),
            (None, CameraModel::Pinhole(k)) => (0.0, 0.0, 2.0 * k.cx, 2.0 * k.cy),
        }
    }
}

/// Rigidly mounted cameras sharing one motion center.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<RigCamera>,
}

impl CameraRig {
    pub fn new(cameras: Vec<RigCamera>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::CalibrationInvalid("rig has no cameras".into()));
        }
        for (i, c) in cameras.iter().enumerate() {
            if cameras[..i].iter().any(|o| o.id == c.id) {
                return Err(Error::CalibrationInvalid(format!("duplicate camera id {}", c.id)));
            }
        }
        Ok(Self { cameras })
    }

    pub fn single(model: CameraModel, extrinsic: Pose) -> Self {
        Self {
            cameras: vec![RigCamera::new(0, model, extrinsic)],
        }
    }

    pub fn cameras(&self) -> &[RigCamera] {
        &self.cameras
    }

    pub fn camera(&self, id: u32) -> Result<&RigCamera> {
        self.cameras.iter().find(|c| c.id == id).ok_or(Error::UnknownCamera(id))
    }
}

/// Per-match residual components, `None` for skipped matches.
pub type Residuals = Vec<Option<[f64; 2]>>;

/// Robust energy of one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub energy: f64,
    pub skipped: usize,
    pub residuals: Residuals,
}

/// Gradient and Gauss-Newton curvature of the robust energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub energy: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub skipped: usize,
}

/// The multi-camera objective: a rig, its matches, a loss and a metric.
#[derive(Debug, Clone, Copy)]
pub struct RigProblem<'a> {
    pub rig: &'a CameraRig,
    pub match_sets: &'a [MatchSet],
    pub loss: RobustLoss,
    pub metric: MetricKind,
}

impl<'a> RigProblem<'a> {
    pub fn new(rig: &'a CameraRig, match_sets: &'a [MatchSet], loss: RobustLoss, metric: MetricKind) -> Result<Self> {
        for set in match_sets {
            let cam = rig.camera(set.camera_id)?;
            if metric == MetricKind::GeoLine && cam.model.pinhole().is_none() {
                return Err(Error::MetricRequiresPinhole(cam.id));
            }
        }
        Ok(Self {
            rig,
            match_sets,
            loss,
            metric,
        })
    }

    pub fn num_matches(&self) -> usize {
        self.match_sets.iter().map(MatchSet::len).sum()
    }

    fn matches(&self) -> impl Iterator<Item = (usize, &'a FeatureMatch)> + 'a {
        self.match_sets
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.matches.iter().map(move |m| (i, m)))
    }

    /// Residual model per match set; `None` where the camera's translation
    /// vanishes. `params` selects which derivatives are attached.
    fn models(&self, p: &MotionParams, params: &[Param]) -> Result<Vec<Option<ResidualModel>>> {
        let motion = pose_from_params(p);
        let derivs = if params.is_empty() {
            None
        } else {
            Some(pose_derivatives(p))
        };
        let mut any_valid = false;
        let mut any_matches = false;
        let mut out = Vec::with_capacity(self.match_sets.len());
        for set in self.match_sets {
            let cam = self.rig.camera(set.camera_id)?;
            any_matches |= !set.is_empty();
            let point = camera_point_transform(&motion, &cam.extrinsic);
            if point.translation().norm() < MIN_TRANSLATION {
                out.push(None);
                continue;
            }
            any_valid |= !set.is_empty();
            let e = skew(point.translation()) * point.rotation();
            let de = match &derivs {
                Some(d) => params
                    .iter()
                    .map(|k| essential_derivative(&motion, &d[k.index()], &cam.extrinsic))
                    .collect(),
                None => Vec::new(),
            };
            let model = match self.metric {
                MetricKind::AnglePlane => ResidualModel::angle_plane(e, de),
                MetricKind::GeoLine => {
                    let k = cam.model.pinhole().ok_or(Error::MetricRequiresPinhole(cam.id))?;
                    let kinv = k.k_inverse();
                    ResidualModel::geo_line(e, de, &kinv.transpose(), &kinv)
                }
            };
            out.push(Some(model));
        }
        if any_matches && !any_valid {
            return Err(Error::DegenerateTranslation);
        }
        Ok(out)
    }

    pub fn residuals(&self, p: &MotionParams) -> Result<Residuals> {
        let models = self.models(p, &[])?;
        Ok(self
            .matches()
            .map(|(i, m)| models[i].as_ref().and_then(|model| model.residual(m).ok()))
            .collect())
    }

    pub fn evaluate(&self, p: &MotionParams) -> Result<Evaluation> {
        let residuals = self.residuals(p)?;
        let mut energy = 0.0;
        let mut skipped = 0;
        for r in &residuals {
            match r {
                Some([a, b]) => energy += self.loss.eval(a * a + b * b).0,
                None => skipped += 1,
            }
        }
        Ok(Evaluation {
            energy,
            skipped,
            residuals,
        })
    }

    pub fn energy(&self, p: &MotionParams) -> Result<f64> {
        Ok(self.evaluate(p)?.energy)
    }

    /// Analytic gradient and Gauss-Newton curvature over `params`.
    pub fn linearize_analytic(&self, p: &MotionParams, params: &[Param]) -> Result<Linearization> {
        let models = self.models(p, params)?;
        let n = params.len();
        let mut lin = Linearization {
            energy: 0.0,
            gradient: DVector::zeros(n),
            hessian: DMatrix::zeros(n, n),
            skipped: 0,
        };
        let mut jac = vec![[0.0; 2]; n];
        for (i, m) in self.matches() {
            let Some(model) = &models[i] else {
                lin.skipped += 1;
                continue;
            };
            let Ok(r) = model.residual_and_jacobian(m, &mut jac) else {
                lin.skipped += 1;
                continue;
            };
            accumulate(&mut lin, &self.loss, &r, &jac);
        }
        Ok(lin)
    }

    /// Same quantities with the residual Jacobian taken by central
    /// differences of step `h · max(1, |θ|)`.
    pub fn linearize_numeric(&self, p: &MotionParams, params: &[Param], h: f64) -> Result<Linearization> {
        let base = self.residuals(p)?;
        let n = params.len();
        let mut columns = Vec::with_capacity(n);
        for k in params {
            let step = h * p.get(*k).abs().max(1.0);
            let mut plus = *p;
            plus.set(*k, p.get(*k) + step);
            let mut minus = *p;
            minus.set(*k, p.get(*k) - step);
            let rp = self.residuals(&plus)?;
            let rm = self.residuals(&minus)?;
            let col: Vec<[f64; 2]> = rp
                .iter()
                .zip(&rm)
                .map(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => [(a[0] - b[0]) / (2.0 * step), (a[1] - b[1]) / (2.0 * step)],
                    _ => [0.0, 0.0],
                })
                .collect();
            columns.push(col);
        }
        let mut lin = Linearization {
            energy: 0.0,
            gradient: DVector::zeros(n),
            hessian: DMatrix::zeros(n, n),
            skipped: 0,
        };
        let mut jac = vec![[0.0; 2]; n];
        for (i, r) in base.iter().enumerate() {
            let Some(r) = r else {
                lin.skipped += 1;
                continue;
            };
            for (k, col) in columns.iter().enumerate() {
                jac[k] = col[i];
            }
            accumulate(&mut lin, &self.loss, r, &jac);
        }
        Ok(lin)
    }
}

fn accumulate(lin: &mut Linearization, loss: &RobustLoss, r: &[f64; 2], jac: &[[f64; 2]]) {
    let s = r[0] * r[0] + r[1] * r[1];
    let (value, weight) = loss.eval(s);
    lin.energy += value;
    let n = jac.len();
    for a in 0..n {
        lin.gradient[a] += 2.0 * weight * (r[0] * jac[a][0] + r[1] * jac[a][1]);
        for b in 0..n {
            lin.hessian[(a, b)] += 2.0 * weight * (jac[a][0] * jac[b][0] + jac[a][1] * jac[b][1]);
        }
    }
}

/// `dE` for the camera point transform when the vehicle motion moves along
/// `(dR, dt)`.
fn essential_derivative(motion: &Pose, d: &(Matrix3<f64>, Vector3<f64>), extrinsic: &Pose) -> Matrix3<f64> {
    let re = extrinsic.rotation();
    let te = extrinsic.translation();
    let (dr, dt) = d;
    // camera motion C = Ext⁻¹ T Ext
    let rc = re.transpose() * motion.rotation() * re;
    let tc = re.transpose() * (motion.rotation() * te + motion.translation() - te);
    let drc = re.transpose() * dr * re;
    let dtc = re.transpose() * (dr * te + dt);
    // point transform P = C⁻¹
    let rp = rc.transpose();
    let tp = -(rc.transpose() * tc);
    let drp = drc.transpose();
    let dtp = -(drc.transpose() * tc + rc.transpose() * dtc);
    skew(&dtp) * rp + skew(&tp) * drp
}

/// `Σⱼ E(Xⱼ, Pⱼ⁻¹ M Pⱼ)` over all cameras with matches.
pub fn multi_camera_energy(
    p: &MotionParams,
    rig: &CameraRig,
    match_sets: &[MatchSet],
    loss: &RobustLoss,
    metric: MetricKind,
) -> Result<f64> {
    RigProblem::new(rig, match_sets, *loss, metric)?.energy(p)
}

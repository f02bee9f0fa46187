//! Camera models mapping pixels to lines of sight and back.

use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Bearing, PixelPoint};

/// Pinhole intrinsics `K = [[fx, skew, cx], [0, fy, cy], [0, 0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
}

impl PinholeIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::with_skew(fx, fy, cx, cy, 0.0)
    }

    pub fn with_skew(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, skew };
        if !(fx > 0.0 && fy > 0.0) || ![fx, fy, cx, cy, skew].iter().all(|v| v.is_finite()) {
            return Err(Error::CalibrationInvalid(format!(
                "focal lengths must be positive and finite (fx={fx}, fy={fy})"
            )));
        }
        Ok(k)
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn k_inverse(&self) -> Matrix3<f64> {
        let (fx, fy, cx, cy, s) = (self.fx, self.fy, self.cx, self.cy, self.skew);
        Matrix3::new(
            1.0 / fx,
            -s / (fx * fy),
            (s * cy - cx * fy) / (fx * fy),
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        )
    }

    fn ray(&self, p: &PixelPoint) -> Vector3<f64> {
        let y = (p.v - self.cy) / self.fy;
        let x = (p.u - self.cx - self.skew * y) / self.fx;
        Vector3::new(x, y, 1.0)
    }

    fn project(&self, point: &Vector3<f64>) -> Result<PixelPoint> {
        if !(point.z > 0.0) {
            return Err(Error::BehindCamera(point.z));
        }
        let x = point.x / point.z;
        let y = point.y / point.z;
        Ok(PixelPoint::new(
            self.fx * x + self.skew * y + self.cx,
            self.fy * y + self.cy,
        ))
    }
}

/// Tabulated camera: bearings sampled on a regular pixel grid.
///
/// Bearings between nodes are interpolated bilinearly in the gnomonic
/// projection about `axis` (so any model whose rays are affine in pixels,
/// like a pinhole, is reproduced exactly). Cells reaching within ~84° of
/// being perpendicular to `axis` fall back to interpolating the unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GenericCamera {
    origin: PixelPoint,
    step: f64,
    cols: usize,
    rows: usize,
    axis: Vector3<f64>,
    table: Arc<[Vector3<f64>]>,
}

const GNOMONIC_MIN_COS: f64 = 0.1;
const INVERSE_MAX_ITERATIONS: usize = 50;

impl GenericCamera {
    /// `table` is row-major, `rows * cols` bearings; node `(row, col)` sits at
    /// pixel `(origin.u + col * step, origin.v + row * step)`.
    pub fn new(origin: PixelPoint, step: f64, cols: usize, rows: usize, table: Vec<Vector3<f64>>) -> Result<Self> {
        if cols < 2 || rows < 2 {
            return Err(Error::CalibrationInvalid(
                "bearing table needs at least 2×2 nodes".into(),
            ));
        }
        if !(step > 0.0) || !origin.is_finite() {
            return Err(Error::CalibrationInvalid("bearing table step must be positive".into()));
        }
        if table.len() != cols * rows {
            return Err(Error::DimensionMismatch {
                expected: cols * rows,
                got: table.len(),
            });
        }
        let mut normalized = Vec::with_capacity(table.len());
        for b in table {
            let b = Bearing::new(b)
                .ok_or_else(|| Error::CalibrationInvalid("bearing table contains a zero vector".into()))?;
            normalized.push(*b.direction());
        }
        Ok(Self {
            origin,
            step,
            cols,
            rows,
            axis: Vector3::z(),
            table: normalized.into(),
        })
    }

    /// Samples `f` on the pixel grid.
    pub fn tabulate(
        origin: PixelPoint,
        step: f64,
        cols: usize,
        rows: usize,
        f: impl Fn(&PixelPoint) -> Result<Bearing>,
    ) -> Result<Self> {
        let mut table = Vec::with_capacity(cols * rows);
        for r in 0..rows {
            for c in 0..cols {
                let p = PixelPoint::new(origin.u + c as f64 * step, origin.v + r as f64 * step);
                table.push(*f(&p)?.direction());
            }
        }
        Self::new(origin, step, cols, rows, table)
    }

    pub fn origin(&self) -> PixelPoint {
        self.origin
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn table(&self) -> &[Vector3<f64>] {
        &self.table
    }

    /// Pixel extent `(u_min, v_min, u_max, v_max)` covered by the table.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin.u,
            self.origin.v,
            self.origin.u + (self.cols - 1) as f64 * self.step,
            self.origin.v + (self.rows - 1) as f64 * self.step,
        )
    }

    fn node(&self, row: usize, col: usize) -> &Vector3<f64> {
        &self.table[row * self.cols + col]
    }

    fn grid_coords(&self, p: &PixelPoint) -> Result<(f64, f64)> {
        let gc = (p.u - self.origin.u) / self.step;
        let gr = (p.v - self.origin.v) / self.step;
        let eps = 1e-9;
        if !(gc >= -eps && gr >= -eps && gc <= (self.cols - 1) as f64 + eps && gr <= (self.rows - 1) as f64 + eps) {
            return Err(Error::OutOfDomain);
        }
        Ok((gc, gr))
    }

    fn interpolate(&self, gc: f64, gr: f64) -> Vector3<f64> {
        let c0 = (gc.floor().max(0.0) as usize).min(self.cols - 2);
        let r0 = (gr.floor().max(0.0) as usize).min(self.rows - 2);
        let fc = gc - c0 as f64;
        let fr = gr - r0 as f64;
        let corners = [
            self.node(r0, c0),
            self.node(r0, c0 + 1),
            self.node(r0 + 1, c0),
            self.node(r0 + 1, c0 + 1),
        ];
        let weights = [(1.0 - fc) * (1.0 - fr), fc * (1.0 - fr), (1.0 - fc) * fr, fc * fr];
        let gnomonic = corners.iter().all(|b| b.dot(&self.axis) > GNOMONIC_MIN_COS);
        let mut acc = Vector3::zeros();
        for (b, w) in corners.iter().zip(weights) {
            if gnomonic {
                acc += *b * (w / b.dot(&self.axis));
            } else {
                acc += *b * w;
            }
        }
        acc
    }

    fn bearing(&self, p: &PixelPoint) -> Result<Bearing> {
        let (gc, gr) = self.grid_coords(p)?;
        Bearing::new(self.interpolate(gc, gr)).ok_or(Error::OutOfDomain)
    }

    /// Inverse lookup by Gauss-Newton on the tangent plane of `target`,
    /// started from the closest table node.
    fn pixel(&self, target: &Bearing) -> Result<PixelPoint> {
        let t = target.direction();
        let (best, best_dot) = self
            .table
            .iter()
            .enumerate()
            .map(|(i, b)| (i, b.dot(t)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best_dot <= 0.0 {
            return Err(Error::OutOfDomain);
        }
        // tangent basis at the target
        let helper = if t.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = t.cross(&helper).normalize();
        let e2 = t.cross(&e1);
        let (u_min, v_min, u_max, v_max) = self.extent();
        let clamp = |g: Vector2<f64>| {
            Vector2::new(
                g.x.clamp(0.0, (self.cols - 1) as f64),
                g.y.clamp(0.0, (self.rows - 1) as f64),
            )
        };
        let residual = |g: &Vector2<f64>| -> Option<Vector2<f64>> {
            let b = self.interpolate(g.x, g.y);
            let d = b.dot(t);
            if d <= 0.0 {
                return None;
            }
            let q = b / d;
            Some(Vector2::new(q.dot(&e1), q.dot(&e2)))
        };

        let mut g = Vector2::new((best % self.cols) as f64, (best / self.cols) as f64);
        let h = 1e-6;
        for _ in 0..INVERSE_MAX_ITERATIONS {
            let r = residual(&g).ok_or(Error::OutOfDomain)?;
            // one-sided differences pointing into the domain keep the
            // stencil inside the table at the borders
            let mut jac = Matrix2::zeros();
            for k in 0..2 {
                let mut dg = Vector2::zeros();
                let limit = if k == 0 { self.cols - 1 } else { self.rows - 1 } as f64;
                let sign = if g[k] + h > limit { -1.0 } else { 1.0 };
                dg[k] = sign * h;
                let rp = residual(&(g + dg)).ok_or(Error::OutOfDomain)?;
                jac.set_column(k, &((rp - r) / (sign * h)));
            }
            let delta = jac.lu().solve(&(-r)).ok_or(Error::OutOfDomain)?;
            let next = clamp(g + delta);
            let moved = (next - g).norm();
            g = next;
            if moved * self.step < 1e-12 {
                break;
            }
        }
        let pixel = PixelPoint::new(
            (self.origin.u + g.x * self.step).clamp(u_min, u_max),
            (self.origin.v + g.y * self.step).clamp(v_min, v_max),
        );
        let reached = self.bearing(&pixel)?;
        if reached.angle_to(target) > 1e-9 {
            return Err(Error::OutOfDomain);
        }
        Ok(pixel)
    }
}

/// Maps pixels to lines of sight and 3D points to pixels.
#[derive(Debug, Clone, PartialEq)]
pub enum CameraModel {
    Pinhole(PinholeIntrinsics),
    Generic(GenericCamera),
}

impl CameraModel {
    pub fn bearing_from_pixel(&self, p: &PixelPoint) -> Result<Bearing> {
        if !p.is_finite() {
            return Err(Error::OutOfDomain);
        }
        match self {
            CameraModel::Pinhole(k) => Bearing::new(k.ray(p)).ok_or(Error::OutOfDomain),
            CameraModel::Generic(g) => g.bearing(p),
        }
    }

    /// Projects a point given in camera coordinates.
    pub fn project(&self, point: &Vector3<f64>) -> Result<PixelPoint> {
        match self {
            CameraModel::Pinhole(k) => k.project(point),
            CameraModel::Generic(g) => {
                let b = Bearing::new(*point).ok_or(Error::OutOfDomain)?;
                g.pixel(&b)
            }
        }
    }

    pub fn pinhole(&self) -> Option<&PinholeIntrinsics> {
        match self {
            CameraModel::Pinhole(k) => Some(k),
            CameraModel::Generic(_) => None,
        }
    }
}

pub fn bearing_from_pixel(model: &CameraModel, p: &PixelPoint) -> Result<Bearing> {
    model.bearing_from_pixel(p)
}

pub fn project(model: &CameraModel, point: &Vector3<f64>) -> Result<PixelPoint> {
    model.project(point)
}

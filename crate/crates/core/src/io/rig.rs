//! Rig calibration files and bearing tables.
//!
//! ```text
//! [camera]
//! id = 0
//! model = pinhole
//! intrinsics = 700 700 640 360 0     # fx fy cx cy [skew]
//! size = 1280 720                    # optional image size
//! extrinsic = 1 0 0 0 0 1 0 0 0 0 1 0 # row-major [R|t], camera in vehicle
//!
//! [camera]
//! id = 1
//! model = generic
//! table = side.table                 # relative to the rig file
//! mount = 90 2 1 1.2                 # heading (deg) and position, instead of extrinsic
//! ```
//!
//! A bearing table starts with `u0 v0 step cols rows` followed by
//! `rows · cols` lines `x y z` in row-major order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use super::kv::{Document, Section};
use crate::camera::{CameraModel, GenericCamera, PinholeIntrinsics};
use crate::error::{Error, Result};
use crate::geometry::{PixelPoint, Pose};
use crate::manifold::{CameraRig, RigCamera};

pub(crate) const CAMERA_KEYS: &[&str] = &["id", "model", "intrinsics", "size", "table", "extrinsic", "mount"];

/// Checks orthonormality and handedness with a tolerance suited to
/// printed calibration values.
pub fn extrinsic_from_row_major(values: &[f64]) -> Result<Pose> {
    let v: [f64; 12] = values.try_into().map_err(|_| Error::DimensionMismatch {
        expected: 12,
        got: values.len(),
    })?;
    let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let t = Vector3::new(v[3], v[7], v[11]);
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    if ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
        return Err(Error::CalibrationInvalid(format!(
            "extrinsic rotation is not a proper rotation (|RᵀR - I| = {ortho:.3e}, det = {:.6})",
            r.determinant()
        )));
    }
    if let Ok(p) = Pose::new(r, t) {
        return Ok(p);
    }
    // re-orthonormalize so the strict pose invariant holds
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    Pose::new(u * vt, t)
}

pub(crate) fn parse_camera(doc: &Document, s: &Section, base: &Path) -> Result<RigCamera> {
    let id: u32 = s.require(doc, "id")?.parse(doc)?;
    let model_entry = s.require(doc, "model")?;
    let model = match model_entry.value.as_str() {
        "pinhole" => {
            let k = s.require(doc, "intrinsics")?;
            let v = k.reals(doc, Some(&[4, 5]))?;
            let skew = v.get(4).copied().unwrap_or(0.0);
            CameraModel::Pinhole(
                PinholeIntrinsics::with_skew(v[0], v[1], v[2], v[3], skew)
                    .map_err(|e| doc.error(k.line, e.to_string()))?,
            )
        }
        "generic" => {
            let t = s.require(doc, "table")?;
            let path = base.join(&t.value);
            CameraModel::Generic(read_table(&path)?)
        }
        other => {
            return Err(doc.error(model_entry.line, format!("unknown camera model `{other}`")));
        }
    };
    let extrinsic = match (s.get(doc, "extrinsic")?, s.get(doc, "mount")?) {
        (Some(e), None) => extrinsic_from_row_major(&e.reals(doc, Some(&[12]))?)?,
        (None, Some(m)) => {
            let v = m.reals(doc, Some(&[4]))?;
            Pose::camera_mount(v[0].to_radians(), Vector3::new(v[1], v[2], v[3]))
        }
        _ => return Err(doc.error(s.line, "camera needs exactly one of `extrinsic` or `mount`")),
    };
    let mut cam = RigCamera::new(id, model, extrinsic);
    if let Some(size) = s.get(doc, "size")? {
        let v = size.reals(doc, Some(&[2]))?;
        if !(v[0] > 0.0 && v[1] > 0.0) {
            return Err(doc.error(size.line, "image size must be positive"));
        }
        cam = cam.with_image_size(v[0], v[1]);
    }
    Ok(cam)
}

pub(crate) fn rig_from_document(doc: &Document) -> Result<CameraRig> {
    let base = doc.path.parent().map(Path::to_path_buf).unwrap_or_default();
    let cameras = doc
        .sections("camera")
        .map(|s| parse_camera(doc, s, &base))
        .collect::<Result<Vec<_>>>()?;
    if cameras.is_empty() {
        return Err(doc.error(1, "no [camera] block"));
    }
    CameraRig::new(cameras)
}

pub fn load_rig(path: &Path) -> Result<CameraRig> {
    let doc = Document::read(path)?;
    doc.check_known(&[("camera", CAMERA_KEYS)])?;
    rig_from_document(&doc)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
}

/// `[camera]` blocks; generic tables are written next to `path` as
/// `<stem>_cam<id>.table`.
pub(crate) fn camera_blocks(rig: &CameraRig, path: &Path) -> Result<String> {
    let mut out = String::new();
    for cam in rig.cameras() {
        writeln!(out, "[camera]\nid = {}", cam.id).expect("string write");
        match &cam.model {
            CameraModel::Pinhole(k) => {
                writeln!(
                    out,
                    "model = pinhole\nintrinsics = {}",
                    join(&[k.fx, k.fy, k.cx, k.cy, k.skew])
                )
                .expect("string write");
            }
            CameraModel::Generic(g) => {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("rig");
                let name = format!("{stem}_cam{}.table", cam.id);
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                write_table(g, &dir.join(&name))?;
                writeln!(out, "model = generic\ntable = {name}").expect("string write");
            }
        }
        if let Some(s) = cam.image_size {
            writeln!(out, "size = {}", join(&[s.width, s.height])).expect("string write");
        }
        writeln!(out, "extrinsic = {}\n", join(&cam.extrinsic.to_row_major_3x4())).expect("string write");
    }
    Ok(out)
}

pub fn write_rig(rig: &CameraRig, path: &Path) -> Result<()> {
    let text = camera_blocks(rig, path)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_table(path: &Path) -> Result<GenericCamera> {
    let text = std::fs::read_to_string(path)?;
    let err = |line, msg: String| Error::parse(PathBuf::from(path), line, msg);
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let numbers = |line: usize, l: &str| -> Result<Vec<f64>> {
        l.split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| err(line, format!("`{t}` is not a number")))
            })
            .collect()
    };
    let (hl, header) = lines.next().ok_or_else(|| err(1, "empty bearing table".into()))?;
    let h = numbers(hl, header)?;
    if h.len() != 5 || h[3].fract() != 0.0 || h[4].fract() != 0.0 || h[3] < 0.0 || h[4] < 0.0 {
        return Err(err(hl, "header must be `u0 v0 step cols rows`".into()));
    }
    let (cols, rows) = (h[3] as usize, h[4] as usize);
    let mut table = Vec::with_capacity(cols * rows);
    for (line, l) in lines {
        let v = numbers(line, l)?;
        if v.len() != 3 {
            return Err(err(line, "bearing lines need `x y z`".into()));
        }
        table.push(Vector3::new(v[0], v[1], v[2]));
    }
    GenericCamera::new(PixelPoint::new(h[0], h[1]), h[2], cols, rows, table)
}

pub fn write_table(g: &GenericCamera, path: &Path) -> Result<()> {
    let o = g.origin();
    let mut out = format!("{} {} {} {} {}\n", o.u, o.v, g.step(), g.cols(), g.rows());
    for b in g.table() {
        writeln!(out, "{} {} {}", b.x, b.y, b.z).expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

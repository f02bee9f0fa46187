//! Match lists as CSV: header `t0,t1,camera_id,u0,v0,u1,v1`, one match per
//! line, grouped into frame pairs by consecutive `(t0, t1)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PixelPoint;
use crate::sequence::{FramePairRecord, PixelMatches};

pub const MATCHES_HEADER: [&str; 7] = ["t0", "t1", "camera_id", "u0", "v0", "u1", "v1"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Row {
    t0: u64,
    t1: u64,
    camera_id: u32,
    u0: f64,
    v0: f64,
    u1: f64,
    v1: f64,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::parse(path, line, format!("{kind:?}")),
    }
}

pub fn load_matches(path: &Path) -> Result<Vec<FramePairRecord>> {
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != MATCHES_HEADER {
        return Err(Error::parse(
            path,
            1,
            format!("header must be `{}`", MATCHES_HEADER.join(",")),
        ));
    }
    let mut records: Vec<FramePairRecord> = Vec::new();
    let mut raw = csv::StringRecord::new();
    while reader.read_record(&mut raw).map_err(|e| csv_error(path, e))? {
        let line = raw.position().map_or(0, |p| p.line() as usize);
        let row: Row = raw
            .deserialize(Some(&header))
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        if row.t1 <= row.t0 {
            return Err(Error::parse(path, line, "t1 must be greater than t0"));
        }
        let p0 = PixelPoint::new(row.u0, row.v0);
        let p1 = PixelPoint::new(row.u1, row.v1);
        if !p0.is_finite() || !p1.is_finite() {
            return Err(Error::parse(path, line, "pixel coordinates must be finite"));
        }
        let same = records.last().is_some_and(|r| (r.t0, r.t1) == (row.t0, row.t1));
        if !same {
            if let Some(last) = records.last() {
                if row.t0 <= last.t0 || row.t1 <= last.t1 {
                    return Err(Error::NonMonotoneFrames {
                        path: path.to_path_buf(),
                        line,
                    });
                }
            }
            records.push(FramePairRecord {
                t0: row.t0,
                t1: row.t1,
                cameras: Vec::new(),
            });
        }
        let record = records.last_mut().expect("pushed above");
        let cam = match record.cameras.iter().position(|c| c.camera_id == row.camera_id) {
            Some(i) => &mut record.cameras[i],
            None => {
                record.cameras.push(PixelMatches {
                    camera_id: row.camera_id,
                    pairs: Vec::new(),
                });
                record.cameras.last_mut().expect("pushed above")
            }
        };
        cam.pairs.push((p0, p1));
    }
    Ok(records)
}

pub fn write_matches(records: &[FramePairRecord], path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    writer.write_record(MATCHES_HEADER).map_err(|e| csv_error(path, e))?;
    for r in records {
        for cam in &r.cameras {
            for (p0, p1) in &cam.pairs {
                writer
                    .serialize(Row {
                        t0: r.t0,
                        t1: r.t1,
                        camera_id: cam.camera_id,
                        u0: p0.u,
                        v0: p0.v,
                        u1: p1.u,
                        v1: p1.v,
                    })
                    .map_err(|e| csv_error(path, e))?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

//! KITTI pose lines, scale files and JSON-lines diagnostics.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::TrajectoryRecord;
use crate::geometry::Pose;

fn format_line(values: &[f64]) -> String {
    // `{}` prints the shortest string that parses back to the same bits
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
}

/// One line per frame: row-major `[R|t]`, 12 reals.
pub fn write_trajectory(t: &TrajectoryRecord, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(t.len() * 200);
    for p in &t.poses {
        out.push_str(&format_line(&p.to_row_major_3x4()));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_numbers(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let values = l
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::parse(path, i + 1, format!("`{t}` is not a finite number")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((i + 1, values))
        })
        .collect()
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryRecord> {
    let poses = read_numbers(path)?
        .into_iter()
        .map(|(line, v)| {
            let v: [f64; 12] = v
                .try_into()
                .map_err(|v: Vec<f64>| Error::parse(path, line, format!("expected 12 numbers, found {}", v.len())))?;
            Pose::from_row_major_3x4(&v).map_err(|e| Error::parse(path, line, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryRecord::new(poses))
}

/// One real per line.
pub fn read_reals(path: &Path) -> Result<Vec<f64>> {
    read_numbers(path)?
        .into_iter()
        .map(|(line, v)| match v.as_slice() {
            [x] => Ok(*x),
            _ => Err(Error::parse(path, line, "expected one number per line")),
        })
        .collect()
}

pub fn write_reals(values: &[f64], path: &Path) -> Result<()> {
    let mut out = String::new();
    for v in values {
        out.push_str(&format!("{v}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One JSON object per line.
pub fn write_json_lines<T: Serialize>(items: impl IntoIterator<Item = T>, mut w: impl Write) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

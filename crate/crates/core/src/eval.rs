//! Segment-based relative pose errors in the style of the KITTI odometry
//! benchmark.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

pub const DEFAULT_SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// Absolute poses, one per frame; the first is the identity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    pub poses: Vec<Pose>,
    /// Seconds, one per pose.
    pub timestamps: Option<Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn new(poses: Vec<Pose>) -> Self {
        Self {
            poses,
            timestamps: None,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Cumulative travelled distance at every frame.
    pub fn distances(&self) -> Vec<f64> {
        let mut d = Vec::with_capacity(self.poses.len());
        let mut acc = 0.0;
        for (i, p) in self.poses.iter().enumerate() {
            if i > 0 {
                acc += (p.translation() - self.poses[i - 1].translation()).norm();
            }
            d.push(acc);
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentError {
    pub first_frame: usize,
    pub last_frame: usize,
    pub length: f64,
    pub rotation_deg_per_m: f64,
    pub translation_percent: f64,
    /// Meters per second, when timestamps exist.
    pub speed: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    /// Segment length (m) or bucket center speed (m/s).
    pub key: f64,
    pub count: usize,
    pub rotation_deg_per_m: f64,
    pub translation_percent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub count: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub max_ms: f64,
}

impl RuntimeStats {
    pub fn from_samples(ms: &[f64]) -> Option<Self> {
        if ms.is_empty() {
            return None;
        }
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Some(Self {
            count: n,
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            median_ms: median,
            max_ms: sorted[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub segments: Vec<SegmentError>,
    /// Only lengths with at least one segment.
    pub by_length: Vec<BucketStats>,
    /// Only non-empty speed buckets; empty without timestamps.
    pub by_speed: Vec<BucketStats>,
    pub mean_rotation_deg_per_m: f64,
    pub mean_translation_percent: f64,
    pub runtime: Option<RuntimeStats>,
}

impl EvalReport {
    pub fn with_runtimes(mut self, ms: &[f64]) -> Self {
        self.runtime = RuntimeStats::from_samples(ms);
        self
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket,key,count,rotation_deg_per_m,translation_percent\n");
        for (name, buckets) in [("length", &self.by_length), ("speed", &self.by_speed)] {
            for b in buckets {
                out.push_str(&format!(
                    "{name},{},{},{},{}\n",
                    b.key, b.count, b.rotation_deg_per_m, b.translation_percent
                ));
            }
        }
        out.push_str(&format!(
            "all,,{},{},{}\n",
            self.segments.len(),
            self.mean_rotation_deg_per_m,
            self.mean_translation_percent
        ));
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>10} {:>7} {:>14} {:>12}\n",
            "length[m]", "count", "rot[deg/m]", "trans[%]"
        );
        for b in &self.by_length {
            out.push_str(&format!(
                "{:>10.0} {:>7} {:>14.6} {:>12.4}\n",
                b.key, b.count, b.rotation_deg_per_m, b.translation_percent
            ));
        }
        if !self.by_speed.is_empty() {
            out.push_str(&format!(
                "{:>10} {:>7} {:>14} {:>12}\n",
                "speed[m/s]", "count", "rot[deg/m]", "trans[%]"
            ));
            for b in &self.by_speed {
                out.push_str(&format!(
                    "{:>10.0} {:>7} {:>14.6} {:>12.4}\n",
                    b.key, b.count, b.rotation_deg_per_m, b.translation_percent
                ));
            }
        }
        out.push_str(&format!(
            "{:>10} {:>7} {:>14.6} {:>12.4}\n",
            "all",
            self.segments.len(),
            self.mean_rotation_deg_per_m,
            self.mean_translation_percent
        ));
        if let Some(r) = &self.runtime {
            out.push_str(&format!(
                "runtime per frame: mean {:.3} ms, median {:.3} ms, max {:.3} ms over {} frames\n",
                r.mean_ms, r.median_ms, r.max_ms, r.count
            ));
        }
        out
    }
}

/// First frame whose travelled distance reaches `from + length`.
fn segment_end(dist: &[f64], first: usize, length: f64) -> Option<usize> {
    let target = dist[first] + length;
    // distances are non-decreasing
    let j = first + dist[first..].partition_point(|d| *d < target);
    (j < dist.len()).then_some(j)
}

fn bucket(key: f64, members: &[&SegmentError]) -> Option<BucketStats> {
    if members.is_empty() {
        return None;
    }
    let n = members.len() as f64;
    Some(BucketStats {
        key,
        count: members.len(),
        rotation_deg_per_m: members.iter().map(|s| s.rotation_deg_per_m).sum::<f64>() / n,
        translation_percent: members.iter().map(|s| s.translation_percent).sum::<f64>() / n,
    })
}

/// Relative pose error of `est` against `gt` over every start frame and
/// every segment length. Segment lengths are measured on `gt`.
pub fn evaluate(est: &TrajectoryRecord, gt: &TrajectoryRecord, lengths: &[f64]) -> Result<EvalReport> {
    if est.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.len(),
            got: est.len(),
        });
    }
    if lengths.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidInput("segment lengths must be positive".into()));
    }
    if gt.is_empty() {
        return Err(Error::TrajectoryTooShort);
    }
    let times = gt.timestamps.as_ref().or(est.timestamps.as_ref());
    if let Some(t) = times {
        if t.len() != gt.len() {
            return Err(Error::DimensionMismatch {
                expected: gt.len(),
                got: t.len(),
            });
        }
    }
    let dist = gt.distances();
    let segments: Vec<SegmentError> = (0..gt.len())
        .into_par_iter()
        .flat_map_iter(|first| {
            let dist = &dist;
            lengths.iter().filter_map(move |&length| {
                let last = segment_end(dist, first, length)?;
                let delta_gt = gt.poses[first].inverse().compose(&gt.poses[last]);
                let delta_est = est.poses[first].inverse().compose(&est.poses[last]);
                let error = delta_est.inverse().compose(&delta_gt);
                let speed = times.and_then(|t| {
                    let dt = t[last] - t[first];
                    (dt > 0.0).then(|| length / dt)
                });
                Some(SegmentError {
                    first_frame: first,
                    last_frame: last,
                    length,
                    rotation_deg_per_m: error.rotation_angle().to_degrees() / length,
                    translation_percent: 100.0 * error.translation().norm() / length,
                    speed,
                })
            })
        })
        .collect();
    if segments.is_empty() {
        return Err(Error::TrajectoryTooShort);
    }

    let by_length = lengths
        .iter()
        .filter_map(|&l| {
            let members: Vec<_> = segments.iter().filter(|s| s.length == l).collect();
            bucket(l, &members)
        })
        .collect();
    let by_speed = if times.is_some() {
        (1..=12)
            .filter_map(|k| {
                let center = 2.0 * k as f64;
                let members: Vec<_> = segments
                    .iter()
                    .filter(|s| s.speed.is_some_and(|v| v >= center - 2.0 && v < center + 2.0))
                    .collect();
                bucket(center, &members)
            })
            .collect()
    } else {
        Vec::new()
    };
    let all: Vec<_> = segments.iter().collect();
    let overall = bucket(0.0, &all).expect("segments are non-empty");
    Ok(EvalReport {
        segments,
        by_length,
        by_speed,
        mean_rotation_deg_per_m: overall.rotation_deg_per_m,
        mean_translation_percent: overall.translation_percent,
        runtime: None,
    })
}

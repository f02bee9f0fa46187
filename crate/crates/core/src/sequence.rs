//! Frame-by-frame estimation over a recorded drive.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate, ConditionNote, EstimateResult, EstimatorOptions, GridSpec};
use crate::eval::TrajectoryRecord;
use crate::geometry::PixelPoint;
use crate::manifold::{pose_from_params, CameraRig, FreeMask, MotionParams};
use crate::metrics::{FeatureMatch, MatchSet};
use crate::sim::SimulatedMatches;

/// Pixel matches of one camera between two frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMatches {
    pub camera_id: u32,
    pub pairs: Vec<(PixelPoint, PixelPoint)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePairRecord {
    pub t0: u64,
    pub t1: u64,
    pub cameras: Vec<PixelMatches>,
}

impl FramePairRecord {
    pub fn num_matches(&self) -> usize {
        self.cameras.iter().map(|c| c.pairs.len()).sum()
    }

    pub fn from_simulated(t0: u64, t1: u64, sim: &SimulatedMatches) -> Self {
        Self {
            t0,
            t1,
            cameras: sim
                .match_sets
                .iter()
                .map(|set| PixelMatches {
                    camera_id: set.camera_id,
                    pairs: set.matches.iter().map(|m| (*m.pixel_t0(), *m.pixel_t1())).collect(),
                })
                .collect(),
        }
    }

    /// Lifts the pixels through the rig's camera models. Pixels outside a
    /// model's domain are dropped and counted.
    pub fn to_match_sets(&self, rig: &CameraRig) -> Result<(Vec<MatchSet>, usize)> {
        let mut dropped = 0;
        let mut sets = Vec::with_capacity(self.cameras.len());
        for cam in &self.cameras {
            let model = &rig.camera(cam.camera_id)?.model;
            let matches: Vec<FeatureMatch> = cam
                .pairs
                .iter()
                .filter_map(|(p0, p1)| FeatureMatch::new(model, *p0, *p1).ok())
                .collect();
            dropped += cam.pairs.len() - matches.len();
            sets.push(MatchSet::new(cam.camera_id, matches));
        }
        Ok((sets, dropped))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScaleSource {
    /// Arc length per frame pair, never estimated.
    Fixed(Vec<f64>),
    /// Arc length is free while the prior yaw magnitude reaches
    /// `curve_threshold`; elsewhere it is held at the odometer value or,
    /// without one, at the median arc length estimated over the latest curve.
    /// Curve frames whose scale is unobservable keep the held value.
    FreeInCurves {
        odometer: Option<Vec<f64>>,
        initial_arc_length: f64,
        curve_threshold: f64,
    },
}

impl ScaleSource {
    pub fn free_in_curves(initial_arc_length: f64) -> Self {
        ScaleSource::FreeInCurves {
            odometer: None,
            initial_arc_length,
            curve_threshold: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SequenceOptions {
    pub estimator: EstimatorOptions,
    /// Cold-start grid of the first frame pair.
    pub first_frame_grid: GridSpec,
    pub free_pitch_roll: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub t0: u64,
    pub t1: u64,
    /// Motion used for chaining: the estimate, or the carried prior.
    pub params: MotionParams,
    pub result: Option<EstimateResult>,
    /// Set when the estimate failed and the prior was carried forward.
    pub failure: Option<String>,
    pub dropped_matches: usize,
    pub runtime_ms: f64,
}

impl FrameOutcome {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutput {
    pub trajectory: TrajectoryRecord,
    pub frames: Vec<FrameOutcome>,
}

impl SequenceOutput {
    pub fn num_failed(&self) -> usize {
        self.frames.iter().filter(|f| f.failed()).count()
    }

    pub fn runtimes_ms(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.runtime_ms).collect()
    }
}

/// JSON-lines diagnostics record of one frame pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub t0: u64,
    pub t1: u64,
    pub yaw: f64,
    pub arc_length: f64,
    pub pitch: f64,
    pub roll: f64,
    pub arc_length_free: bool,
    pub energy: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub condition_note: Option<ConditionNote>,
    pub skipped_matches: Option<usize>,
    pub dropped_matches: usize,
    pub failure: Option<String>,
    pub runtime_ms: f64,
}

impl From<&FrameOutcome> for FrameDiagnostics {
    fn from(f: &FrameOutcome) -> Self {
        let r = f.result.as_ref();
        Self {
            t0: f.t0,
            t1: f.t1,
            yaw: f.params.yaw,
            arc_length: f.params.arc_length,
            pitch: f.params.pitch,
            roll: f.params.roll,
            arc_length_free: f.params.free.arc_length,
            energy: r.map(|r| r.final_energy),
            iterations: r.map(|r| r.iterations),
            converged: r.map(|r| r.converged),
            condition_note: r.map(|r| r.condition_note),
            skipped_matches: r.map(|r| r.skipped_matches),
            dropped_matches: f.dropped_matches,
            failure: f.failure.clone(),
            runtime_ms: f.runtime_ms,
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_scale(values: &[f64], n: usize) -> Result<()> {
    if values.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: values.len(),
        });
    }
    if values.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidInput("scale values must be finite".into()));
    }
    Ok(())
}

/// Estimates every frame pair in order, each seeded with the previous
/// result, and chains the motions into an absolute trajectory.
pub fn run_sequence(
    rig: &CameraRig,
    records: &[FramePairRecord],
    scale: &ScaleSource,
    opts: &SequenceOptions,
) -> Result<SequenceOutput> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    opts.estimator.validate()?;
    match scale {
        ScaleSource::Fixed(v) => check_scale(v, records.len())?,
        ScaleSource::FreeInCurves {
            odometer,
            initial_arc_length,
            curve_threshold,
        } => {
            if let Some(v) = odometer {
                check_scale(v, records.len())?;
            }
            if !initial_arc_length.is_finite() || !(*curve_threshold >= 0.0) {
                return Err(Error::InvalidInput("invalid free-in-curves settings".into()));
            }
        }
    }

    let mut previous: Option<MotionParams> = None;
    // arc length held on straights: median of the estimates of the latest curve
    let mut held = match scale {
        ScaleSource::Fixed(v) => v[0],
        ScaleSource::FreeInCurves { initial_arc_length, .. } => *initial_arc_length,
    };
    let mut curve: Vec<f64> = Vec::new();
    let mut poses = vec![crate::geometry::Pose::identity()];
    let mut frames = Vec::with_capacity(records.len());
    for (k, record) in records.iter().enumerate() {
        let start = Instant::now();
        let last = previous.unwrap_or(MotionParams {
            yaw: 0.0,
            arc_length: held,
            pitch: 0.0,
            roll: 0.0,
            free: FreeMask::YAW,
        });
        let (arc_length, arc_free) = match scale {
            ScaleSource::Fixed(v) => (v[k], false),
            ScaleSource::FreeInCurves {
                odometer,
                curve_threshold,
                ..
            } => (
                odometer.as_ref().map_or(held, |v| v[k]),
                previous.is_some() && last.yaw.abs() >= *curve_threshold,
            ),
        };
        let prior = MotionParams {
            arc_length,
            free: FreeMask {
                yaw: true,
                arc_length: arc_free,
                pitch: opts.free_pitch_roll,
                roll: opts.free_pitch_roll,
            },
            ..last
        };
        let mut estimator = opts.estimator;
        if previous.is_none() {
            estimator.fallback_grid = Some(opts.first_frame_grid);
        }
        let mut dropped_matches = 0;
        let outcome = record.to_match_sets(rig).and_then(|(sets, dropped)| {
            dropped_matches = dropped;
            let r = estimate(rig, &sets, &prior, &estimator)?;
            if arc_free && r.condition_note == ConditionNote::ScaleUnobservable {
                // an unobservable scale keeps the held value
                let fixed = MotionParams {
                    free: FreeMask {
                        arc_length: false,
                        ..prior.free
                    },
                    ..prior
                };
                return estimate(rig, &sets, &fixed, &estimator);
            }
            Ok(r)
        });
        let (params, result, failure) = match outcome {
            Ok(r) => (r.params, Some(r), None),
            Err(e) => (prior, None, Some(e.to_string())),
        };
        if params.free.arc_length && failure.is_none() {
            curve.push(params.arc_length);
            held = median(&curve);
        } else {
            curve.clear();
        }
        let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
        let current = *poses.last().expect("non-empty");
        poses.push(current.compose(&pose_from_params(&params)));
        previous = Some(params);
        frames.push(FrameOutcome {
            t0: record.t0,
            t1: record.t1,
            params,
            result,
            failure,
            dropped_matches,
            runtime_ms,
        });
    }
    Ok(SequenceOutput {
        trajectory: TrajectoryRecord::new(poses),
        frames,
    })
}

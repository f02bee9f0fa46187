//! Robust minimization of the multi-camera energy over the free manifold
//! coordinates.
//!
//! The solver is a small Levenberg-Marquardt loop on the robustified
//! energy: residuals are reweighted by `ρ'(s)` to form the Gauss-Newton
//! curvature, and a step is only accepted if the true robust energy drops,
//! so the accepted energy sequence is monotone. Coordinates whose curvature
//! vanishes (the arc length of a single centered camera) are held still.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::manifold::{pose_from_params, CameraRig, MotionParams, Param, RigProblem};
use crate::metrics::{MatchSet, MetricKind, RobustLoss};

/// Relative curvature below which a coordinate is treated as unobservable.
const FLAT_CURVATURE: f64 = 1e-14;
/// `H_ll·l² / H_γγ` below this marks the scale as unobservable.
const SCALE_OBSERVABILITY: f64 = 1e-10;
const FEW_MATCHES: usize = 10;
const MAX_DAMPING: f64 = 1e32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Central differences of the residuals.
    #[default]
    Numeric,
    Analytic,
}

/// Evenly spaced samples `min..=max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(min <= max) || !min.is_finite() || !max.is_finite() {
            return Err(Error::InvalidInput(format!(
                "invalid grid axis {min}..{max} with {steps} steps"
            )));
        }
        Ok(Self { min, max, steps })
    }

    pub fn value(&self, i: usize) -> f64 {
        if self.steps == 1 {
            return self.min;
        }
        self.min + (self.max - self.min) * i as f64 / (self.steps - 1) as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.steps).map(|i| self.value(i)).collect()
    }

    /// Spacing between samples.
    pub fn cell(&self) -> f64 {
        if self.steps < 2 {
            0.0
        } else {
            (self.max - self.min) / (self.steps - 1) as f64
        }
    }
}

/// Cold-start grid over the free coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub yaw: GridAxis,
    /// Only sampled when the arc length is free.
    pub arc_length: Option<GridAxis>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            yaw: GridAxis {
                min: -0.3,
                max: 0.3,
                steps: 41,
            },
            arc_length: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub metric: MetricKind,
    pub loss: RobustLoss,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub fallback_grid: Option<GridSpec>,
    pub damping_init: f64,
    pub jacobian: JacobianMode,
    /// Relative central-difference step of the numeric Jacobian.
    pub jacobian_step: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            metric: MetricKind::AnglePlane,
            loss: RobustLoss::default(),
            max_iterations: 100,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            fallback_grid: None,
            damping_init: 1e-4,
            jacobian: JacobianMode::Numeric,
            jacobian_step: 1e-7,
        }
    }
}

impl EstimatorOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0 && self.step_tolerance > 0.0 && self.damping_init > 0.0) {
            return Err(Error::InvalidInput("tolerances and damping must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        if !(self.jacobian_step > 0.0) {
            return Err(Error::InvalidInput("jacobian_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionNote {
    #[default]
    Ok,
    ScaleUnobservable,
    FewMatches,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub params: MotionParams,
    pub pose: Pose,
    pub final_energy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Signed residual per match in match-set order, `None` when skipped.
    /// AnglePlane: sine of the angle to the epipolar plane. GeoLine: the
    /// symmetric distance `√(d₁² + d₂²)` carrying the sign of `d₁`.
    pub residuals: Vec<Option<f64>>,
    pub skipped_matches: usize,
    pub condition_note: ConditionNote,
    /// Energy at the start point followed by every accepted step.
    pub energy_trace: Vec<f64>,
}

fn tie_break_key(p: &MotionParams) -> (f64, f64) {
    (p.yaw.abs(), p.arc_length)
}

/// Lowest energy wins; ties go to the smallest |γ|, then the smallest l.
pub(crate) fn better(a: (f64, &MotionParams), b: (f64, &MotionParams)) -> bool {
    if a.0 != b.0 {
        return a.0 < b.0;
    }
    tie_break_key(a.1) < tie_break_key(b.1)
}

fn linearize(
    problem: &RigProblem,
    p: &MotionParams,
    free: &[Param],
    opts: &EstimatorOptions,
) -> Result<crate::manifold::Linearization> {
    match opts.jacobian {
        JacobianMode::Analytic => problem.linearize_analytic(p, free),
        JacobianMode::Numeric => problem.linearize_numeric(p, free, opts.jacobian_step),
    }
}

fn step_params(p: &MotionParams, free: &[Param], delta: &DVector<f64>) -> MotionParams {
    let mut out = *p;
    for (k, d) in free.iter().zip(delta.iter()) {
        out.set(*k, p.get(*k) + d);
    }
    out
}

/// Damped Gauss-Newton step on the coordinates with usable curvature.
fn damped_step(g: &DVector<f64>, h: &DMatrix<f64>, lambda: f64) -> Option<DVector<f64>> {
    let n = g.len();
    let max_diag = (0..n).map(|i| h[(i, i)]).fold(0.0, f64::max);
    let active: Vec<usize> = (0..n)
        .filter(|&i| h[(i, i)] > FLAT_CURVATURE * max_diag && h[(i, i)] > 0.0)
        .collect();
    let mut delta = DVector::zeros(n);
    if active.is_empty() {
        return Some(delta);
    }
    let m = active.len();
    let mut a = DMatrix::zeros(m, m);
    let mut b = DVector::zeros(m);
    for (i, &ai) in active.iter().enumerate() {
        b[i] = -g[ai];
        for (j, &aj) in active.iter().enumerate() {
            a[(i, j)] = h[(ai, aj)];
        }
        a[(i, i)] += lambda * h[(ai, ai)];
    }
    let x = a.cholesky()?.solve(&b);
    for (i, &ai) in active.iter().enumerate() {
        delta[ai] = x[i];
    }
    Some(delta)
}

fn candidate_energy(problem: &RigProblem, p: &MotionParams) -> f64 {
    if p.validated().is_err() {
        return f64::INFINITY;
    }
    problem.energy(p).unwrap_or(f64::INFINITY)
}

/// Exhaustive evaluation of the cold-start grid around `template`.
fn grid_start(problem: &RigProblem, template: &MotionParams, grid: &GridSpec) -> Option<(f64, MotionParams)> {
    let yaws = if template.free.yaw {
        grid.yaw.values()
    } else {
        vec![template.yaw]
    };
    let arcs = match (template.free.arc_length, grid.arc_length) {
        (true, Some(axis)) => axis.values(),
        _ => vec![template.arc_length],
    };
    let cells: Vec<MotionParams> = yaws
        .iter()
        .flat_map(|&y| {
            arcs.iter().map(move |&l| {
                let mut p = *template;
                p.yaw = y;
                p.arc_length = l;
                p
            })
        })
        .collect();
    let energies: Vec<f64> = cells.par_iter().map(|p| candidate_energy(problem, p)).collect();
    let mut best: Option<(f64, MotionParams)> = None;
    for (e, p) in energies.into_iter().zip(cells) {
        if !e.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(be, bp)| better((e, &p), (*be, bp))) {
            best = Some((e, p));
        }
    }
    best
}

/// Locally minimizes the multi-camera energy over `prior.free`, starting
/// from `prior` (or from the cold-start grid when it is better).
pub fn estimate(
    rig: &CameraRig,
    match_sets: &[MatchSet],
    prior: &MotionParams,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    opts.validate()?;
    let prior = prior.validated()?;
    let problem = RigProblem::new(rig, match_sets, opts.loss, opts.metric)?;
    if problem.num_matches() == 0 {
        return Err(Error::NoMatches);
    }
    let free = prior.free.free_params();

    let mut current = prior;
    let mut energy = match problem.energy(&prior) {
        Ok(e) => e,
        Err(Error::DegenerateTranslation) if opts.fallback_grid.is_some() => f64::INFINITY,
        Err(e) => return Err(e),
    };
    if let Some(grid) = &opts.fallback_grid {
        if let Some((e, p)) = grid_start(&problem, &prior, grid) {
            if better((e, &p), (energy, &current)) {
                current = p;
                energy = e;
            }
        }
    }
    if !energy.is_finite() {
        return Err(Error::DegenerateTranslation);
    }

    let mut trace = vec![energy];
    let mut iterations = 0;
    let mut converged = false;
    let mut lambda = opts.damping_init;
    let mut gradient_norm = 0.0;

    if !free.is_empty() {
        let mut lin = linearize(&problem, &current, &free, opts)?;
        'outer: while iterations < opts.max_iterations {
            gradient_norm = lin.gradient.norm();
            if gradient_norm <= opts.gradient_tolerance {
                converged = true;
                break;
            }
            iterations += 1;
            loop {
                let Some(delta) = damped_step(&lin.gradient, &lin.hessian, lambda) else {
                    lambda *= 10.0;
                    if lambda > MAX_DAMPING {
                        break 'outer;
                    }
                    continue;
                };
                if delta.norm() <= opts.step_tolerance {
                    converged = true;
                    break 'outer;
                }
                let candidate = step_params(&current, &free, &delta);
                let e = candidate_energy(&problem, &candidate);
                if e < energy {
                    current = candidate;
                    energy = e;
                    trace.push(e);
                    lambda = (lambda * 0.1).max(1e-15);
                    lin = linearize(&problem, &current, &free, opts)?;
                    break;
                }
                lambda *= 10.0;
                if lambda > MAX_DAMPING {
                    break 'outer;
                }
            }
        }
        if converged || iterations >= opts.max_iterations {
            gradient_norm = lin.gradient.norm();
        }
    } else {
        converged = true;
    }

    let eval = problem.evaluate(&current)?;
    let residuals = eval
        .residuals
        .iter()
        .map(|r| {
            r.map(|[a, b]| {
                if b == 0.0 {
                    a
                } else {
                    (a * a + b * b).sqrt().copysign(a)
                }
            })
        })
        .collect();
    let used = problem.num_matches() - eval.skipped;
    let condition_note = if current.free.arc_length && scale_unobservable(&problem, &current)? {
        ConditionNote::ScaleUnobservable
    } else if used < FEW_MATCHES {
        ConditionNote::FewMatches
    } else {
        ConditionNote::Ok
    };

    Ok(EstimateResult {
        pose: pose_from_params(&current),
        params: current,
        final_energy: eval.energy,
        iterations,
        converged,
        gradient_norm,
        residuals,
        skipped_matches: eval.skipped,
        condition_note,
        energy_trace: trace,
    })
}

/// Compares the energy's curvature along the arc length (relative to the
/// current length) with its curvature along yaw.
fn scale_unobservable(problem: &RigProblem, p: &MotionParams) -> Result<bool> {
    let lin = problem.linearize_analytic(p, &[Param::Yaw, Param::ArcLength])?;
    let h_yaw = lin.hessian[(0, 0)];
    let h_arc = lin.hessian[(1, 1)] * p.arc_length.powi(2).max(1e-12);
    Ok(!(h_yaw > 0.0) || h_arc < SCALE_OBSERVABILITY * h_yaw)
}

/// The gradient the optimizer descends along at `p`, over `p.free`.
pub fn internal_gradient(
    rig: &CameraRig,
    match_sets: &[MatchSet],
    p: &MotionParams,
    opts: &EstimatorOptions,
) -> Result<DVector<f64>> {
    let problem = RigProblem::new(rig, match_sets, opts.loss, opts.metric)?;
    Ok(linearize(&problem, p, &p.free.free_params(), opts)?.gradient)
}

/// Central differences of the energy over `p.free` with absolute step `h`.
pub fn numeric_gradient(
    rig: &CameraRig,
    match_sets: &[MatchSet],
    p: &MotionParams,
    loss: &RobustLoss,
    metric: MetricKind,
    h: f64,
) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput("finite-difference step must be positive".into()));
    }
    let problem = RigProblem::new(rig, match_sets, *loss, metric)?;
    let free = p.free.free_params();
    let mut g = DVector::zeros(free.len());
    for (i, k) in free.iter().enumerate() {
        let mut plus = *p;
        plus.set(*k, p.get(*k) + h);
        let mut minus = *p;
        minus.set(*k, p.get(*k) - h);
        g[i] = (problem.energy(&plus)? - problem.energy(&minus)?) / (2.0 * h);
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub yaw: GridAxis,
    pub arc_length: GridAxis,
}

/// Energies over a (yaw × arc length) grid; rows are yaw samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    pub yaw: Vec<f64>,
    pub arc_length: Vec<f64>,
    /// `energy[i][j]` at `(yaw[i], arc_length[j])`; `None` where the
    /// epipolar geometry is undefined.
    pub energy: Vec<Vec<Option<f64>>>,
}

impl Landscape {
    pub fn max(&self) -> Option<f64> {
        self.energy.iter().flatten().flatten().copied().reduce(f64::max)
    }

    /// Cells as percent of the grid maximum.
    pub fn normalized_percent(&self) -> Vec<Vec<Option<f64>>> {
        let max = self.max().unwrap_or(0.0);
        self.energy
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| e.map(|v| if max > 0.0 { 100.0 * v / max } else { 0.0 }))
                    .collect()
            })
            .collect()
    }

    /// Grid indices of the minimum with the estimator's tie-break.
    pub fn argmin(&self) -> Option<(usize, usize)> {
        let mut best: Option<(f64, MotionParams, (usize, usize))> = None;
        for (i, row) in self.energy.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                let Some(e) = *e else { continue };
                let mut p = MotionParams::new(0.0, 0.0).expect("zero motion is valid");
                p.yaw = self.yaw[i];
                p.arc_length = self.arc_length[j];
                if best.as_ref().is_none_or(|(be, bp, _)| better((e, &p), (*be, bp))) {
                    best = Some((e, p, (i, j)));
                }
            }
        }
        best.map(|(_, _, ij)| ij)
    }
}

/// Dense evaluation of the energy over yaw and arc length, all other
/// coordinates taken from `fixed`.
pub fn energy_landscape(
    rig: &CameraRig,
    match_sets: &[MatchSet],
    grid: &LandscapeGrid,
    fixed: &MotionParams,
    loss: &RobustLoss,
    metric: MetricKind,
) -> Result<Landscape> {
    let problem = RigProblem::new(rig, match_sets, *loss, metric)?;
    let yaw = grid.yaw.values();
    let arc_length = grid.arc_length.values();
    let energy = yaw
        .par_iter()
        .map(|&y| {
            arc_length
                .iter()
                .map(|&l| {
                    let mut p = *fixed;
                    p.yaw = y;
                    p.arc_length = l;
                    problem.energy(&p).ok()
                })
                .collect()
        })
        .collect();
    Ok(Landscape {
        yaw,
        arc_length,
        energy,
    })
}

/// `|residual| ≤ threshold` per match; skipped matches are outliers.
pub fn classify_inliers(result: &EstimateResult, threshold: f64) -> Vec<bool> {
    result
        .residuals
        .iter()
        .map(|r| r.is_some_and(|r| r.abs() <= threshold))
        .collect()
}

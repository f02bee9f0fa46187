//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

use mvo_cli::run_cli;
use mvo_core::estimator::{
    energy_landscape, estimate, internal_gradient, numeric_gradient, EstimatorOptions, GridAxis, GridSpec,
    JacobianMode, LandscapeGrid,
};
use mvo_core::geometry::{essential_from_motion, rot_x, rot_y, rot_z};
use mvo_core::manifold::{camera_point_transform, multi_camera_energy, pose_from_params, Param, RigProblem};
use mvo_core::sim::{self, generate_matches, generate_scene, grid_search_oracle, NoiseSpec, SceneLayout, SceneSpec};
use mvo_core::{
    CameraModel, CameraRig, ConditionNote, FreeMask, LossKind, MatchSet, MetricKind, MotionParams, PinholeIntrinsics,
    Pose, RigCamera, RobustLoss,
};

const FX: f64 = 700.0;

fn pinhole() -> CameraModel {
    CameraModel::Pinhole(PinholeIntrinsics::new(FX, FX, 640.0, 360.0).unwrap())
}

fn camera(id: u32, heading_deg: f64, x: f64, y: f64) -> RigCamera {
    RigCamera::new(
        id,
        pinhole(),
        Pose::camera_mount(heading_deg.to_radians(), Vector3::new(x, y, 1.2)),
    )
    .with_image_size(1280.0, 720.0)
}

/// Forward camera ahead of the motion center.
fn front_rig() -> CameraRig {
    CameraRig::new(vec![camera(0, 0.0, 1.5, 0.0)]).unwrap()
}

/// Side cameras at the mirrors: lateral offsets ±1 m, 2 m ahead of the
/// rear axle.
fn side_rig() -> CameraRig {
    CameraRig::new(vec![camera(0, 90.0, 2.0, 1.0), camera(1, -90.0, 2.0, -1.0)]).unwrap()
}

fn scene(num_points: usize, layout: SceneLayout, seed: u64) -> Vec<Vector3<f64>> {
    generate_scene(&SceneSpec {
        num_points,
        depth_range: (4.0, 40.0),
        lateral_spread: 8.0,
        seed,
        layout,
    })
    .unwrap()
}

fn noise(pixel_sigma: f64, outlier_fraction: f64, seed: u64) -> NoiseSpec {
    NoiseSpec {
        pixel_sigma,
        outlier_fraction,
        seed,
        ..Default::default()
    }
}

fn matches(rig: &CameraRig, points: &[Vector3<f64>], truth: &MotionParams, noise: &NoiseSpec) -> Vec<MatchSet> {
    generate_matches(points, rig, truth, noise).unwrap().match_sets
}

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn noise_free_recovery() -> Outcome {
    let rig = front_rig();
    let truth = MotionParams::new(0.05, 1.0).unwrap();
    let sets = matches(&rig, &scene(200, SceneLayout::Forward, 1), &truth, &noise(0.0, 0.0, 2));
    let prior = MotionParams::new(0.0, 1.0).unwrap().with_free(FreeMask::YAW);
    let opts = EstimatorOptions::default();
    let mut worst_ms: f64 = 0.0;
    let mut result = None;
    for _ in 0..5 {
        let start = Instant::now();
        let r = estimate(&rig, &sets, &prior, &opts).map_err(|e| e.to_string())?;
        worst_ms = worst_ms.max(start.elapsed().as_secs_f64() * 1e3);
        result = Some(r);
    }
    let r = result.expect("ran");
    let err = (r.params.yaw - 0.05).abs();
    check(
        err < 1e-6 && r.final_energy < 1e-18 && worst_ms < 20.0,
        format!(
            "{} matches, |Δγ| = {err:.2e} rad, energy = {:.2e}, slowest of 5 calls {worst_ms:.2} ms",
            sets[0].len(),
            r.final_energy
        ),
    )
}

fn low_feature_robustness() -> Outcome {
    let rig = front_rig();
    let truth = MotionParams::new(0.05, 1.0).unwrap();
    let prior = MotionParams::new(0.0, 1.0).unwrap().with_free(FreeMask::YAW);
    let run = |loss: RobustLoss, sets: &[MatchSet]| {
        let opts = EstimatorOptions {
            loss,
            fallback_grid: Some(GridSpec::default()),
            ..Default::default()
        };
        estimate(&rig, sets, &prior, &opts)
            .map(|r| (r.params.yaw - truth.yaw).abs())
            .unwrap_or(f64::INFINITY)
    };
    let mut robust = Vec::new();
    let mut plain = Vec::new();
    for seed in 0..20u64 {
        // exactly 150 matches: keep the first 150 points visible at both frames
        let points = scene(1000, SceneLayout::Forward, 100 + seed);
        let visible = generate_matches(&points, &rig, &truth, &noise(0.0, 0.0, 0)).unwrap();
        let chosen: Vec<_> = visible.point_indices[0].iter().take(150).map(|&i| points[i]).collect();
        let sim = generate_matches(&chosen, &rig, &truth, &noise(0.5, 0.3, 200 + seed)).unwrap();
        if sim.num_matches() != 150 {
            return Err(format!("seed {seed}: {} matches instead of 150", sim.num_matches()));
        }
        robust.push(run(RobustLoss::default(), &sim.match_sets));
        plain.push(run(RobustLoss::none(), &sim.match_sets));
    }
    let hits = robust.iter().filter(|e| **e < 1e-3).count();
    let median = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        0.5 * (v[9] + v[10])
    };
    let (mr, mp) = (median(&robust), median(&plain));
    check(
        hits >= 18 && mp > mr,
        format!("Cauchy within 1e-3 rad on {hits}/20 seeds; median |Δγ| Cauchy {mr:.2e} vs no loss {mp:.2e}"),
    )
}

struct Scenario {
    truth: MotionParams,
    sets: Vec<MatchSet>,
    yaw_bounds: (f64, f64),
    arc_bounds: (f64, f64),
}

const ORACLE_STEPS: usize = 41;

/// Twenty seeded curve scenarios, by default with σ = 0.5 px and 10% outliers.
fn oracle_scenarios(rig: &CameraRig, points: impl Fn(u64) -> Vec<Vector3<f64>>, noisy: bool) -> Vec<Scenario> {
    (0..20u64)
        .map(|seed| {
            let mut rng = sim::rng(1000 + seed);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let yaw = sign * rng.random_range(0.08..0.25);
            let arc = rng.random_range(0.8..1.6);
            let truth = MotionParams::new(yaw, arc).unwrap();
            let sets = matches(
                rig,
                &points(2000 + seed),
                &truth,
                &if noisy {
                    noise(0.5, 0.1, 3000 + seed)
                } else {
                    noise(0.0, 0.0, 0)
                },
            );
            Scenario {
                truth,
                sets,
                yaw_bounds: (-0.3, 0.3),
                arc_bounds: (0.5 * arc, 1.5 * arc),
            }
        })
        .collect()
}

fn cell(bounds: (f64, f64)) -> f64 {
    (bounds.1 - bounds.0) / (ORACLE_STEPS - 1) as f64
}

fn oracle(rig: &CameraRig, s: &Scenario, loss: &RobustLoss, metric: MetricKind) -> MotionParams {
    let template = MotionParams::new(0.0, s.truth.arc_length)
        .unwrap()
        .with_free(FreeMask::YAW_AND_ARC);
    grid_search_oracle(
        rig,
        &s.sets,
        &template,
        &[s.yaw_bounds, s.arc_bounds],
        &[ORACLE_STEPS, ORACLE_STEPS],
        loss,
        metric,
    )
    .unwrap()
}

/// Offsets between two parameter sets in grid cells.
fn cell_offsets(s: &Scenario, a: &MotionParams, b: &MotionParams) -> (f64, f64) {
    (
        (a.yaw - b.yaw).abs() / cell(s.yaw_bounds),
        (a.arc_length - b.arc_length).abs() / cell(s.arc_bounds),
    )
}

fn within_one_cell((dy, dl): (f64, f64)) -> bool {
    dy <= 1.0 + 1e-9 && dl <= 1.0 + 1e-9
}

struct OracleTally {
    agree: usize,
    lower_energy: usize,
    worst: (f64, f64),
}

fn compare_with_oracle(rig: &CameraRig, scenarios: &[Scenario]) -> Result<OracleTally, String> {
    let loss = RobustLoss::default();
    let prior = MotionParams::new(0.0, 1.0).unwrap().with_free(FreeMask::YAW_AND_ARC);
    let opts = EstimatorOptions {
        fallback_grid: Some(GridSpec {
            yaw: GridAxis::new(-0.3, 0.3, 41).unwrap(),
            arc_length: Some(GridAxis::new(0.4, 2.4, 21).unwrap()),
        }),
        ..Default::default()
    };
    let mut tally = OracleTally {
        agree: 0,
        lower_energy: 0,
        worst: (0.0, 0.0),
    };
    for s in scenarios {
        let o = oracle(rig, s, &loss, MetricKind::AnglePlane);
        let r = estimate(rig, &s.sets, &prior, &opts).map_err(|e| e.to_string())?;
        let off = cell_offsets(s, &r.params, &o);
        tally.worst = (tally.worst.0.max(off.0), tally.worst.1.max(off.1));
        let oracle_energy =
            multi_camera_energy(&o, rig, &s.sets, &loss, MetricKind::AnglePlane).map_err(|e| e.to_string())?;
        tally.lower_energy += usize::from(r.final_energy <= oracle_energy);
        tally.agree += usize::from(within_one_cell(off));
    }
    Ok(tally)
}

/// Predicted oracle offset along arc length, in cells: the valley slope
/// `-H_γl / H_ll` at the estimate times half a yaw cell.
fn predicted_arc_offset(rig: &CameraRig, s: &Scenario, at: &MotionParams) -> Result<f64, String> {
    let problem =
        RigProblem::new(rig, &s.sets, RobustLoss::default(), MetricKind::AnglePlane).map_err(|e| e.to_string())?;
    let h = problem
        .linearize_analytic(at, &[Param::Yaw, Param::ArcLength])
        .map_err(|e| e.to_string())?
        .hessian;
    Ok((h[(0, 1)] / h[(1, 1)]).abs() * 0.5 * cell(s.yaw_bounds) / cell(s.arc_bounds))
}

fn oracle_equivalence(scenarios: &[Scenario]) -> Outcome {
    let rig = side_rig();
    let t = compare_with_oracle(&rig, scenarios)?;
    let predicted = scenarios
        .iter()
        .map(|s| predicted_arc_offset(&rig, s, &s.truth))
        .collect::<Result<Vec<_>, _>>()?;
    let min_predicted = predicted.iter().copied().fold(f64::INFINITY, f64::min);
    let n = scenarios.len();
    check(
        t.agree == n,
        format!(
            "{}/{n} within one cell, estimate energy ≤ oracle energy on {}/{n}, worst offset {:.2} yaw / {:.2} arc cells; the valley slope lets yaw snapping alone shift the oracle by up to {min_predicted:.1} arc cells or more in every scenario",
            t.agree, t.lower_energy, t.worst.0, t.worst.1
        ),
    )
}

fn scale_observability() -> Outcome {
    let truth = MotionParams::new(0.1, 1.0).unwrap();
    let points = scene(300, SceneLayout::Surround, 7);
    let rig = side_rig();
    let sets = matches(&rig, &points, &truth, &noise(0.0, 0.0, 8));
    let prior = MotionParams::new(0.1, 0.7).unwrap().with_free(FreeMask::YAW_AND_ARC);
    let r = estimate(&rig, &sets, &prior, &EstimatorOptions::default()).map_err(|e| e.to_string())?;
    let rel = (r.params.arc_length - truth.arc_length).abs() / truth.arc_length;

    // control: one forward camera at the motion center
    let single = CameraRig::new(vec![camera(0, 0.0, 0.0, 0.0)]).unwrap();
    let forward = scene(300, SceneLayout::Forward, 9);
    let single_sets = matches(&single, &forward, &truth, &noise(0.0, 0.0, 10));
    let loss = RobustLoss::default();
    let grid = LandscapeGrid {
        yaw: GridAxis::new(-0.3, 0.3, 61).unwrap(),
        arc_length: GridAxis::new(0.5, 2.0, 31).unwrap(),
    };
    let land = energy_landscape(&single, &single_sets, &grid, &truth, &loss, MetricKind::AnglePlane)
        .map_err(|e| e.to_string())?;
    let scale = land.max().unwrap_or(0.0);
    let along_l: Vec<f64> = grid
        .arc_length
        .values()
        .iter()
        .map(|&l| {
            let p = MotionParams { arc_length: l, ..truth };
            multi_camera_energy(&p, &single, &single_sets, &loss, MetricKind::AnglePlane).unwrap()
        })
        .collect();
    let variation = along_l.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - along_l.iter().copied().fold(f64::INFINITY, f64::min);
    let control = estimate(&single, &single_sets, &prior, &EstimatorOptions::default()).map_err(|e| e.to_string())?;
    check(
        rel < 0.02 && scale > 0.0 && variation < 1e-12 * scale && control.condition_note == ConditionNote::ScaleUnobservable,
        format!(
            "two-camera l error {:.2e} (relative); single camera energy variation over l {:.2e} vs energy scale {scale:.2e}, note {:?}",
            rel, variation, control.condition_note
        ),
    )
}

fn metric_agreement(rig: &CameraRig, scenarios: &[Scenario]) -> (usize, (f64, f64)) {
    // GeoLine residuals are pixels: the Cauchy width scales with the focal length
    let geo_loss = RobustLoss::new(LossKind::Cauchy, RobustLoss::default().width() * FX).unwrap();
    let mut agree = 0;
    let mut worst = (0.0f64, 0.0f64);
    for s in scenarios {
        let a = oracle(rig, s, &RobustLoss::default(), MetricKind::AnglePlane);
        let g = oracle(rig, s, &geo_loss, MetricKind::GeoLine);
        let off = cell_offsets(s, &a, &g);
        worst = (worst.0.max(off.0), worst.1.max(off.1));
        agree += usize::from(within_one_cell(off));
    }
    (agree, worst)
}

fn metric_generalization(scenarios: &[Scenario]) -> Outcome {
    let rig = side_rig();
    let (agree, worst) = metric_agreement(&rig, scenarios);
    let clean = oracle_scenarios(&rig, |seed| scene(300, SceneLayout::Surround, seed), false);
    let (clean_agree, clean_worst) = metric_agreement(&rig, &clean);
    let n = scenarios.len();
    check(
        agree == n,
        format!(
            "{agree}/{n} grid argmins coincide within one cell, worst offset {:.0} yaw / {:.0} arc cells; noise-free copies: {clean_agree}/{n}, worst {:.0} yaw / {:.0} arc cells",
            worst.0, worst.1, clean_worst.0, clean_worst.1
        ),
    )
}

fn gradient_correctness() -> Outcome {
    let rig = side_rig();
    let truth = MotionParams::new(0.1, 1.0).unwrap();
    let sets = matches(
        &rig,
        &scene(300, SceneLayout::Surround, 11),
        &truth,
        &noise(0.5, 0.2, 12),
    );
    let loss = RobustLoss::default();
    let mut rng = sim::rng(13);
    let mut worst_ratio: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..100 {
        let p = MotionParams::new(rng.random_range(-0.3..0.3), rng.random_range(0.5..2.0))
            .and_then(|p| p.with_tilt(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)))
            .unwrap()
            .with_free(FreeMask::ALL);
        let fd = numeric_gradient(&rig, &sets, &p, &loss, MetricKind::AnglePlane, 1e-6).map_err(|e| e.to_string())?;
        let tol = (1e-4 * fd.norm()).max(1e-6);
        for jacobian in [JacobianMode::Numeric, JacobianMode::Analytic] {
            let opts = EstimatorOptions {
                jacobian,
                ..Default::default()
            };
            let g = internal_gradient(&rig, &sets, &p, &opts).map_err(|e| e.to_string())?;
            let err = (&g - &fd).amax();
            worst_ratio = worst_ratio.max(err / tol);
            if err > tol {
                failures += 1;
            }
        }
    }
    check(
        failures == 0,
        format!("100 points × 2 Jacobian modes, {failures} outside tolerance; worst error/tolerance {worst_ratio:.2e}"),
    )
}

fn rotation(a: f64, b: f64, c: f64) -> Matrix3<f64> {
    rot_z(a) * rot_y(b) * rot_x(c)
}

fn geometry_invariants() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let angle = -3.0..3.0f64;
    let coord = -10.0..10.0f64;
    let pose = (
        angle.clone(),
        angle.clone(),
        angle.clone(),
        coord.clone(),
        coord.clone(),
        coord.clone(),
    )
        .prop_map(|(a, b, c, x, y, z)| Pose::new(rotation(a, b, c), Vector3::new(x, y, z)).unwrap());

    let mut report = Vec::new();
    let group = runner.run(&(pose.clone(), pose.clone(), pose.clone()), |(p, q, r)| {
        let id = p.compose(&p.inverse());
        prop_assert!((id.rotation() - Matrix3::identity()).amax() < 1e-12);
        prop_assert!(id.translation().amax() < 1e-12);
        let lhs = p.compose(&q).compose(&r);
        let rhs = p.compose(&q.compose(&r));
        prop_assert!((lhs.rotation() - rhs.rotation()).amax() < 1e-12);
        prop_assert!((lhs.translation() - rhs.translation()).amax() < 1e-11);
        prop_assert_eq!(p.compose(&Pose::identity()), p);
        Ok(())
    });
    report.push(("pose group axioms", group.map_err(|e| e.to_string())));

    let motion = (
        angle.clone(),
        angle.clone(),
        angle.clone(),
        0.1..10.0f64,
        0.0..std::f64::consts::PI,
        -3.2..3.2f64,
    )
        .prop_map(|(a, b, c, norm, theta, phi)| {
            let dir = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            Pose::new(rotation(a, b, c), norm * dir).unwrap()
        });
    let svd = runner.run(&motion, |m| {
        let e = essential_from_motion(&m).unwrap();
        let s = e.matrix().singular_values();
        let mut s: Vec<f64> = s.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        prop_assert!(s[2] <= 1e-12 * s[0]);
        prop_assert!((s[0] - s[1]).abs() <= 1e-9 * s[0]);
        Ok(())
    });
    report.push(("essential singular values", svd.map_err(|e| e.to_string())));

    let point = (-20.0..20.0f64, -20.0..20.0f64, 0.5..50.0f64);
    let epipolar = runner.run(&(motion, proptest::collection::vec(point, 1..20)), |(m, pts)| {
        let e = essential_from_motion(&m).unwrap();
        for (x, y, z) in pts {
            let x0 = Vector3::new(x, y, z);
            let x1 = m.transform_point(&x0);
            let c = x1.normalize().dot(&(e.matrix() * x0.normalize()));
            prop_assert!(c.abs() < 1e-10, "{}", c);
        }
        Ok(())
    });
    report.push(("epipolar constraint", epipolar.map_err(|e| e.to_string())));

    let round_trip = runner.run(&(-600.0..600.0f64, -340.0..340.0f64, 0.1..100.0f64), |(u, v, z)| {
        let model = pinhole();
        let dir = Vector3::new(u / FX * z, v / FX * z, z);
        let pix = model.project(&dir).unwrap();
        let b = model.bearing_from_pixel(&pix).unwrap();
        prop_assert!(b.direction().angle(&dir) < 1e-9);
        Ok(())
    });
    report.push(("bearing/projection round trip", round_trip.map_err(|e| e.to_string())));

    // continuity across γ = 0 and across the small-angle series switch
    let rig = front_rig();
    let truth = MotionParams::new(0.0, 1.0).unwrap();
    let sets = matches(
        &rig,
        &scene(200, SceneLayout::Forward, 14),
        &truth,
        &noise(0.5, 0.0, 15),
    );
    let loss = RobustLoss::default();
    let continuity = runner.run(&(0.5..2.0f64, 1e-3..1e-1f64), |(l, h)| {
        let energy = |g: f64| {
            multi_camera_energy(
                &MotionParams::new(g, l).unwrap(),
                &rig,
                &sets,
                &loss,
                MetricKind::AnglePlane,
            )
            .unwrap()
        };
        let e0 = energy(0.0);
        prop_assert!(e0 > 0.0);
        for g in [1e-12, -1e-12, 1e-10, -1e-10] {
            prop_assert!((energy(g) - e0).abs() <= 1e-6 * e0);
        }
        // both sides of the small-angle series switch agree
        for switch in [1e-6, -1e-6] {
            let below = energy(switch * (1.0 - 1e-9));
            let above = energy(switch * (1.0 + 1e-9));
            prop_assert!((below - above).abs() <= 1e-9 * e0);
            let tb = pose_from_params(&MotionParams::new(switch * (1.0 - 1e-12), l).unwrap());
            let ta = pose_from_params(&MotionParams::new(switch * (1.0 + 1e-12), l).unwrap());
            prop_assert!((tb.translation() - ta.translation()).amax() < 1e-14 * l.max(1.0));
        }
        let motion = pose_from_params(&MotionParams::new(h, l).unwrap());
        prop_assert_eq!(motion.translation().z, 0.0);
        let point = camera_point_transform(&motion, &rig.cameras()[0].extrinsic);
        prop_assert!(essential_from_motion(&point).is_ok());
        Ok(())
    });
    report.push(("energy continuity across γ = 0", continuity.map_err(|e| e.to_string())));

    let failed: Vec<String> = report
        .iter()
        .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    let names: Vec<&str> = report.iter().map(|(n, _)| *n).collect();
    if failed.is_empty() {
        Ok(format!(
            "{} properties × 1000 cases: {}",
            report.len(),
            names.join(", ")
        ))
    } else {
        Err(failed.join("; "))
    }
}

const DRIVE: &str = "\
[scene]
num_points = 600
depth_range = 4 40
lateral_spread = 8
layout = surround

[noise]
pixel_sigma = 0.5
outlier_fraction = 0.1

[sequence]
segment = straight 200 1.0
segment = curve 100 1.0 1.5707963267948966
segment = straight 200 1.0
frame_interval = 0.1

[camera]
id = 0
model = pinhole
intrinsics = 700 700 640 360
size = 1280 720
mount = 90 2 1 1.2

[camera]
id = 1
model = pinhole
intrinsics = 700 700 640 360
size = 1280 720
mount = -90 2 -1 1.2
";

fn cli(args: &[&str]) -> Result<(), String> {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["mvo"];
    argv.extend_from_slice(args);
    match run_cli(argv, &mut out, &mut err) {
        0 => Ok(()),
        code => Err(format!(
            "`mvo {}` exited with {code}: {}",
            args.join(" "),
            String::from_utf8_lossy(&err)
        )),
    }
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    std::fs::write(d.join("drive.txt"), DRIVE).map_err(|e| e.to_string())?;
    let out = d.join("sim");
    let start = Instant::now();
    cli(&[
        "simulate",
        "--scenario",
        &path(d, "drive.txt"),
        "--out",
        &out.display().to_string(),
        "--seed",
        "2024",
    ])?;
    cli(&[
        "estimate",
        "--rig",
        &path(&out, "rig.txt"),
        "--matches",
        &path(&out, "matches.csv"),
        "--free-in-curves",
        "--out",
        &path(&out, "est.txt"),
        "--diagnostics",
        &path(&out, "diagnostics.jsonl"),
    ])?;
    cli(&[
        "eval",
        "--est",
        &path(&out, "est.txt"),
        "--gt",
        &path(&out, "gt.txt"),
        "--lengths",
        "100",
        "--timestamps",
        &path(&out, "timestamps.txt"),
        "--diagnostics",
        &path(&out, "diagnostics.jsonl"),
        "--csv",
        &path(&out, "report.csv"),
    ])?;
    let elapsed = start.elapsed().as_secs_f64();
    let csv = std::fs::read_to_string(out.join("report.csv")).map_err(|e| e.to_string())?;
    let row = csv
        .lines()
        .find(|l| l.starts_with("length,100,"))
        .ok_or("no 100 m bucket in the report")?;
    let fields: Vec<&str> = row.split(',').collect();
    let rotation: f64 = fields[3].parse().map_err(|_| "bad report")?;
    let translation: f64 = fields[4].parse().map_err(|_| "bad report")?;
    let est = mvo_core::io::read_trajectory(&out.join("est.txt")).map_err(|e| e.to_string())?;
    let gt = mvo_core::io::read_trajectory(&out.join("gt.txt")).map_err(|e| e.to_string())?;
    let length = |t: &mvo_core::TrajectoryRecord| *t.distances().last().unwrap();
    let scale_error = 100.0 * (length(&est) - length(&gt)).abs() / length(&gt);
    check(
        rotation < 0.005 && elapsed < 30.0,
        format!(
            "rotation error {rotation:.5} deg/m on 100 m segments, translation {translation:.2}%, accumulated scale error {scale_error:.2}%, pipeline {elapsed:.2} s"
        ),
    )
}

fn main() {
    let scenarios = oracle_scenarios(&side_rig(), |seed| scene(300, SceneLayout::Surround, seed), true);
    let criteria: Vec<Criterion> = vec![
        ("noise-free recovery", Box::new(noise_free_recovery)),
        ("low-feature robustness", Box::new(low_feature_robustness)),
        ("oracle equivalence", Box::new(|| oracle_equivalence(&scenarios))),
        ("scale observability in curves", Box::new(scale_observability)),
        ("metric generalization", Box::new(|| metric_generalization(&scenarios))),
        ("gradient correctness", Box::new(gradient_correctness)),
        ("geometry invariants", Box::new(geometry_invariants)),
        ("end-to-end sequence", Box::new(end_to_end)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {} [{name}]: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} [{name}]: FAIL ({detail})", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

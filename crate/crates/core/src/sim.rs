//! Synthetic scenes, sparse optical flow and brute-force oracles.
//!
//! All randomness comes from xoshiro256++ seeded through SplitMix64
//! (`Xoshiro256PlusPlus::seed_from_u64`), a portable generator with a
//! published reference sequence. For seed 0 the first three outputs are
//! `0x53175d61490b23df`, `0x61da6f3dc380d507`, `0x5c0fdf91ec9a7bfc`.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PixelPoint, Pose};
use crate::manifold::{multi_camera_energy, pose_from_params, CameraRig, MotionParams, Param, RigCamera};
use crate::metrics::{FeatureMatch, MatchSet, MetricKind, RobustLoss};

pub type SimRng = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> SimRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneLayout {
    /// Points ahead of the vehicle: depth along x, `y, z ∈ ±spread`.
    #[default]
    Forward,
    /// Points all around: horizontal range in the depth interval, uniform
    /// azimuth, `z ∈ ±spread`.
    Surround,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub num_points: usize,
    /// Meters.
    pub depth_range: (f64, f64),
    /// Meters.
    pub lateral_spread: f64,
    pub seed: u64,
    pub layout: SceneLayout,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            num_points: 200,
            depth_range: (4.0, 40.0),
            lateral_spread: 8.0,
            seed: 0,
            layout: SceneLayout::Forward,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.depth_range;
        if self.num_points == 0 {
            return Err(Error::InvalidInput("scene needs at least one point".into()));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid depth range {lo}..{hi}")));
        }
        if !(self.lateral_spread >= 0.0 && self.lateral_spread.is_finite()) {
            return Err(Error::InvalidInput("lateral spread must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierMode {
    /// The τ1 pixel is redrawn uniformly in the image.
    #[default]
    UniformImage,
    /// τ1 endpoints are swapped between pairs of matches.
    WrongAssociation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of the pixel noise on every endpoint.
    pub pixel_sigma: f64,
    pub outlier_fraction: f64,
    pub outlier_mode: OutlierMode,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            pixel_sigma: 0.0,
            outlier_fraction: 0.0,
            outlier_mode: OutlierMode::UniformImage,
            seed: 1,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_sigma >= 0.0 && self.pixel_sigma.is_finite()) {
            return Err(Error::InvalidInput("pixel sigma must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(Error::InvalidInput("outlier fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Scene points in the τ0 vehicle frame.
pub fn generate_scene(spec: &SceneSpec) -> Result<Vec<Vector3<f64>>> {
    spec.validate()?;
    let mut rng = rng(spec.seed);
    let (lo, hi) = spec.depth_range;
    let s = spec.lateral_spread;
    Ok((0..spec.num_points)
        .map(|_| match spec.layout {
            SceneLayout::Forward => {
                let x = uniform(&mut rng, lo, hi);
                let y = uniform(&mut rng, -s, s);
                let z = uniform(&mut rng, -s, s);
                Vector3::new(x, y, z)
            }
            SceneLayout::Surround => {
                let range = uniform(&mut rng, lo, hi);
                let azimuth = uniform(&mut rng, 0.0, std::f64::consts::TAU);
                let z = uniform(&mut rng, -s, s);
                Vector3::new(range * azimuth.cos(), range * azimuth.sin(), z)
            }
        })
        .collect())
}

/// Matches per rig camera plus ground-truth inlier labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedMatches {
    pub match_sets: Vec<MatchSet>,
    /// `true` for inliers, parallel to `match_sets[i].matches`.
    pub inlier_labels: Vec<Vec<bool>>,
    /// Index of the scene point behind each match.
    pub point_indices: Vec<Vec<usize>>,
}

impl SimulatedMatches {
    pub fn num_matches(&self) -> usize {
        self.match_sets.iter().map(MatchSet::len).sum()
    }

    pub fn labels(&self) -> impl Iterator<Item = bool> + '_ {
        self.inlier_labels.iter().flatten().copied()
    }
}

fn inside(cam: &RigCamera, p: &PixelPoint) -> bool {
    let (u0, v0, u1, v1) = cam.image_bounds();
    p.u >= u0 && p.u < u1 && p.v >= v0 && p.v < v1
}

fn random_pixel(rng: &mut SimRng, cam: &RigCamera) -> PixelPoint {
    let (u0, v0, u1, v1) = cam.image_bounds();
    PixelPoint::new(uniform(rng, u0, u1), uniform(rng, v0, v1))
}

/// Projects `points` into every camera at τ0 and after the `truth` step,
/// adds Gaussian pixel noise and replaces a fraction by outliers.
pub fn generate_matches(
    points: &[Vector3<f64>],
    rig: &CameraRig,
    truth: &MotionParams,
    noise: &NoiseSpec,
) -> Result<SimulatedMatches> {
    noise.validate()?;
    if points.is_empty() {
        return Err(Error::NoVisiblePoints);
    }
    let truth = truth.validated()?;
    let mut rng = rng(noise.seed);
    let motion = pose_from_params(&truth);
    let mut out = SimulatedMatches {
        match_sets: Vec::with_capacity(rig.cameras().len()),
        inlier_labels: Vec::with_capacity(rig.cameras().len()),
        point_indices: Vec::with_capacity(rig.cameras().len()),
    };
    for cam in rig.cameras() {
        let to_cam0 = cam.extrinsic.inverse();
        let to_cam1 = motion.compose(&cam.extrinsic).inverse();
        let mut pairs: Vec<(PixelPoint, PixelPoint)> = Vec::new();
        let mut indices = Vec::new();
        for (index, x) in points.iter().enumerate() {
            let (Ok(p0), Ok(p1)) = (
                cam.model.project(&to_cam0.transform_point(x)),
                cam.model.project(&to_cam1.transform_point(x)),
            ) else {
                continue;
            };
            if inside(cam, &p0) && inside(cam, &p1) {
                pairs.push((p0, p1));
                indices.push(index);
            }
        }
        if noise.pixel_sigma > 0.0 {
            for (p0, p1) in &mut pairs {
                for c in [&mut p0.u, &mut p0.v, &mut p1.u, &mut p1.v] {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    *c += noise.pixel_sigma * n;
                }
            }
        }
        let mut labels = vec![true; pairs.len()];
        let num_outliers = (noise.outlier_fraction * pairs.len() as f64).round() as usize;
        if num_outliers > 0 {
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            order.shuffle(&mut rng);
            let mut chosen = order[..num_outliers].to_vec();
            chosen.sort_unstable();
            match noise.outlier_mode {
                OutlierMode::UniformImage => {
                    for &i in &chosen {
                        pairs[i].1 = random_pixel(&mut rng, cam);
                    }
                }
                OutlierMode::WrongAssociation => {
                    for pair in chosen.chunks(2) {
                        match *pair {
                            [a, b] => {
                                let tmp = pairs[a].1;
                                pairs[a].1 = pairs[b].1;
                                pairs[b].1 = tmp;
                            }
                            [a] => pairs[a].1 = random_pixel(&mut rng, cam),
                            _ => unreachable!(),
                        }
                    }
                }
            }
            for &i in &chosen {
                labels[i] = false;
            }
        }
        let mut matches = Vec::with_capacity(pairs.len());
        let mut kept = Vec::with_capacity(pairs.len());
        let mut kept_indices = Vec::with_capacity(pairs.len());
        for (((p0, p1), label), index) in pairs.into_iter().zip(labels).zip(indices) {
            // noise can push a pixel off a tabulated model's domain
            if let Ok(m) = FeatureMatch::new(&cam.model, p0, p1) {
                matches.push(m);
                kept.push(label);
                kept_indices.push(index);
            }
        }
        out.match_sets.push(MatchSet::new(cam.id, matches));
        out.inlier_labels.push(kept);
        out.point_indices.push(kept_indices);
    }
    if out.num_matches() == 0 {
        return Err(Error::NoVisiblePoints);
    }
    Ok(out)
}

/// Exhaustive search over the free coordinates of `template`.
///
/// `bounds[k]` and `steps[k]` describe the k-th free coordinate in
/// declaration order (yaw, arc length, pitch, roll). Ties go to the
/// smallest |yaw|, then the smallest arc length.
pub fn grid_search_oracle(
    rig: &CameraRig,
    match_sets: &[MatchSet],
    template: &MotionParams,
    bounds: &[(f64, f64)],
    steps: &[usize],
    loss: &RobustLoss,
    metric: MetricKind,
) -> Result<MotionParams> {
    let free: Vec<Param> = template.free.free_params();
    if bounds.len() != free.len() || steps.len() != free.len() {
        return Err(Error::DimensionMismatch {
            expected: free.len(),
            got: bounds.len().min(steps.len()),
        });
    }
    if steps.iter().any(|&s| s < 2) || bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
        return Err(Error::InvalidInput("grid needs ≥ 2 steps and ordered bounds".into()));
    }
    let total: usize = steps.iter().product();
    let cell = |mut index: usize| {
        let mut p = *template;
        for (k, param) in free.iter().enumerate() {
            let i = index % steps[k];
            index /= steps[k];
            let (lo, hi) = bounds[k];
            p.set(*param, lo + (hi - lo) * i as f64 / (steps[k] - 1) as f64);
        }
        p
    };
    let energies: Vec<Option<f64>> = (0..total)
        .into_par_iter()
        .map(|i| multi_camera_energy(&cell(i), rig, match_sets, loss, metric).ok())
        .collect();
    let mut best: Option<(f64, MotionParams)> = None;
    for (i, e) in energies.into_iter().enumerate() {
        let Some(e) = e else { continue };
        let p = cell(i);
        let replace = match &best {
            None => true,
            Some((be, bp)) => e < *be || (e == *be && (p.yaw.abs(), p.arc_length) < (bp.yaw.abs(), bp.arc_length)),
        };
        if replace {
            best = Some((e, p));
        }
    }
    best.map(|(_, p)| p).ok_or(Error::DegenerateTranslation)
}

/// A piece of a simulated drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Segment {
    Straight {
        frames: usize,
        arc_length: f64,
    },
    /// `total_yaw` is spread evenly over the frames.
    Curve {
        frames: usize,
        arc_length: f64,
        total_yaw: f64,
    },
}

/// Per-frame-pair ground-truth motion of a drive.
pub fn sequence_motions(segments: &[Segment]) -> Result<Vec<MotionParams>> {
    let mut out = Vec::new();
    for s in segments {
        match *s {
            Segment::Straight { frames, arc_length } => {
                let p = MotionParams::new(0.0, arc_length)?;
                out.extend(std::iter::repeat_n(p, frames));
            }
            Segment::Curve {
                frames,
                arc_length,
                total_yaw,
            } => {
                if frames == 0 {
                    continue;
                }
                let p = MotionParams::new(total_yaw / frames as f64, arc_length)?;
                out.extend(std::iter::repeat_n(p, frames));
            }
        }
    }
    Ok(out)
}

/// Absolute poses obtained by chaining relative motions from the identity.
pub fn chain_poses(motions: &[MotionParams]) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(motions.len() + 1);
    poses.push(Pose::identity());
    for m in motions {
        let last = *poses.last().expect("non-empty");
        poses.push(last.compose(&pose_from_params(m)));
    }
    poses
}

/// One simulated frame pair per motion; the scene and noise seeds are
/// advanced by the pair index so every pair sees fresh features.
pub fn simulate_sequence(
    rig: &CameraRig,
    scene: &SceneSpec,
    noise: &NoiseSpec,
    motions: &[MotionParams],
) -> Result<Vec<SimulatedMatches>> {
    motions
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let scene = SceneSpec {
                seed: scene.seed.wrapping_add(k as u64),
                ..*scene
            };
            let noise = NoiseSpec {
                seed: noise.seed.wrapping_add(k as u64),
                ..*noise
            };
            generate_matches(&generate_scene(&scene)?, rig, m, &noise)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::RngCore;

    use super::*;
    use crate::camera::{CameraModel, PinholeIntrinsics};
    use crate::geometry::essential_from_motion;
    use crate::manifold::{camera_point_transform, FreeMask};

    /// Reference SplitMix64 seeding + xoshiro256++, written from the
    /// published algorithm description.
    struct Reference {
        s: [u64; 4],
    }

    impl Reference {
        fn new(seed: u64) -> Self {
            let mut state = seed;
            let mut next = || {
                state = state.wrapping_add(0x9e3779b97f4a7c15);
                let mut z = state;
                z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
                z ^ (z >> 31)
            };
            Self {
                s: [next(), next(), next(), next()],
            }
        }

        fn next(&mut self) -> u64 {
            let s = &mut self.s;
            let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
            let t = s[1] << 17;
            s[2] ^= s[0];
            s[3] ^= s[1];
            s[1] ^= s[2];
            s[0] ^= s[3];
            s[2] ^= t;
            s[3] = s[3].rotate_left(45);
            result
        }
    }

    #[test]
    fn generator_matches_reference_sequence() {
        for seed in [0, 1, 42, u64::MAX] {
            let mut ours = rng(seed);
            let mut reference = Reference::new(seed);
            for _ in 0..16 {
                assert_eq!(ours.next_u64(), reference.next());
            }
        }
        let mut r = rng(0);
        assert_eq!(
            [r.next_u64(), r.next_u64(), r.next_u64()],
            [0x53175d61490b23df, 0x61da6f3dc380d507, 0x5c0fdf91ec9a7bfc]
        );
    }

    #[test]
    fn forced_single_point() {
        let spec = SceneSpec {
            num_points: 1,
            depth_range: (7.0, 7.0),
            lateral_spread: 0.0,
            seed: 3,
            layout: SceneLayout::Forward,
        };
        assert_eq!(generate_scene(&spec).unwrap(), vec![Vector3::new(7.0, 0.0, 0.0)]);
    }

    #[test]
    fn scene_is_deterministic_and_bounded() {
        let spec = SceneSpec {
            num_points: 500,
            seed: 11,
            ..Default::default()
        };
        let a = generate_scene(&spec).unwrap();
        assert_eq!(a, generate_scene(&spec).unwrap());
        for p in &a {
            assert!(p.x >= 4.0 && p.x < 40.0 && p.y.abs() <= 8.0 && p.z.abs() <= 8.0);
        }
        let other = generate_scene(&SceneSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn depth_spread_covers_range() {
        for layout in [SceneLayout::Forward, SceneLayout::Surround] {
            let spec = SceneSpec {
                num_points: 10_000,
                depth_range: (2.0, 50.0),
                seed: 5,
                layout,
                ..Default::default()
            };
            let pts = generate_scene(&spec).unwrap();
            let depth = |p: &Vector3<f64>| match layout {
                SceneLayout::Forward => p.x,
                SceneLayout::Surround => p.xy().norm(),
            };
            let lo = pts.iter().map(depth).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(depth).fold(f64::NEG_INFINITY, f64::max);
            assert!((hi - lo) / 48.0 >= 0.9);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_scene(&SceneSpec {
            num_points: 0,
            ..Default::default()
        })
        .is_err());
        assert!(generate_scene(&SceneSpec {
            depth_range: (5.0, 1.0),
            ..Default::default()
        })
        .is_err());
        assert!(NoiseSpec {
            outlier_fraction: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    fn forward_rig() -> CameraRig {
        let k = CameraModel::Pinhole(PinholeIntrinsics::new(700.0, 700.0, 640.0, 360.0).unwrap());
        CameraRig::new(vec![RigCamera::new(
            0,
            k,
            Pose::camera_mount(0.0, Vector3::new(1.5, 0.0, 1.2)),
        )
        .with_image_size(1280.0, 720.0)])
        .unwrap()
    }

    #[test]
    fn noise_free_matches_satisfy_epipolar_constraint() {
        let rig = forward_rig();
        let pts = generate_scene(&SceneSpec::default()).unwrap();
        let truth = MotionParams::new(0.05, 1.0).unwrap();
        let sim = generate_matches(&pts, &rig, &truth, &NoiseSpec::default()).unwrap();
        assert!(sim.num_matches() > 50);
        let point = camera_point_transform(&pose_from_params(&truth), &rig.cameras()[0].extrinsic);
        let e = essential_from_motion(&point).unwrap();
        for m in &sim.match_sets[0].matches {
            let c = m
                .bearing_t1()
                .direction()
                .dot(&(e.matrix() * m.bearing_t0().direction()));
            assert!(c.abs() < 1e-10);
        }
        assert!(sim.labels().all(|l| l));
    }

    #[test]
    fn all_outliers() {
        let rig = forward_rig();
        let pts = generate_scene(&SceneSpec::default()).unwrap();
        let truth = MotionParams::new(0.05, 1.0).unwrap();
        for mode in [OutlierMode::UniformImage, OutlierMode::WrongAssociation] {
            let noise = NoiseSpec {
                outlier_fraction: 1.0,
                outlier_mode: mode,
                ..Default::default()
            };
            let sim = generate_matches(&pts, &rig, &truth, &noise).unwrap();
            assert!(sim.labels().all(|l| !l));
        }
    }

    #[test]
    fn nothing_visible() {
        let rig = forward_rig();
        let behind = vec![Vector3::new(-10.0, 0.0, 0.0)];
        let truth = MotionParams::new(0.0, 1.0).unwrap();
        assert!(matches!(
            generate_matches(&behind, &rig, &truth, &NoiseSpec::default()),
            Err(Error::NoVisiblePoints)
        ));
    }

    #[test]
    fn oracle_on_noise_free_data() {
        let rig = forward_rig();
        let pts = generate_scene(&SceneSpec::default()).unwrap();
        let truth = MotionParams::new(0.05, 1.0).unwrap();
        let sim = generate_matches(&pts, &rig, &truth, &NoiseSpec::default()).unwrap();
        let template = MotionParams::new(0.0, 1.0).unwrap().with_free(FreeMask::YAW);
        let loss = RobustLoss::default();
        let best = grid_search_oracle(
            &rig,
            &sim.match_sets,
            &template,
            &[(-0.3, 0.3)],
            &[61],
            &loss,
            MetricKind::AnglePlane,
        )
        .unwrap();
        assert!((best.yaw - 0.05).abs() <= 0.01 + 1e-12);
        // truth outside the bounds: the nearest boundary wins
        let best = grid_search_oracle(
            &rig,
            &sim.match_sets,
            &template,
            &[(0.1, 0.3)],
            &[21],
            &loss,
            MetricKind::AnglePlane,
        )
        .unwrap();
        assert_eq!(best.yaw, 0.1);
        assert!(grid_search_oracle(
            &rig,
            &sim.match_sets,
            &template,
            &[(0.1, 0.3)],
            &[1],
            &loss,
            MetricKind::AnglePlane
        )
        .is_err());
    }

    #[test]
    fn sequences_chain() {
        let motions = sequence_motions(&[
            Segment::Straight {
                frames: 3,
                arc_length: 1.0,
            },
            Segment::Curve {
                frames: 2,
                arc_length: 1.0,
                total_yaw: 0.2,
            },
        ])
        .unwrap();
        assert_eq!(motions.len(), 5);
        assert_eq!(motions[4].yaw, 0.1);
        let poses = chain_poses(&motions);
        assert_eq!(poses.len(), 6);
        assert_eq!(poses[3].translation().x, 3.0);
        assert!((poses[5].rotation_angle() - 0.2).abs() < 1e-15);
    }
}

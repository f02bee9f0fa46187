//! Declarative simulation scenarios shared by the CLI and the tests.
//!
//! ```text
//! [scene]
//! num_points = 200
//! depth_range = 4 40
//! lateral_spread = 8
//! seed = 0
//! layout = forward          # or surround
//!
//! [noise]
//! pixel_sigma = 0.5
//! outlier_fraction = 0.3
//! outlier_mode = uniform_image   # or wrong_association
//! seed = 1
//!
//! [truth]                   # a single frame pair ...
//! yaw = 0.05
//! arc_length = 1
//!
//! [sequence]                # ... or a drive
//! segment = straight 100 1.0
//! segment = curve 50 1.0 1.5707963267948966
//! frame_interval = 0.1      # seconds, enables timestamps
//!
//! [camera]                  # rig blocks as in rig files
//! ```

use std::path::Path;

use super::kv::Document;
use super::rig::{rig_from_document, CAMERA_KEYS};
use crate::error::Result;
use crate::manifold::{CameraRig, MotionParams};
use crate::sim::{sequence_motions, NoiseSpec, OutlierMode, SceneLayout, SceneSpec, Segment};

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub scene: SceneSpec,
    pub noise: NoiseSpec,
    /// True motion of every frame pair.
    pub motions: Vec<MotionParams>,
    pub rig: CameraRig,
    pub frame_interval: Option<f64>,
}

impl Scenario {
    /// Scene seed `seed`, noise seed `seed + 1`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scene.seed = seed;
        self.noise.seed = seed.wrapping_add(1);
        self
    }

    pub fn timestamps(&self) -> Option<Vec<f64>> {
        self.frame_interval
            .map(|dt| (0..=self.motions.len()).map(|k| k as f64 * dt).collect())
    }
}

pub fn parse_scenario(path: &Path, text: &str) -> Result<Scenario> {
    let doc = Document::parse(path, text)?;
    doc.check_known(&[
        (
            "scene",
            &["num_points", "depth_range", "lateral_spread", "seed", "layout"],
        ),
        ("noise", &["pixel_sigma", "outlier_fraction", "outlier_mode", "seed"]),
        ("truth", &["yaw", "arc_length", "pitch", "roll"]),
        ("sequence", &["segment", "frame_interval"]),
        ("camera", CAMERA_KEYS),
    ])?;

    let mut scene = SceneSpec::default();
    if let Some(s) = doc.unique_section("scene")? {
        scene.num_points = s.value_or(&doc, "num_points", scene.num_points)?;
        if let Some(e) = s.get(&doc, "depth_range")? {
            let v = e.reals(&doc, Some(&[2]))?;
            scene.depth_range = (v[0], v[1]);
        }
        scene.lateral_spread = s.value_or(&doc, "lateral_spread", scene.lateral_spread)?;
        scene.seed = s.value_or(&doc, "seed", scene.seed)?;
        if let Some(e) = s.get(&doc, "layout")? {
            scene.layout = match e.value.as_str() {
                "forward" => SceneLayout::Forward,
                "surround" => SceneLayout::Surround,
                other => return Err(doc.error(e.line, format!("unknown layout `{other}`"))),
            };
        }
        scene.validate().map_err(|e| doc.error(s.line, e.to_string()))?;
    }

    let mut noise = NoiseSpec::default();
    if let Some(s) = doc.unique_section("noise")? {
        noise.pixel_sigma = s.value_or(&doc, "pixel_sigma", noise.pixel_sigma)?;
        noise.outlier_fraction = s.value_or(&doc, "outlier_fraction", noise.outlier_fraction)?;
        noise.seed = s.value_or(&doc, "seed", noise.seed)?;
        if let Some(e) = s.get(&doc, "outlier_mode")? {
            noise.outlier_mode = match e.value.as_str() {
                "uniform_image" => OutlierMode::UniformImage,
                "wrong_association" => OutlierMode::WrongAssociation,
                other => return Err(doc.error(e.line, format!("unknown outlier mode `{other}`"))),
            };
        }
        noise.validate().map_err(|e| doc.error(s.line, e.to_string()))?;
    }

    let truth = doc.unique_section("truth")?;
    let sequence = doc.unique_section("sequence")?;
    let mut frame_interval = None;
    let motions = match (truth, sequence) {
        (Some(s), None) => {
            let p = MotionParams::new(s.value_or(&doc, "yaw", 0.0)?, s.value_or(&doc, "arc_length", 1.0)?)
                .and_then(|p| p.with_tilt(s.value_or(&doc, "pitch", 0.0)?, s.value_or(&doc, "roll", 0.0)?))
                .map_err(|e| doc.error(s.line, e.to_string()))?;
            vec![p]
        }
        (None, Some(s)) => {
            let mut segments = Vec::new();
            for e in s.all("segment") {
                let fields: Vec<&str> = e.value.split_whitespace().collect();
                let bad = || doc.error(e.line, format!("invalid segment `{}`", e.value));
                let frames = fields.get(1).and_then(|f| f.parse::<usize>().ok()).ok_or_else(bad)?;
                let reals = fields
                    .iter()
                    .skip(2)
                    .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(bad)?;
                segments.push(match (fields[0], reals.as_slice()) {
                    ("straight", [l]) => Segment::Straight { frames, arc_length: *l },
                    ("curve", [l, yaw]) => Segment::Curve {
                        frames,
                        arc_length: *l,
                        total_yaw: *yaw,
                    },
                    _ => return Err(bad()),
                });
            }
            frame_interval = s.value::<f64>(&doc, "frame_interval")?;
            let motions = sequence_motions(&segments).map_err(|e| doc.error(s.line, e.to_string()))?;
            if motions.is_empty() {
                return Err(doc.error(s.line, "sequence has no frames"));
            }
            motions
        }
        (Some(s), Some(_)) => return Err(doc.error(s.line, "use either [truth] or [sequence], not both")),
        (None, None) => return Err(doc.error(1, "scenario needs a [truth] or [sequence] section")),
    };

    Ok(Scenario {
        scene,
        noise,
        motions,
        rig: rig_from_document(&doc)?,
        frame_interval,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(path, &text)
}

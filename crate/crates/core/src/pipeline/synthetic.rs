//! Synthetic frame sequences with known ground truth.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::exploration::sim::{random_room, simulate_observation, SceneSpec, SimScene};
use crate::geometry::{Pose, Vec3};

use super::{Frame, MapObject, ObjectMapFile, Provenance, SCHEMA_VERSION};

/// A camera standing near the middle of a room and panning around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceSpec {
    pub objects: usize,
    pub frames: usize,
    /// Full camera revolutions over the sequence.
    pub turns: f64,
    pub camera_height: f64,
    /// Downward tilt of the optical axis, degrees.
    pub pitch_deg: f64,
    /// Radius of the small circle the camera center drifts along, meters.
    pub sway: f64,
    /// Inner radius of the ring holding the objects; the outer radius grows
    /// with the object count to keep `area_per_object` square meters each.
    pub r_min: f64,
    pub area_per_object: f64,
    pub texture_density: f64,
    pub dropout: f64,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            objects: 20,
            frames: 240,
            turns: 1.0,
            camera_height: 1.3,
            pitch_deg: 25.0,
            sway: 0.3,
            r_min: 1.6,
            area_per_object: 2.0,
            texture_density: 0.02,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub scene: SimScene,
    pub frames: Vec<Frame>,
    pub ground_truth: ObjectMapFile,
}

/// World-to-camera pose of frame `i` of a panning sequence.
pub fn panning_pose(spec: &SequenceSpec, i: usize) -> Pose {
    let psi = 2.0 * PI * spec.turns * i as f64 / spec.frames.max(1) as f64;
    let drift = psi / 3.0;
    let eye = Vec3::new(spec.sway * drift.cos(), spec.sway * drift.sin(), spec.camera_height);
    let p = spec.pitch_deg.to_radians();
    let forward = Vec3::new(psi.cos() * p.cos(), psi.sin() * p.cos(), -p.sin());
    Pose::look_at(eye, eye + forward, Vec3::z())
}

/// The scene's objects as a map file.
pub fn ground_truth_map(scene: &SimScene) -> ObjectMapFile {
    ObjectMapFile {
        schema_version: SCHEMA_VERSION,
        objects: scene
            .objects
            .iter()
            .map(|o| MapObject::from_model(o.id, o.label.clone(), &o.ground_truth()))
            .collect(),
        provenance: Provenance {
            config_hash: String::new(),
            seed: scene.seed,
        },
    }
}

impl SequenceSpec {
    pub fn r_max(&self) -> f64 {
        (self.r_min * self.r_min + self.area_per_object * self.objects as f64 / PI).sqrt()
    }
}

pub fn generate_sequence(seed: u64, spec: &SequenceSpec) -> Sequence {
    let scene_spec = SceneSpec {
        objects: spec.objects,
        texture_density: spec.texture_density,
        gap: 0.1,
        ..SceneSpec::default()
    };
    let mut scene = random_room(seed, &scene_spec, spec.r_min, spec.r_max());
    scene.sensor.dropout = spec.dropout;
    scene.sensor.depth_sigma = 0.01;
    scene.sensor.bbox_sigma_px = 2.0;
    let frames = (0..spec.frames)
        .map(|i| simulate_observation(&scene, &panning_pose(spec, i), i as u64))
        .collect();
    let ground_truth = ground_truth_map(&scene);
    Sequence {
        scene,
        frames,
        ground_truth,
    }
}

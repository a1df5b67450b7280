//! Browser bindings for three interactive views of the mapping backend:
//! isolation-forest outlier filtering of an object's point cloud, the yaw
//! score curve of line-alignment orientation sampling, and a step-by-step
//! exploration of a simulated tabletop.
//!
//! Every entry point returns a JSON string so the page needs no generated
//! type glue. The plain Rust functions behind them are usable natively.

use std::f64::consts::PI;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use objmap_core::exploration::sim::{
    default_intrinsics, random_tabletop, SceneSpec, SensorModel, Shape, SimObject, SimScene, Table,
};
use objmap_core::exploration::{explore, simulate_observation, Policy};
use objmap_core::geometry::{Pose, Vec2, Vec3};
use objmap_core::parameterization::iforest::{build_forest, filter_outliers, DEFAULT_SUBSAMPLE, DEFAULT_TREES};
use objmap_core::parameterization::orientation::{init_orientation, SegmentObservation};
use objmap_core::pipeline::{Config, round_sig};

// ------------------------------------------------------------ iForest

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterDemo {
    /// `[x, y, z]` per point; inliers first, then injected outliers.
    pub points: Vec<[f64; 3]>,
    pub injected: Vec<bool>,
    pub scores: Vec<f64>,
    pub kept: Vec<bool>,
    pub true_center: [f64; 3],
    pub raw_center: [f64; 3],
    pub filtered_center: [f64; 3],
    pub outliers_removed: usize,
    pub inliers_lost: usize,
}

fn arr(v: Vec3) -> [f64; 3] {
    [round_sig(v.x), round_sig(v.y), round_sig(v.z)]
}

fn mean(points: impl Iterator<Item = Vec3>) -> Vec3 {
    let (mut s, mut n) = (Vec3::zeros(), 0.0);
    for p in points {
        s += p;
        n += 1.0;
    }
    if n > 0.0 {
        s / n
    } else {
        s
    }
}

/// A box-shaped cloud of `inliers` points plus uniformly scattered outliers
/// (`outlier_fraction` of the total) in a region `spread` times the box
/// size, filtered with the default forest.
pub fn filter_demo(seed: u64, inliers: usize, outlier_fraction: f64, spread: f64) -> Result<FilterDemo, String> {
    if !(0.0..0.9).contains(&outlier_fraction) {
        return Err(format!("outlier fraction must be in [0, 0.9), got {outlier_fraction}"));
    }
    if !(1.0..=50.0).contains(&spread) {
        return Err(format!("spread must be in [1, 50], got {spread}"));
    }
    if !(10..=20_000).contains(&inliers) {
        return Err(format!("inlier count must be in [10, 20000], got {inliers}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = Vec3::new(0.15, 0.08, 0.05);
    let n_out = (inliers as f64 * outlier_fraction / (1.0 - outlier_fraction)).round() as usize;
    let mut points: Vec<Vec3> = (0..inliers)
        .map(|_| half.map(|h| h * rng.random_range(-1.0..1.0)))
        .collect();
    points.extend((0..n_out).map(|_| half.map(|h| spread * h * rng.random_range(-1.0..1.0))));
    let forest = build_forest(&points, DEFAULT_TREES, DEFAULT_SUBSAMPLE.min(points.len()), seed)
        .map_err(|e| e.to_string())?;
    let result = filter_outliers(&points, &forest);
    let mut kept = vec![false; points.len()];
    for &i in &result.indices {
        kept[i] = true;
    }
    let injected: Vec<bool> = (0..points.len()).map(|i| i >= inliers).collect();
    Ok(FilterDemo {
        outliers_removed: (inliers..points.len()).filter(|&i| !kept[i]).count(),
        inliers_lost: (0..inliers).filter(|&i| !kept[i]).count(),
        raw_center: arr(mean(points.iter().copied())),
        filtered_center: arr(mean(result.inliers.iter().copied())),
        true_center: [0.0; 3],
        points: points.iter().map(|p| arr(*p)).collect(),
        scores: result.scores.iter().map(|&s| round_sig(s)).collect(),
        injected,
        kept,
    })
}

// ------------------------------------------------------------ yaw

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YawDemo {
    pub true_yaw_deg: f64,
    /// `(sample yaw in degrees, accumulated score)`.
    pub samples: Vec<(f64, f64)>,
    pub chosen_yaw_deg: f64,
    /// Error modulo the quarter-turn symmetry, degrees.
    pub error_deg: f64,
    pub segments: usize,
}

/// Views a single box from `views` directions around it and scores the 30
/// yaw samples against the detected line segments.
pub fn yaw_demo(seed: u64, true_yaw_deg: f64, noise_deg: f64, views: usize) -> Result<YawDemo, String> {
    if !(1..=60).contains(&views) {
        return Err(format!("view count must be in [1, 60], got {views}"));
    }
    if !(0.0..=20.0).contains(&noise_deg) {
        return Err(format!("segment noise must be in [0, 20] degrees, got {noise_deg}"));
    }
    if !true_yaw_deg.is_finite() {
        return Err("yaw must be finite".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Vec3::new(0.12, 0.07, 0.05);
    let object = SimObject {
        id: 1,
        label: "box".into(),
        shape: Shape::Box,
        t: Vec3::new(0.0, 0.0, 0.75 + s.z),
        yaw: true_yaw_deg.to_radians(),
        s,
        texture_density: 0.5,
    };
    let scene = SimScene {
        table: Table {
            center: Vector2::zeros(),
            half_size: Vector2::new(0.6, 0.4),
            height: 0.75,
        },
        objects: vec![object.clone()],
        seed,
        intrinsics: default_intrinsics(),
        sensor: SensorModel {
            segment_sigma_deg: noise_deg,
            ..SensorModel::noiseless()
        },
    };
    let phase = rng.random_range(0.0..2.0 * PI);
    let observations: Vec<SegmentObservation> = (0..views)
        .map(|k| {
            let a = phase + 2.0 * PI * k as f64 / views as f64;
            let elev = rng.random_range(30.0f64..55.0).to_radians();
            let eye = object.t + 0.7 * Vec3::new(elev.cos() * a.cos(), elev.cos() * a.sin(), elev.sin());
            let camera = Pose::look_at(eye, object.t, Vec3::z());
            let frame = simulate_observation(&scene, &camera, k as u64);
            SegmentObservation {
                intrinsics: frame.intrinsics,
                camera,
                segments: frame.segments,
            }
        })
        .collect();
    let segments = observations.iter().map(|o| o.segments.len()).sum();
    let init = init_orientation(&object.t, &object.s, &observations);
    let d = (init.yaw - object.yaw).rem_euclid(PI / 2.0);
    Ok(YawDemo {
        true_yaw_deg,
        samples: init
            .scores
            .iter()
            .map(|&(y, s)| (round_sig(y.to_degrees()), round_sig(s)))
            .collect(),
        chosen_yaw_deg: round_sig(init.yaw.to_degrees()),
        error_deg: round_sig(d.min(PI / 2.0 - d).to_degrees()),
        segments,
    })
}

// ------------------------------------------------------------ exploration

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Footprint {
    pub label: String,
    pub corners: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSummary {
    pub step: usize,
    pub view: String,
    pub mean_iou_3d: f64,
    pub mean_cde_cm: Option<f64>,
    /// Mean per-cell grid entropy of every tracked object, bits.
    pub entropies: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplorationDemo {
    pub policy: String,
    pub table: [f64; 4],
    pub ground_truth: Vec<Footprint>,
    pub estimates: Vec<Footprint>,
    pub steps: Vec<StepSummary>,
    pub stopped_early: bool,
}

fn footprint(label: &str, corners: [Vec2; 4]) -> Footprint {
    Footprint {
        label: label.to_string(),
        corners: corners.iter().map(|c| [round_sig(c.x), round_sig(c.y)]).collect(),
    }
}

/// Explores a random tabletop with `objects` objects using `policy`
/// (`nbv`, `random`, `coverage` or `init`).
pub fn exploration_demo(seed: u64, objects: usize, policy: &str) -> Result<ExplorationDemo, String> {
    let policy: Policy = policy.parse()?;
    if !(1..=10).contains(&objects) {
        return Err(format!("object count must be in [1, 10], got {objects}"));
    }
    let scene = random_tabletop(seed, &SceneSpec { objects, ..SceneSpec::default() });
    let run = explore(&scene, policy, &Config::default(), seed);
    let t = scene.table;
    Ok(ExplorationDemo {
        policy: format!("{policy:?}").to_lowercase(),
        table: [t.center.x - t.half_size.x, t.center.y - t.half_size.y, t.center.x + t.half_size.x, t.center.y + t.half_size.y],
        ground_truth: scene
            .objects
            .iter()
            .map(|o| footprint(&o.label, o.bounding_box().footprint()))
            .collect(),
        estimates: run
            .final_map
            .objects
            .iter()
            .map(|o| footprint(&o.label, o.model().as_cube().footprint()))
            .collect(),
        steps: run
            .trace
            .iter()
            .map(|s| StepSummary {
                step: s.step,
                view: format!("{:?}", s.view).to_lowercase(),
                mean_iou_3d: round_sig(s.metrics.mean_iou_3d),
                mean_cde_cm: s.metrics.mean_cde_cm.map(round_sig),
                entropies: s.objects.iter().map(|o| (o.id, round_sig(o.h_bar))).collect(),
            })
            .collect(),
        stopped_early: run.stopped_early,
    })
}

// ------------------------------------------------------------ bindings

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = filterDemo)]
pub fn filter_demo_js(seed: u32, inliers: u32, outlier_fraction: f64, spread: f64) -> Result<String, JsValue> {
    to_js(filter_demo(seed.into(), inliers as usize, outlier_fraction, spread))
}

#[wasm_bindgen(js_name = yawDemo)]
pub fn yaw_demo_js(seed: u32, true_yaw_deg: f64, noise_deg: f64, views: u32) -> Result<String, JsValue> {
    to_js(yaw_demo(seed.into(), true_yaw_deg, noise_deg, views as usize))
}

#[wasm_bindgen(js_name = explorationDemo)]
pub fn exploration_demo_js(seed: u32, objects: u32, policy: &str) -> Result<String, JsValue> {
    to_js(exploration_demo(seed.into(), objects as usize, policy))
}

//! Fitting cube and quadric models to an object's accumulated points.
//!
//! Center and extent come from the isolation-forest inliers; cubes then get a
//! yaw from line alignment and a local refinement of yaw and extents.

pub mod iforest;
pub mod orientation;

use serde::{Deserialize, Serialize};

use crate::error::ParamError;
use crate::geometry::{rot_z, CubeModel, QuadricModel, Vec3};

pub use iforest::{build_forest, filter_outliers, FilterResult, IsolationForest};
pub use orientation::{
    init_orientation, refine_pose, OrientationInit, RefineParams, RefineResult,
    SegmentObservation, MIN_HALF_EXTENT,
};

/// Labels represented by a quadric; every other label gets a cube.
pub const QUADRIC_LABELS: &[&str] = &[
    "ball",
    "sports ball",
    "bottle",
    "cup",
    "bowl",
    "vase",
    "can",
    "mug",
];

/// Labels with a well-defined orientation.
pub const CUBE_LABELS: &[&str] = &[
    "book", "keyboard", "chair", "laptop", "monitor", "tv", "mouse", "box", "remote",
    "cell phone", "table", "couch", "bed", "microwave", "suitcase",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cube,
    Quadric,
}

impl ModelKind {
    pub fn for_label(label: &str) -> Self {
        if QUADRIC_LABELS.contains(&label) {
            ModelKind::Quadric
        } else {
            ModelKind::Cube
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectModel {
    Cube(CubeModel),
    Quadric(QuadricModel),
}

impl ObjectModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            ObjectModel::Cube(_) => ModelKind::Cube,
            ObjectModel::Quadric(_) => ModelKind::Quadric,
        }
    }

    pub fn center(&self) -> Vec3 {
        match self {
            ObjectModel::Cube(c) => c.t,
            ObjectModel::Quadric(q) => q.t,
        }
    }

    pub fn yaw(&self) -> f64 {
        match self {
            ObjectModel::Cube(c) => c.yaw,
            ObjectModel::Quadric(_) => 0.0,
        }
    }

    pub fn half_extents(&self) -> Vec3 {
        match self {
            ObjectModel::Cube(c) => c.s,
            ObjectModel::Quadric(q) => q.s,
        }
    }

    /// The gravity-aligned box used for visibility, grids and box metrics.
    pub fn as_cube(&self) -> CubeModel {
        match self {
            ObjectModel::Cube(c) => *c,
            ObjectModel::Quadric(q) => q.bounding_cube(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEstimate {
    pub model: ObjectModel,
    pub inlier_count: usize,
    /// `(yaw sample, score)` pairs from the last orientation sweep.
    pub score_history: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamConfig {
    pub trees: usize,
    pub subsample: usize,
    pub refine: RefineParams,
}

impl Default for ParamConfig {
    fn default() -> Self {
        Self {
            trees: iforest::DEFAULT_TREES,
            subsample: iforest::DEFAULT_SUBSAMPLE,
            refine: RefineParams::default(),
        }
    }
}

/// Mean and half-range of the inliers, with every half-extent clamped to
/// [`MIN_HALF_EXTENT`].
pub fn estimate_centroid_scale(inliers: &[Vec3]) -> Result<(Vec3, Vec3), ParamError> {
    if inliers.len() < iforest::MIN_INLIERS {
        return Err(ParamError::TooFewPoints {
            needed: iforest::MIN_INLIERS,
            got: inliers.len(),
        });
    }
    let t = inliers.iter().sum::<Vec3>() / inliers.len() as f64;
    Ok((t, half_range(inliers.iter().copied())))
}

fn half_range(points: impl Iterator<Item = Vec3>) -> Vec3 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    ((hi - lo) / 2.0).map(|v| v.max(MIN_HALF_EXTENT))
}

/// Full fitting pipeline for one object's point cloud.
///
/// `observations` are the per-frame segments that fell inside the object's
/// detections; they only matter for cubes.
pub fn parameterize(
    points: &[Vec3],
    observations: &[SegmentObservation],
    kind: ModelKind,
    config: &ParamConfig,
    seed: u64,
) -> Result<ObjectEstimate, ParamError> {
    let psi = config.subsample.min(points.len());
    let forest = build_forest(points, config.trees, psi, seed)?;
    let filtered = filter_outliers(points, &forest);
    let (t, s) = estimate_centroid_scale(&filtered.inliers)?;
    let inlier_count = filtered.inliers.len();
    match kind {
        ModelKind::Quadric => Ok(ObjectEstimate {
            model: ObjectModel::Quadric(QuadricModel { t, s }),
            inlier_count,
            score_history: Vec::new(),
        }),
        ModelKind::Cube => {
            let init = init_orientation(&t, &s, observations);
            // Extents measured along the object's own axes once yaw is known.
            let r = rot_z(-init.yaw);
            let s_aligned = half_range(filtered.inliers.iter().map(|p| r * (p - t)));
            let cube = CubeModel {
                t,
                yaw: init.yaw,
                s: s_aligned,
            };
            let refined = if init.has_segments() {
                refine_pose(&cube, observations, &config.refine).cube
            } else {
                cube
            };
            Ok(ObjectEstimate {
                model: ObjectModel::Cube(refined),
                inlier_count,
                score_history: init.scores,
            })
        }
    }
}

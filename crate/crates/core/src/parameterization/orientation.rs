//! Yaw estimation by aligning projected cube edges with detected 2-D line
//! segments: a coarse sweep over 30 yaw samples followed by a local
//! coordinate-descent refinement of yaw and extents.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::geometry::{
    angle_between_lines, line_angle, normalize_yaw, project_unchecked, CameraIntrinsics,
    CubeModel, LineSegment2D, Pose, Projection, Vec2, CUBE_EDGES,
};

pub const YAW_SAMPLES: usize = 30;
/// Angular inlier threshold, degrees.
pub const ALIGN_THRESHOLD_DEG: f64 = 5.0;
/// Segments within this angle of an edge count as parallel to it (degrees).
pub const PARALLEL_THRESHOLD_DEG: f64 = 10.0;
/// Smallest half-extent allowed anywhere (meters).
pub const MIN_HALF_EXTENT: f64 = 0.01;

/// Segments of one frame that fall inside the object's detection, together
/// with the camera that saw them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentObservation {
    pub intrinsics: CameraIntrinsics,
    /// World-to-camera pose.
    pub camera: Pose,
    pub segments: Vec<LineSegment2D>,
}

/// A projected cube edge.
#[derive(Debug, Clone, Copy)]
struct ImageEdge {
    seg: LineSegment2D,
    angle: f64,
}

fn projected_edges(cube: &CubeModel, k: &CameraIntrinsics, camera: &Pose) -> Vec<ImageEdge> {
    let px: [Option<Vec2>; 8] = std::array::from_fn(|i| {
        match project_unchecked(&cube.to_world(&cube.object_vertex(i)), k, camera) {
            Projection::Pixel(p) => Some(p),
            Projection::Behind => None,
        }
    });
    CUBE_EDGES
        .iter()
        .filter_map(|&(a, b)| {
            let (p0, p1) = (px[a]?, px[b]?);
            let d = p1 - p0;
            (d.norm_squared() > 1e-12).then(|| ImageEdge {
                seg: LineSegment2D { p0, p1 },
                angle: line_angle(d),
            })
        })
        .collect()
}

/// Smallest angular distance (degrees) from `angle` to any edge.
fn nearest_angle_deg(edges: &[ImageEdge], angle: f64) -> Option<f64> {
    edges
        .iter()
        .map(|e| angle_between_lines(angle, e.angle).to_degrees())
        .min_by(f64::total_cmp)
}

fn segment_angles(segments: &[LineSegment2D]) -> Vec<f64> {
    segments
        .iter()
        .filter(|s| s.p0 != s.p1)
        .map(|s| line_angle(s.p1 - s.p0))
        .collect()
}

/// Per-frame alignment score and mean squared angular error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameScore {
    pub score: f64,
    /// Mean squared angular error (degrees²) of the segments under the threshold.
    pub mean_error: f64,
    pub n_segments: usize,
    pub n_aligned: usize,
}

/// Score of one frame for a candidate cube; `None` when the frame has no segments.
pub fn frame_score(cube: &CubeModel, obs: &SegmentObservation) -> Option<FrameScore> {
    let angles = segment_angles(&obs.segments);
    if angles.is_empty() {
        return None;
    }
    let edges = projected_edges(cube, &obs.intrinsics, &obs.camera);
    let mut n_aligned = 0usize;
    let mut err_sum = 0.0;
    for a in &angles {
        if let Some(d) = nearest_angle_deg(&edges, *a) {
            if d < ALIGN_THRESHOLD_DEG {
                n_aligned += 1;
                err_sum += d * d;
            }
        }
    }
    let n_segments = angles.len();
    if n_aligned == 0 {
        return Some(FrameScore {
            score: 0.0,
            mean_error: f64::INFINITY,
            n_segments,
            n_aligned,
        });
    }
    let mean_error = err_sum / n_aligned as f64;
    let ratio = n_aligned as f64 / n_segments as f64;
    // Large mean errors would drive the score negative; clamp at zero.
    let score = (ratio * (1.0 + 0.1 * (ALIGN_THRESHOLD_DEG - mean_error))).max(0.0);
    Some(FrameScore {
        score,
        mean_error,
        n_segments,
        n_aligned,
    })
}

/// The 30 yaw samples: `-π/2 + kπ/30`, `k = 0..30`.
pub fn yaw_samples() -> [f64; YAW_SAMPLES] {
    std::array::from_fn(|k| -FRAC_PI_2 + k as f64 * PI / YAW_SAMPLES as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrientationInit {
    pub yaw: f64,
    /// Accumulated alignment error of the winning sample; infinite when no
    /// segment was available.
    pub error: f64,
    /// `(yaw sample, accumulated score)` for every sample.
    pub scores: Vec<(f64, f64)>,
}

impl OrientationInit {
    pub fn has_segments(&self) -> bool {
        self.error.is_finite()
    }
}

/// Picks the yaw sample whose projected edges best agree with the segments,
/// summing per-frame scores over all observations.
pub fn init_orientation(
    t: &crate::geometry::Vec3,
    s: &crate::geometry::Vec3,
    observations: &[SegmentObservation],
) -> OrientationInit {
    let has_segments = observations.iter().any(|o| !o.segments.is_empty());
    if !has_segments {
        return OrientationInit {
            yaw: 0.0,
            error: f64::INFINITY,
            scores: Vec::new(),
        };
    }
    let mut scores = Vec::with_capacity(YAW_SAMPLES);
    let mut best: Option<(f64, f64, f64)> = None;
    for yaw in yaw_samples() {
        let cube = CubeModel { t: *t, yaw, s: *s };
        let mut total = 0.0;
        let mut error = 0.0;
        for obs in observations {
            if let Some(fs) = frame_score(&cube, obs) {
                total += fs.score;
                if fs.mean_error.is_finite() {
                    error += fs.mean_error;
                } else {
                    error += ALIGN_THRESHOLD_DEG * ALIGN_THRESHOLD_DEG;
                }
            }
        }
        scores.push((yaw, total));
        if best.is_none_or(|(_, b, _)| total > b) {
            best = Some((yaw, total, error));
        }
    }
    let (yaw, _, error) = best.expect("at least one sample");
    OrientationInit { yaw, error, scores }
}

/// Object term of the joint cost: angular misalignment plus the pixel
/// distance of every segment to its nearest parallel projected edge.
///
/// Returns `None` when no segment has a parallel edge in any frame.
pub fn alignment_objective(cube: &CubeModel, observations: &[SegmentObservation]) -> Option<f64> {
    let mut total = 0.0;
    let mut any_parallel = false;
    for obs in observations {
        let angles = segment_angles(&obs.segments);
        if angles.is_empty() {
            continue;
        }
        let edges = projected_edges(cube, &obs.intrinsics, &obs.camera);
        let mut ang_sum = 0.0;
        let mut dist_sum = 0.0;
        let mut n_parallel = 0usize;
        for (seg, a) in obs.segments.iter().filter(|s| s.p0 != s.p1).zip(&angles) {
            let d = nearest_angle_deg(&edges, *a).unwrap_or(PARALLEL_THRESHOLD_DEG);
            let d = d.min(PARALLEL_THRESHOLD_DEG);
            ang_sum += d * d;
            let nearest = edges
                .iter()
                .filter(|e| angle_between_lines(*a, e.angle).to_degrees() < PARALLEL_THRESHOLD_DEG)
                .map(|e| 0.5 * (e.seg.distance_to_point(&seg.p0) + e.seg.distance_to_point(&seg.p1)))
                .min_by(f64::total_cmp);
            if let Some(dist) = nearest {
                dist_sum += dist;
                n_parallel += 1;
            }
        }
        total += ang_sum / angles.len() as f64;
        if n_parallel > 0 {
            any_parallel = true;
            total += dist_sum / n_parallel as f64;
        }
    }
    any_parallel.then_some(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineParams {
    pub max_iterations: usize,
    /// Initial yaw step, radians.
    pub yaw_step: f64,
    /// Initial relative extent step.
    pub scale_step: f64,
    pub shrink: f64,
    pub relative_tolerance: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            yaw_step: PI / 180.0,
            scale_step: 0.02,
            shrink: 0.5,
            relative_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineResult {
    pub cube: CubeModel,
    /// Objective after every iteration, starting with the initial value.
    pub trace: Vec<f64>,
}

/// Coordinate descent over yaw and the three half-extents; the center stays
/// fixed. The objective is non-increasing along `trace`.
pub fn refine_pose(
    init: &CubeModel,
    observations: &[SegmentObservation],
    params: &RefineParams,
) -> RefineResult {
    let Some(mut best) = alignment_objective(init, observations) else {
        return RefineResult {
            cube: *init,
            trace: Vec::new(),
        };
    };
    let mut cube = *init;
    let mut trace = vec![best];
    let mut yaw_step = params.yaw_step;
    let mut scale_step = params.scale_step;
    let eval = |c: &CubeModel| alignment_objective(c, observations).unwrap_or(f64::INFINITY);

    for _ in 0..params.max_iterations {
        let start = best;
        for coord in 0..4 {
            for dir in [1.0, -1.0] {
                let mut cand = cube;
                if coord == 0 {
                    cand.yaw = normalize_yaw(cube.yaw + dir * yaw_step);
                } else {
                    let i = coord - 1;
                    cand.s[i] = (cube.s[i] * (1.0 + dir * scale_step)).max(MIN_HALF_EXTENT);
                }
                let f = eval(&cand);
                if f < best {
                    best = f;
                    cube = cand;
                    break;
                }
            }
        }
        trace.push(best);
        if best < start {
            if (start - best) / start.abs().max(1e-12) < params.relative_tolerance {
                break;
            }
        } else {
            yaw_step *= params.shrink;
            scale_step *= params.shrink;
            if yaw_step < 1e-6 && scale_step < 1e-6 {
                break;
            }
        }
    }
    RefineResult { cube, trace }
}

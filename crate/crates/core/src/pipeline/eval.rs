//! Box metrics between an estimated map and ground truth.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::geometry::{convex_clip, polygon_area, CubeModel};
use crate::parameterization::ObjectModel;

use super::ObjectMapFile;

/// Ground truth and estimates farther apart than this are not matched, meters.
pub const MATCH_GATE: f64 = 0.5;

/// Footprint intersection area of two gravity-aligned boxes.
fn footprint_intersection(a: &CubeModel, b: &CubeModel) -> f64 {
    polygon_area(&convex_clip(&a.footprint(), &b.footprint())).abs()
}

/// Top-view IoU of the box footprints.
pub fn iou_2d_top(a: &CubeModel, b: &CubeModel) -> f64 {
    let inter = footprint_intersection(a, b);
    let union = 4.0 * a.s.x * a.s.y + 4.0 * b.s.x * b.s.y - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Volumetric IoU of two gravity-aligned boxes.
pub fn iou_3d(a: &CubeModel, b: &CubeModel) -> f64 {
    let dz = (a.t.z + a.s.z).min(b.t.z + b.s.z) - (a.t.z - a.s.z).max(b.t.z - b.s.z);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = footprint_intersection(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Yaw error in degrees, modulo the quarter-turn symmetry of a box with
/// interchangeable length and width; in `[0, 45]`.
pub fn yaw_error_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(FRAC_PI_2);
    d.min(FRAC_PI_2 - d).to_degrees()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMetrics {
    pub gt_id: u64,
    pub label: String,
    pub map_id: Option<u64>,
    /// Center distance error, centimeters.
    pub cde_cm: Option<f64>,
    /// Only for pairs of oriented boxes.
    pub yae_deg: Option<f64>,
    pub iou_2d: f64,
    pub iou_3d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub objects: Vec<ObjectMetrics>,
    pub gt_objects: usize,
    pub map_objects: usize,
    pub matched: usize,
    pub misses: usize,
    /// Over matched objects.
    pub mean_cde_cm: Option<f64>,
    /// Over matched cube pairs.
    pub mean_yae_deg: Option<f64>,
    /// Over all ground-truth objects; misses count as zero.
    pub mean_iou_2d: f64,
    pub mean_iou_3d: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

/// Matches ground truth to estimates by nearest centroid (one-to-one,
/// greedy by distance, within [`MATCH_GATE`]) and scores each pair.
pub fn eval_models(map: &[(u64, ObjectModel)], gt: &[(u64, String, ObjectModel)]) -> MetricsReport {
    let mut pairs = Vec::new();
    for (gi, (_, _, g)) in gt.iter().enumerate() {
        for (mi, (_, m)) in map.iter().enumerate() {
            let d = (g.center() - m.center()).norm();
            if d <= MATCH_GATE {
                pairs.push((d, gi, mi));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gt_match = vec![None; gt.len()];
    let mut map_used = vec![false; map.len()];
    for (_, gi, mi) in pairs {
        if gt_match[gi].is_none() && !map_used[mi] {
            gt_match[gi] = Some(mi);
            map_used[mi] = true;
        }
    }

    let objects: Vec<ObjectMetrics> = gt
        .iter()
        .zip(&gt_match)
        .map(|((gid, label, g), m)| match m {
            None => ObjectMetrics {
                gt_id: *gid,
                label: label.clone(),
                map_id: None,
                cde_cm: None,
                yae_deg: None,
                iou_2d: 0.0,
                iou_3d: 0.0,
            },
            Some(mi) => {
                let (mid, m) = &map[*mi];
                let (gc, mc) = (g.as_cube(), m.as_cube());
                let yae_deg = match (g, m) {
                    (ObjectModel::Cube(a), ObjectModel::Cube(b)) => Some(yaw_error_deg(a.yaw, b.yaw)),
                    _ => None,
                };
                ObjectMetrics {
                    gt_id: *gid,
                    label: label.clone(),
                    map_id: Some(*mid),
                    cde_cm: Some((g.center() - m.center()).norm() * 100.0),
                    yae_deg,
                    iou_2d: iou_2d_top(&gc, &mc),
                    iou_3d: iou_3d(&gc, &mc),
                }
            }
        })
        .collect();

    let matched = objects.iter().filter(|o| o.map_id.is_some()).count();
    MetricsReport {
        gt_objects: gt.len(),
        map_objects: map.len(),
        matched,
        misses: gt.len() - matched,
        mean_cde_cm: mean(objects.iter().filter_map(|o| o.cde_cm)),
        mean_yae_deg: mean(objects.iter().filter_map(|o| o.yae_deg)),
        mean_iou_2d: mean(objects.iter().map(|o| o.iou_2d)).unwrap_or(0.0),
        mean_iou_3d: mean(objects.iter().map(|o| o.iou_3d)).unwrap_or(0.0),
        objects,
    }
}

pub fn eval_map(map: &ObjectMapFile, gt: &ObjectMapFile) -> MetricsReport {
    let m: Vec<(u64, ObjectModel)> = map.objects.iter().map(|o| (o.id, o.model())).collect();
    let g: Vec<(u64, String, ObjectModel)> = gt
        .objects
        .iter()
        .map(|o| (o.id, o.label.clone(), o.model()))
        .collect();
    eval_models(&m, &g)
}

//! Object-level data association.
//!
//! A detection from the current frame (a [`LocalObject`]) joins an existing
//! [`GlobalObject`] when the box fitted to the global object's projected
//! points overlaps the detection (project IoU) and at least one of three
//! weaker cues agrees: the motion-extrapolated box overlaps the detection,
//! a per-axis rank-sum test accepts the two point clouds, or a single-sample
//! t-test accepts the new centroid against the centroid history. Duplicates
//! left behind are merged after every frame with a two-sample t-test on the
//! centroid histories.

pub mod hypothesis;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{bbox_iou, project_bbox, BBox2D, CameraIntrinsics, Pose, Vec3};
use crate::parameterization::ObjectEstimate;

pub use hypothesis::{
    double_t_test, np_test_3d, rank_sum, rank_sum_test, single_t_test, single_t_test_1d,
    TestOutcome,
};

/// How candidate pairs are accepted. `Ensemble` is the full method; the
/// others are the ablations it is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Ensemble,
    /// Box tracking only: extrapolated (or previous) box IoU, no merging.
    IouOnly,
    /// Project IoU plus motion IoU or the rank-sum test, no merging.
    IouNp,
    /// Project IoU plus motion IoU or the single-sample t-test, no merging.
    IouTTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationConfig {
    pub alpha: f64,
    pub iou_motion_min: f64,
    pub iou_project_min: f64,
    /// Centroid gate for duplicate merging, meters.
    pub merge_distance_max: f64,
    /// Maximum stored points per object (reservoir subsampled beyond this).
    pub subsample_cap: usize,
    /// Distance accepted when a t-test has zero variance, meters.
    pub degenerate_distance: f64,
    pub strategy: Strategy,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            iou_motion_min: 0.3,
            iou_project_min: 0.3,
            merge_distance_max: 1.0,
            subsample_cap: 5000,
            degenerate_distance: 0.1,
            strategy: Strategy::Ensemble,
        }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        for (name, v) in [
            ("iou_motion_min", self.iou_motion_min),
            ("iou_project_min", self.iou_project_min),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        if self.subsample_cap < 1 {
            return Err("subsample_cap must be positive".into());
        }
        Ok(())
    }
}

/// A 3-D instance observed in a single frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalObject {
    pub label: String,
    pub bbox: BBox2D,
    /// World-frame points.
    pub points: Vec<Vec3>,
    pub centroid: Option<Vec3>,
    pub frame_id: u64,
}

impl LocalObject {
    pub fn new(label: impl Into<String>, bbox: BBox2D, points: Vec<Vec3>, frame_id: u64) -> Self {
        let centroid =
            (!points.is_empty()).then(|| points.iter().sum::<Vec3>() / points.len() as f64);
        Self {
            label: label.into(),
            bbox,
            points,
            centroid,
            frame_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxObservation {
    pub frame_id: u64,
    pub bbox: BBox2D,
}

/// An entity accumulated over several frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalObject {
    pub id: u64,
    pub votes: BTreeMap<String, u32>,
    pub points: Vec<Vec3>,
    /// Points offered to the reservoir so far.
    pub points_seen: u64,
    pub centroid_history: Vec<Vec3>,
    /// Every frame this object was matched in, oldest first.
    pub observations: Vec<BoxObservation>,
    pub estimate: Option<ObjectEstimate>,
}

impl GlobalObject {
    /// A new object holding a single observation.
    pub fn from_local(id: u64, local: &LocalObject, centroid: Vec3) -> Self {
        Self {
            id,
            votes: BTreeMap::from([(local.label.clone(), 1)]),
            points: local.points.clone(),
            points_seen: local.points.len() as u64,
            centroid_history: vec![centroid],
            observations: vec![BoxObservation {
                frame_id: local.frame_id,
                bbox: local.bbox,
            }],
            estimate: None,
        }
    }

    /// Majority label; ties resolve to the lexicographically smallest.
    pub fn label(&self) -> &str {
        let mut best: Option<(&str, u32)> = None;
        for (l, &n) in &self.votes {
            if best.is_none_or(|(_, b)| n > b) {
                best = Some((l, n));
            }
        }
        best.map(|(l, _)| l).unwrap_or("")
    }

    pub fn mean_centroid(&self) -> Vec3 {
        self.centroid_history.iter().sum::<Vec3>() / self.centroid_history.len() as f64
    }

    fn box_at(&self, frame_id: u64) -> Option<BBox2D> {
        self.observations
            .iter()
            .rev()
            .take(2)
            .find(|o| o.frame_id == frame_id)
            .map(|o| o.bbox)
    }

    fn absorb_points(&mut self, new_points: &[Vec3], cap: usize, rng: &mut ChaCha8Rng) {
        for p in new_points {
            self.points_seen += 1;
            if self.points.len() < cap {
                self.points.push(*p);
            } else {
                let j = rng.random_range(0..self.points_seen);
                if (j as usize) < cap {
                    self.points[j as usize] = *p;
                }
            }
        }
    }
}

/// Uniform-motion IoU: the box at `t` is extrapolated from the boxes at
/// `t-1` and `t-2`. `None` when either of those is missing.
pub fn motion_iou(global: &GlobalObject, local: &LocalObject) -> Option<f64> {
    let t = local.frame_id;
    if t < 2 {
        return None;
    }
    let b1 = global.box_at(t - 1)?;
    let b2 = global.box_at(t - 2)?;
    let predicted = BBox2D::new(
        2.0 * b1.xmin - b2.xmin,
        2.0 * b1.ymin - b2.ymin,
        2.0 * b1.xmax - b2.xmax,
        2.0 * b1.ymax - b2.ymax,
    );
    Some(bbox_iou(&predicted, &local.bbox))
}

/// Box IoU used by the tracking-only baseline: motion IoU when available,
/// otherwise the IoU with the box from the previous frame.
fn tracking_iou(global: &GlobalObject, local: &LocalObject) -> Option<f64> {
    motion_iou(global, local).or_else(|| {
        let prev = global.box_at(local.frame_id.checked_sub(1)?)?;
        Some(bbox_iou(&prev, &local.bbox))
    })
}

/// The accumulating object map; the single writer of association state.
#[derive(Debug, Clone)]
pub struct GlobalMap {
    pub objects: BTreeMap<u64, GlobalObject>,
    next_id: u64,
    rng: ChaCha8Rng,
}

impl GlobalMap {
    pub fn new(seed: u64) -> Self {
        Self {
            objects: BTreeMap::new(),
            next_id: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Inserts a prebuilt object; its id must be unused.
    pub fn insert(&mut self, object: GlobalObject) {
        self.next_id = self.next_id.max(object.id + 1);
        self.objects.insert(object.id, object);
    }

    /// Adds a new object built from `local` and returns its id.
    pub fn spawn(&mut self, local: &LocalObject, centroid: Vec3) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.objects
            .insert(id, GlobalObject::from_local(id, local, centroid));
        id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateDiagnostics {
    pub global_id: u64,
    pub project_iou: Option<f64>,
    pub motion_iou: Option<f64>,
    pub np_test: TestOutcome,
    pub single_t_test: TestOutcome,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalDecision {
    pub local_index: usize,
    pub label: String,
    pub matched: Option<u64>,
    pub created: Option<u64>,
    pub candidates: Vec<CandidateDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeRecord {
    pub kept: u64,
    pub removed: u64,
    pub distance: f64,
    pub outcome: TestOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssociationReport {
    pub frame_id: u64,
    pub decisions: Vec<LocalDecision>,
    pub merges: Vec<MergeRecord>,
    pub object_count: usize,
}

impl AssociationReport {
    pub fn matched_pairs(&self) -> Vec<(usize, u64)> {
        self.decisions
            .iter()
            .filter_map(|d| d.matched.map(|g| (d.local_index, g)))
            .collect()
    }

    pub fn created(&self) -> Vec<u64> {
        self.decisions.iter().filter_map(|d| d.created).collect()
    }
}

fn centroid_test(history: &[Vec3], c: &Vec3, cfg: &AssociationConfig) -> TestOutcome {
    match single_t_test(history, c, cfg.alpha) {
        TestOutcome::NotApplicable if history.is_empty() => TestOutcome::NotApplicable,
        // Too few samples or no spread: fall back to a distance gate.
        TestOutcome::DegenerateVariance | TestOutcome::NotApplicable => {
            let m = history.iter().sum::<Vec3>() / history.len() as f64;
            if (m - c).norm() < cfg.degenerate_distance {
                TestOutcome::Accept
            } else {
                TestOutcome::Reject
            }
        }
        other => other,
    }
}

fn evaluate_candidate(
    g: &GlobalObject,
    projected: Option<BBox2D>,
    local: &LocalObject,
    cfg: &AssociationConfig,
) -> CandidateDiagnostics {
    let mut d = CandidateDiagnostics {
        global_id: g.id,
        project_iou: None,
        motion_iou: None,
        np_test: TestOutcome::Skipped,
        single_t_test: TestOutcome::Skipped,
        accepted: false,
    };
    if cfg.strategy == Strategy::IouOnly {
        d.motion_iou = tracking_iou(g, local);
        d.accepted = d.motion_iou.is_some_and(|v| v >= cfg.iou_motion_min);
        return d;
    }
    let p_iou = projected.map_or(0.0, |b| bbox_iou(&b, &local.bbox));
    d.project_iou = Some(p_iou);
    if p_iou < cfg.iou_project_min {
        return d;
    }
    d.motion_iou = motion_iou(g, local);
    if d.motion_iou.is_some_and(|v| v >= cfg.iou_motion_min) {
        d.accepted = true;
        return d;
    }
    if matches!(cfg.strategy, Strategy::Ensemble | Strategy::IouNp) {
        d.np_test = np_test_3d(&local.points, &g.points, cfg.alpha);
        if d.np_test.is_accept() {
            d.accepted = true;
            return d;
        }
    }
    if matches!(cfg.strategy, Strategy::Ensemble | Strategy::IouTTest) {
        if let Some(c) = &local.centroid {
            d.single_t_test = centroid_test(&g.centroid_history, c, cfg);
            d.accepted = d.single_t_test.is_accept();
        } else {
            d.single_t_test = TestOutcome::NotApplicable;
        }
    }
    d
}

/// Associates one frame's detections with the map and, for the ensemble
/// strategy, merges duplicates afterwards.
///
/// Locals without any point cannot seed a new object and are left unmatched
/// when no existing object accepts them.
pub fn associate_frame(
    map: &mut GlobalMap,
    locals: &[LocalObject],
    intrinsics: &CameraIntrinsics,
    camera: &Pose,
    cfg: &AssociationConfig,
) -> AssociationReport {
    let frame_id = locals.first().map_or(0, |l| l.frame_id);

    // Project each global once per frame.
    let projected: BTreeMap<u64, Option<BBox2D>> = if cfg.strategy == Strategy::IouOnly {
        BTreeMap::new()
    } else {
        map.objects
            .iter()
            .map(|(&id, g)| (id, project_bbox(g.points.iter(), intrinsics, camera).ok()))
            .collect()
    };

    let mut decisions: Vec<LocalDecision> = Vec::with_capacity(locals.len());
    let mut accepted: Vec<(f64, usize, u64)> = Vec::new();
    for (i, local) in locals.iter().enumerate() {
        let mut candidates = Vec::new();
        for g in map.objects.values().filter(|g| g.label() == local.label) {
            let d = evaluate_candidate(g, projected.get(&g.id).copied().flatten(), local, cfg);
            if d.accepted {
                let score = d.project_iou.or(d.motion_iou).unwrap_or(0.0);
                accepted.push((score, i, g.id));
            }
            candidates.push(d);
        }
        decisions.push(LocalDecision {
            local_index: i,
            label: local.label.clone(),
            matched: None,
            created: None,
            candidates,
        });
    }

    // One-to-one assignment by descending overlap.
    accepted.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut taken_globals = std::collections::BTreeSet::new();
    for (_, li, gid) in accepted {
        if decisions[li].matched.is_some() || taken_globals.contains(&gid) {
            continue;
        }
        decisions[li].matched = Some(gid);
        taken_globals.insert(gid);
    }

    for (i, local) in locals.iter().enumerate() {
        match decisions[i].matched {
            Some(gid) => {
                let g = map.objects.get_mut(&gid).expect("matched object exists");
                *g.votes.entry(local.label.clone()).or_insert(0) += 1;
                if let Some(c) = local.centroid {
                    g.centroid_history.push(c);
                }
                g.observations.push(BoxObservation {
                    frame_id: local.frame_id,
                    bbox: local.bbox,
                });
                g.absorb_points(&local.points, cfg.subsample_cap, &mut map.rng);
            }
            None => {
                if let Some(c) = local.centroid {
                    let id = map.spawn(local, c);
                    let g = map.objects.get_mut(&id).expect("just inserted");
                    if g.points.len() > cfg.subsample_cap {
                        let keep = subsample_sorted(&mut map.rng, g.points.len(), cfg.subsample_cap);
                        g.points = keep.into_iter().map(|k| g.points[k]).collect();
                    }
                    decisions[i].created = Some(id);
                }
            }
        }
    }

    let merges = if cfg.strategy == Strategy::Ensemble {
        merge_duplicates(map, cfg)
    } else {
        Vec::new()
    };

    AssociationReport {
        frame_id,
        decisions,
        merges,
        object_count: map.len(),
    }
}

fn subsample_sorted(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

fn merge_verdict(a: &GlobalObject, b: &GlobalObject, cfg: &AssociationConfig) -> TestOutcome {
    match double_t_test(&a.centroid_history, &b.centroid_history, cfg.alpha) {
        TestOutcome::NotApplicable if a.centroid_history.is_empty() || b.centroid_history.is_empty() => {
            TestOutcome::NotApplicable
        }
        TestOutcome::DegenerateVariance | TestOutcome::NotApplicable => {
            if (a.mean_centroid() - b.mean_centroid()).norm() < cfg.degenerate_distance {
                TestOutcome::Accept
            } else {
                TestOutcome::Reject
            }
        }
        other => other,
    }
}

/// Merges same-label objects whose centroid histories pass the two-sample
/// t-test. Pairs farther apart than `merge_distance_max` are not tested.
/// The lower id survives.
pub fn merge_duplicates(map: &mut GlobalMap, cfg: &AssociationConfig) -> Vec<MergeRecord> {
    let mut records = Vec::new();
    loop {
        let means: Vec<(u64, Vec3)> = map
            .objects
            .values()
            .map(|g| (g.id, g.mean_centroid()))
            .collect();
        let mut pairs: Vec<(f64, u64, u64)> = Vec::new();
        for (i, (ia, ma)) in means.iter().enumerate() {
            for (ib, mb) in &means[i + 1..] {
                let d = (ma - mb).norm();
                if d <= cfg.merge_distance_max {
                    pairs.push((d, *ia, *ib));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut merged = None;
        for (d, ia, ib) in pairs {
            let (a, b) = (&map.objects[&ia], &map.objects[&ib]);
            if a.label() != b.label() {
                continue;
            }
            let outcome = merge_verdict(a, b, cfg);
            if outcome.is_accept() {
                merged = Some(MergeRecord {
                    kept: ia.min(ib),
                    removed: ia.max(ib),
                    distance: d,
                    outcome,
                });
                break;
            }
        }
        let Some(rec) = merged else { break };
        let removed = map.objects.remove(&rec.removed).expect("present");
        let cap = cfg.subsample_cap;
        let kept = map.objects.get_mut(&rec.kept).expect("present");
        for (l, n) in removed.votes {
            *kept.votes.entry(l).or_insert(0) += n;
        }
        kept.centroid_history.extend(removed.centroid_history);
        kept.observations.extend(removed.observations);
        kept.observations.sort_by_key(|o| o.frame_id);
        kept.points.extend(removed.points);
        kept.points_seen += removed.points_seen;
        if kept.points.len() > cap {
            let keep = subsample_sorted(&mut map.rng, kept.points.len(), cap);
            kept.points = keep.into_iter().map(|k| kept.points[k]).collect();
        }
        kept.estimate = None;
        records.push(rec);
    }
    records
}

//! Ingestion, the incremental mapping loop, map files and evaluation.

pub mod eval;
pub mod format;
pub mod frame;
pub mod synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::association::{associate_frame, AssociationConfig, AssociationReport, GlobalMap, LocalObject};
use crate::error::PipelineError;
use crate::exploration::ExplorationConfig;
use crate::geometry::{BBox2D, CubeModel, LineSegment2D, Pose, QuadricModel, Vec3};
use crate::parameterization::{
    estimate_centroid_scale, parameterize, ModelKind, ObjectEstimate, ObjectModel, ParamConfig,
    SegmentObservation, MIN_HALF_EXTENT,
};
use crate::topomap::{TopoConfig, TopoNode};

pub use eval::{eval_map, MetricsReport, ObjectMetrics};
pub use format::{round_sig, to_canonical_json, to_canonical_line};
pub use frame::{ingest, read_frames, write_frames, Detection, Frame, PointObservation};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    /// Objects are re-fitted every this many frames and at the end.
    pub reparam_interval: usize,
    /// Objects with fewer inliers are flagged as under-observed.
    pub min_inliers: usize,
    /// Per-object segment observations kept for orientation fitting.
    pub max_segment_frames: usize,
    /// Slack around a detection box when assigning segments, pixels.
    pub segment_margin_px: f64,
    /// Detections reaching within this distance of the image border are
    /// treated as truncated and ignored, pixels; 0 keeps them.
    pub border_margin_px: f64,
    /// Points of a detection farther from the detection's median depth than
    /// this multiple of the box's metric size (larger side, at the median
    /// depth) are dropped as background or occluder points; 0 keeps
    /// everything.
    pub depth_band_factor: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            reparam_interval: 10,
            min_inliers: 10,
            max_segment_frames: 20,
            segment_margin_px: 5.0,
            border_margin_px: 10.0,
            depth_band_factor: 0.5,
        }
    }
}

/// Every tunable of the system; JSON overrides may set any subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub association: AssociationConfig,
    pub parameterization: ParamConfig,
    pub mapping: MappingConfig,
    pub topomap: TopoConfig,
    pub exploration: ExplorationConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |m: String| PipelineError::Invalid(m);
        self.association.validate().map_err(|m| invalid(format!("association: {m}")))?;
        self.topomap.validate().map_err(|m| invalid(format!("topomap: {m}")))?;
        self.exploration.validate().map_err(|m| invalid(format!("exploration: {m}")))?;
        let p = &self.parameterization;
        if p.trees == 0 || p.subsample < 2 {
            return Err(invalid("parameterization: trees must be ≥ 1 and subsample ≥ 2".into()));
        }
        if self.mapping.reparam_interval == 0 {
            return Err(invalid("mapping: reparam_interval must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = to_canonical_line(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-detection inputs cut out of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLocals {
    pub locals: Vec<LocalObject>,
    pub segments: Vec<Vec<LineSegment2D>>,
}

fn smallest_containing(boxes: &[BBox2D], inside: impl Fn(&BBox2D) -> bool) -> Option<usize> {
    boxes
        .iter()
        .enumerate()
        .filter(|(_, b)| inside(b))
        .min_by(|a, b| a.1.area().total_cmp(&b.1.area()).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

/// Splits a frame into local objects. A point or segment inside several
/// detection boxes goes to the smallest one.
pub fn extract_locals(frame: &Frame, cfg: &MappingConfig) -> FrameLocals {
    let segment_margin_px = cfg.segment_margin_px;
    let boxes: Vec<BBox2D> = frame.detections.iter().map(|d| d.bbox).collect();
    let mut points = vec![Vec::new(); boxes.len()];
    for p in &frame.points {
        if let Some(i) = smallest_containing(&boxes, |b| b.contains(&p.uv)) {
            points[i].push(p.xyz);
        }
    }
    if cfg.depth_band_factor > 0.0 {
        for (pts, b) in points.iter_mut().zip(&boxes) {
            let size_px = (b.xmax - b.xmin).max(b.ymax - b.ymin);
            keep_depth_band(pts, &frame.camera, cfg.depth_band_factor * size_px / frame.intrinsics.fx);
        }
    }
    let mut segments = vec![Vec::new(); boxes.len()];
    for s in &frame.segments {
        let fits = |b: &BBox2D| {
            let g = BBox2D::new(
                b.xmin - segment_margin_px,
                b.ymin - segment_margin_px,
                b.xmax + segment_margin_px,
                b.ymax + segment_margin_px,
            );
            g.contains(&s.p0) && g.contains(&s.p1)
        };
        if let Some(i) = smallest_containing(&boxes, fits) {
            segments[i].push(*s);
        }
    }
    let locals = frame
        .detections
        .iter()
        .zip(points)
        .map(|(d, pts)| LocalObject::new(d.label.clone(), d.bbox, pts, frame.frame_id))
        .collect();
    FrameLocals { locals, segments }
}

/// Keeps the points within `relative_band × median depth` of the median
/// camera depth.
fn keep_depth_band(points: &mut Vec<Vec3>, camera: &Pose, relative_band: f64) {
    if points.is_empty() {
        return;
    }
    let depth = |p: &Vec3| camera.transform(p).z;
    let mut depths: Vec<f64> = points.iter().map(depth).collect();
    depths.sort_by(f64::total_cmp);
    let median = depths[depths.len() / 2];
    let band = relative_band * median;
    points.retain(|p| (depth(p) - median).abs() <= band);
}

/// Result of absorbing one frame.
#[derive(Debug, Clone)]
pub struct FrameOutcome {
    pub report: AssociationReport,
    pub locals: Vec<LocalObject>,
    /// Global object each local ended up in (after merges), if any.
    pub assigned: Vec<Option<u64>>,
}

/// The incremental mapper: association on every frame, model fitting on a
/// fixed cadence.
#[derive(Debug, Clone)]
pub struct Mapper {
    pub config: Config,
    pub map: GlobalMap,
    pub seed: u64,
    segments: BTreeMap<u64, Vec<SegmentObservation>>,
    failures: BTreeMap<u64, String>,
    dirty: std::collections::BTreeSet<u64>,
    frames: usize,
}

/// Per-object seed derived from the run seed.
pub fn object_seed(seed: u64, id: u64) -> u64 {
    seed ^ id.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl Mapper {
    pub fn new(config: Config, seed: u64) -> Self {
        Self {
            config,
            map: GlobalMap::new(seed),
            seed,
            segments: BTreeMap::new(),
            failures: BTreeMap::new(),
            dirty: Default::default(),
            frames: 0,
        }
    }

    pub fn process_frame(&mut self, frame: &Frame) -> FrameOutcome {
        let FrameLocals { locals, segments } = extract_locals(frame, &self.config.mapping);
        let margin = self.config.mapping.border_margin_px;
        let (w, h) = (frame.intrinsics.width as f64, frame.intrinsics.height as f64);
        let (locals, segments): (Vec<_>, Vec<_>) = locals
            .into_iter()
            .zip(segments)
            .filter(|(l, _)| {
                margin <= 0.0
                    || (l.bbox.xmin >= margin
                        && l.bbox.ymin >= margin
                        && l.bbox.xmax <= w - 1.0 - margin
                        && l.bbox.ymax <= h - 1.0 - margin)
            })
            .unzip();
        let mut report = associate_frame(
            &mut self.map,
            &locals,
            &frame.intrinsics,
            &frame.camera,
            &self.config.association,
        );
        // Frames without usable detections carry no id of their own.
        report.frame_id = frame.frame_id;

        let mut redirect: BTreeMap<u64, u64> = BTreeMap::new();
        for m in &report.merges {
            redirect.insert(m.removed, m.kept);
        }
        let resolve = |mut id: u64| {
            while let Some(&k) = redirect.get(&id) {
                id = k;
            }
            id
        };
        let assigned: Vec<Option<u64>> = report
            .decisions
            .iter()
            .map(|d| d.matched.or(d.created).map(resolve))
            .collect();

        for m in &report.merges {
            if let Some(moved) = self.segments.remove(&m.removed) {
                self.segments.entry(m.kept).or_default().extend(moved);
            }
            self.failures.remove(&m.removed);
            self.dirty.remove(&m.removed);
            self.dirty.insert(m.kept);
        }
        let cap = self.config.mapping.max_segment_frames;
        for (i, id) in assigned.iter().enumerate() {
            let Some(id) = *id else { continue };
            self.dirty.insert(id);
            if segments[i].is_empty() || cap == 0 {
                continue;
            }
            let list = self.segments.entry(id).or_default();
            list.push(SegmentObservation {
                intrinsics: frame.intrinsics,
                camera: frame.camera,
                segments: segments[i].clone(),
            });
            if list.len() > cap {
                list.drain(..list.len() - cap);
            }
        }
        for list in self.segments.values_mut() {
            if list.len() > cap {
                list.drain(..list.len() - cap);
            }
        }

        self.frames += 1;
        if self.frames.is_multiple_of(self.config.mapping.reparam_interval) {
            self.parameterize_dirty();
        }
        FrameOutcome {
            report,
            locals,
            assigned,
        }
    }

    /// Re-fits every object that changed since its last fit.
    pub fn parameterize_dirty(&mut self) {
        let dirty = std::mem::take(&mut self.dirty);
        for id in dirty {
            self.parameterize_object(id);
        }
    }

    fn parameterize_object(&mut self, id: u64) {
        let Some(g) = self.map.objects.get_mut(&id) else {
            return;
        };
        let kind = ModelKind::for_label(g.label());
        let obs = self.segments.get(&id).map(Vec::as_slice).unwrap_or(&[]);
        match parameterize(&g.points, obs, kind, &self.config.parameterization, object_seed(self.seed, id)) {
            Ok(est) => {
                g.estimate = Some(est);
                self.failures.remove(&id);
            }
            Err(e) => {
                g.estimate = None;
                self.failures.insert(id, e.to_string());
            }
        }
    }

    pub fn segment_observations(&self, id: u64) -> &[SegmentObservation] {
        self.segments.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn failure(&self, id: u64) -> Option<&str> {
        self.failures.get(&id).map(String::as_str)
    }

    /// Fits whatever is pending and returns the map file.
    pub fn finish(&mut self) -> ObjectMapFile {
        self.parameterize_dirty();
        self.snapshot()
    }

    /// The current map as a file, without fitting pending objects.
    pub fn snapshot(&self) -> ObjectMapFile {
        let objects = self
            .map
            .objects
            .values()
            .map(|g| {
                let label = g.label().to_string();
                let observations = g.observations.len();
                match &g.estimate {
                    Some(est) => MapObject::from_estimate(g.id, label, est, observations, self.config.mapping.min_inliers),
                    None => MapObject::fallback(g.id, label, &g.points, observations, self.failures.get(&g.id).cloned()),
                }
            })
            .collect();
        ObjectMapFile {
            schema_version: SCHEMA_VERSION,
            objects,
            provenance: Provenance {
                config_hash: self.config.hash(),
                seed: self.seed,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapObject {
    pub id: u64,
    pub label: String,
    pub kind: ModelKind,
    pub t: Vec3,
    pub yaw: f64,
    pub s: Vec3,
    pub inlier_count: usize,
    #[serde(default)]
    pub under_observed: bool,
    #[serde(default)]
    pub observations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl MapObject {
    pub fn from_model(id: u64, label: impl Into<String>, model: &ObjectModel) -> Self {
        Self {
            id,
            label: label.into(),
            kind: model.kind(),
            t: model.center(),
            yaw: model.yaw(),
            s: model.half_extents(),
            inlier_count: 0,
            under_observed: false,
            observations: 0,
            note: None,
        }
    }

    fn from_estimate(id: u64, label: String, est: &ObjectEstimate, observations: usize, min_inliers: usize) -> Self {
        Self {
            inlier_count: est.inlier_count,
            under_observed: est.inlier_count < min_inliers,
            observations,
            ..Self::from_model(id, label, &est.model)
        }
    }

    /// Raw box of the accumulated points when no model could be fitted.
    fn fallback(id: u64, label: String, points: &[Vec3], observations: usize, note: Option<String>) -> Self {
        let kind = ModelKind::for_label(&label);
        let (t, s) = estimate_centroid_scale(points).unwrap_or_else(|_| {
            let t = if points.is_empty() {
                Vec3::zeros()
            } else {
                points.iter().sum::<Vec3>() / points.len() as f64
            };
            (t, Vec3::repeat(MIN_HALF_EXTENT))
        });
        Self {
            id,
            label,
            kind,
            t,
            yaw: 0.0,
            s,
            inlier_count: points.len(),
            under_observed: true,
            observations,
            note,
        }
    }

    pub fn model(&self) -> ObjectModel {
        match self.kind {
            ModelKind::Cube => ObjectModel::Cube(CubeModel {
                t: self.t,
                yaw: self.yaw,
                s: self.s,
            }),
            ModelKind::Quadric => ObjectModel::Quadric(QuadricModel { t: self.t, s: self.s }),
        }
    }

    pub fn topo_node(&self) -> TopoNode {
        TopoNode::from_model(self.id, self.label.clone(), &self.model())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectMapFile {
    pub schema_version: u32,
    pub objects: Vec<MapObject>,
    pub provenance: Provenance,
}

impl ObjectMapFile {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(PipelineError::Invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut ids = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(PipelineError::Invalid(format!("duplicate object id {}", o.id)));
            }
            if o.s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(PipelineError::Invalid(format!("object {}: scales must be positive", o.id)));
            }
            if !o.t.iter().all(|v| v.is_finite()) || !o.yaw.is_finite() {
                return Err(PipelineError::Invalid(format!("object {}: non-finite pose", o.id)));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let m: ObjectMapFile = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String, PipelineError> {
        to_canonical_json(self)
    }

    pub fn topo_nodes(&self) -> Vec<TopoNode> {
        self.objects.iter().map(MapObject::topo_node).collect()
    }
}

/// Associates and fits a whole frame sequence.
pub fn run_mapping(frames: &[Frame], config: &Config, seed: u64) -> (Mapper, ObjectMapFile) {
    let mut mapper = Mapper::new(*config, seed);
    for f in frames {
        mapper.process_frame(f);
    }
    let file = mapper.finish();
    (mapper, file)
}

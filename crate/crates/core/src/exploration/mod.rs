//! Entropy-driven next-best-view exploration on simulated tabletop scenes.
//!
//! Every mapped object carries a surface occupancy grid over its current
//! box estimate. A candidate view is scored by the entropy of the cells it
//! would see, weighted by how untextured the object still looks, plus small
//! terms for mutual occlusion and for a volume estimate that has not
//! settled yet. Objects that meet the stop rule no longer contribute.

pub mod grid;
pub mod sim;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{bbox_iou, cube_vertices, project_bbox, project_unchecked, BBox2D, CubeModel, Pose, Vec3};
use crate::pipeline::eval::{eval_models, MetricsReport};
use crate::pipeline::format::fmt_num;
use crate::pipeline::{Config, Mapper, ObjectMapFile};
use crate::stats::{mean, sample_std, standard_normal_pdf};

pub use grid::{grid_entropy, CellState, SurfaceGrid};
pub use sim::{simulate_observation, SimObject, SimScene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationConfig {
    /// Weight of the occlusion and volume terms.
    pub lambda: f64,
    /// Views taken after the four initial corner views.
    pub max_steps: usize,
    pub cell_size: f64,
    /// Distance of hemisphere candidates from the table center, meters.
    pub view_radius: f64,
    /// Elevations of the two candidate rings, degrees.
    pub ring_elevations_deg: [f64; 2],
    pub azimuths: usize,
    /// Height of the corner views above the table, meters.
    pub corner_height: f64,
    /// Height of the coverage sweep above the table, meters.
    pub coverage_height: f64,
    pub entropy_stop: f64,
    pub occupied_stop: f64,
    pub volume_stop: f64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            max_steps: 10,
            cell_size: grid::DEFAULT_CELL_SIZE,
            view_radius: 1.2,
            ring_elevations_deg: [30.0, 60.0],
            azimuths: 16,
            corner_height: 0.8,
            coverage_height: 0.9,
            entropy_stop: 0.5,
            occupied_stop: 0.5,
            volume_stop: 0.8,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda >= 0.0) {
            return Err("lambda must be non-negative".into());
        }
        if !(self.cell_size > 0.0) || !(self.view_radius > 0.0) || self.azimuths == 0 {
            return Err("cell_size, view_radius and azimuths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Hemisphere,
    TopCorner,
    Coverage,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub index: usize,
    pub kind: ViewKind,
    pub camera: Pose,
}

/// Views from above the four table corners, looking at the table center.
pub fn corner_views(scene: &SimScene, cfg: &ExplorationConfig) -> Vec<CandidateView> {
    let target = scene.table.center3();
    scene
        .table
        .corners()
        .iter()
        .enumerate()
        .map(|(i, c)| CandidateView {
            index: i,
            kind: ViewKind::TopCorner,
            camera: Pose::look_at(c + Vec3::new(0.0, 0.0, cfg.corner_height), target, Vec3::z()),
        })
        .collect()
}

/// Two hemisphere rings around the table plus the four corner views.
pub fn candidate_views(scene: &SimScene, cfg: &ExplorationConfig) -> Vec<CandidateView> {
    let target = scene.table.center3();
    let mut out = Vec::new();
    for &elev in &cfg.ring_elevations_deg {
        let e = elev.to_radians();
        for a in 0..cfg.azimuths {
            let az = 2.0 * PI * a as f64 / cfg.azimuths as f64;
            let eye = target + cfg.view_radius * Vec3::new(e.cos() * az.cos(), e.cos() * az.sin(), e.sin());
            out.push(CandidateView {
                index: out.len(),
                kind: ViewKind::Hemisphere,
                camera: Pose::look_at(eye, target, Vec3::z()),
            });
        }
    }
    for v in corner_views(scene, cfg) {
        out.push(CandidateView {
            index: out.len(),
            ..v
        });
    }
    out
}

/// Boustrophedon sweep: two rows of five straight-down views.
pub fn coverage_views(scene: &SimScene, cfg: &ExplorationConfig) -> Vec<CandidateView> {
    let t = &scene.table;
    let z = t.height + cfg.coverage_height;
    let mut out = Vec::new();
    for (row, fy) in [-0.5, 0.5].into_iter().enumerate() {
        let cols: Vec<f64> = (0..5).map(|i| -0.8 + 0.4 * i as f64).collect();
        let ordered: Vec<f64> = if row % 2 == 0 { cols } else { cols.into_iter().rev().collect() };
        for fx in ordered {
            let eye = Vec3::new(t.center.x + fx * t.half_size.x, t.center.y + fy * t.half_size.y, z);
            out.push(CandidateView {
                index: out.len(),
                kind: ViewKind::Coverage,
                camera: Pose::look_at(eye, Vec3::new(eye.x, eye.y, t.height), Vec3::y()),
            });
        }
    }
    out
}

/// A random pose from the reachable shell around the table: eye at a random
/// azimuth, an elevation of 20–80° and 0.6–1.2 × `view_radius` from the
/// table center, looking at a random point of the tabletop.
pub fn random_reachable_view<R: Rng>(scene: &SimScene, cfg: &ExplorationConfig, rng: &mut R, index: usize) -> CandidateView {
    let t = &scene.table;
    let center = t.center3();
    let az = rng.random_range(0.0..2.0 * PI);
    let el = rng.random_range(20f64..80.0).to_radians();
    let r = cfg.view_radius * rng.random_range(0.6..1.2);
    let eye = center + r * Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    let target = Vec3::new(
        t.center.x + rng.random_range(-1.0..1.0) * t.half_size.x,
        t.center.y + rng.random_range(-1.0..1.0) * t.half_size.y,
        t.height,
    );
    CandidateView {
        index,
        kind: ViewKind::Random,
        camera: Pose::look_at(eye, target, Vec3::z()),
    }
}

/// `-p log2 p`, zero at `p = 0`.
fn plogp(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.log2()
    }
}

/// Standard-normal density of the latest volume after z-scoring the
/// history; 0.5 when the history is too short or constant.
pub fn volume_density(history: &[f64]) -> f64 {
    if history.len() < 3 {
        return 0.5;
    }
    let sd = sample_std(history);
    if !(sd > 1e-12) {
        return 0.5;
    }
    let z = (history[history.len() - 1] - mean(history)) / sd;
    standard_normal_pdf(z)
}

/// Whether the volume estimate has settled: the latest value lies near the
/// center of the history's distribution (normalized density above
/// `threshold`). Needs three values; a constant history counts as settled.
pub fn volume_converged(history: &[f64], threshold: f64) -> bool {
    if history.len() < 3 {
        return false;
    }
    let sd = sample_std(history);
    if !(sd > 1e-12) {
        return true;
    }
    let z = (history[history.len() - 1] - mean(history)) / sd;
    (-0.5 * z * z).exp() > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeatureVector {
    pub h_obj: f64,
    pub h_bar: f64,
    pub r_o: f64,
    pub r_iou: f64,
    /// Latest volume over the mean of the volume history.
    pub v_bar: f64,
    /// True while the object still needs observations.
    pub active: bool,
}

/// Mutable state of one exploration run.
#[derive(Debug, Clone)]
pub struct ExplorationState {
    pub mapper: Mapper,
    pub grids: BTreeMap<u64, SurfaceGrid>,
    pub volumes: BTreeMap<u64, Vec<f64>>,
    pub camera: Pose,
    pub intrinsics: crate::geometry::CameraIntrinsics,
    pub steps: usize,
    cfg: ExplorationConfig,
}

impl ExplorationState {
    pub fn new(config: Config, intrinsics: crate::geometry::CameraIntrinsics, seed: u64) -> Self {
        let cfg = config.exploration;
        Self {
            mapper: Mapper::new(config, seed),
            grids: BTreeMap::new(),
            volumes: BTreeMap::new(),
            camera: Pose::identity(),
            intrinsics,
            steps: 0,
            cfg,
        }
    }

    /// Box estimate of a mapped object, if it has been fitted.
    pub fn cube(&self, id: u64) -> Option<CubeModel> {
        self.mapper.map.objects.get(&id)?.estimate.as_ref().map(|e| e.model.as_cube())
    }

    fn projected_box(&self, id: u64, view: &Pose) -> Option<BBox2D> {
        let cube = self.cube(id)?;
        let center = project_unchecked(&cube.t, &self.intrinsics, view).pixel()?;
        if !self.intrinsics.contains(&center) {
            return None;
        }
        project_bbox(cube_vertices(&cube).iter(), &self.intrinsics, view).ok()
    }

    /// Whether object `id` still needs observations.
    pub fn is_active(&self, id: u64) -> bool {
        let Some(g) = self.grids.get(&id) else {
            return true;
        };
        let (_, h_bar) = g.entropy();
        let surface_ok = h_bar < self.cfg.entropy_stop || g.occupied_ratio() > self.cfg.occupied_stop;
        let volume_ok = self
            .volumes
            .get(&id)
            .is_some_and(|v| volume_converged(v, self.cfg.volume_stop));
        !(surface_ok && volume_ok)
    }

    pub fn all_done(&self) -> bool {
        !self.mapper.map.objects.is_empty() && self.mapper.map.objects.keys().all(|&id| !self.is_active(id))
    }

    fn mean_iou_with_others(&self, id: u64, view: &Pose) -> f64 {
        let Some(mine) = self.projected_box(id, view) else {
            return 0.0;
        };
        let others: Vec<f64> = self
            .grids
            .keys()
            .filter(|&&o| o != id)
            .filter_map(|&o| self.projected_box(o, view))
            .map(|b| bbox_iou(&mine, &b))
            .collect();
        if others.is_empty() {
            0.0
        } else {
            others.iter().sum::<f64>() / others.len() as f64
        }
    }

    pub fn feature_vector(&self, id: u64, view: &Pose) -> Option<FeatureVector> {
        let g = self.grids.get(&id)?;
        let (h_obj, h_bar) = g.entropy();
        let hist = self.volumes.get(&id).map(Vec::as_slice).unwrap_or(&[]);
        let v_bar = match hist.last() {
            Some(&v) => v / mean(hist),
            None => 1.0,
        };
        Some(FeatureVector {
            h_obj,
            h_bar,
            r_o: g.occupied_ratio(),
            r_iou: self.mean_iou_with_others(id, view),
            v_bar,
            active: self.is_active(id),
        })
    }

    /// One-step utility of looking from `view` with the current grids.
    ///
    /// The entropy term counts only the cells that `view` would see.
    pub fn view_utility(&self, view: &Pose) -> f64 {
        let mut f = 0.0;
        for (&id, g) in &self.grids {
            if !self.is_active(id) {
                continue;
            }
            let Some(cube) = self.cube(id) else { continue };
            if self.projected_box(id, view).is_none() {
                continue;
            }
            let h_visible = g.visible_entropy(&cube, view, &self.intrinsics);
            let r_iou = self.mean_iou_with_others(id, view);
            let p_v = volume_density(self.volumes.get(&id).map(Vec::as_slice).unwrap_or(&[]));
            f += (1.0 - g.occupied_ratio()) * h_visible + self.cfg.lambda * (plogp(r_iou / 2.0) + plogp(p_v));
        }
        f
    }

    /// Absorbs one simulated frame: association, fitting, grids, volumes.
    pub fn observe(&mut self, scene: &SimScene, view: &Pose) {
        let frame = simulate_observation(scene, view, self.steps as u64);
        let outcome = self.mapper.process_frame(&frame);
        self.mapper.parameterize_dirty();

        for m in &outcome.report.merges {
            if let Some(removed) = self.grids.remove(&m.removed) {
                match self.grids.get_mut(&m.kept) {
                    Some(kept) => kept.absorb(&removed),
                    None => {
                        self.grids.insert(m.kept, removed);
                    }
                }
            }
            self.volumes.remove(&m.removed);
        }
        let ids: Vec<u64> = self.mapper.map.objects.keys().copied().collect();
        for &id in &ids {
            if self.grids.contains_key(&id) {
                continue;
            }
            if let Some(cube) = self.cube(id) {
                let mut g = SurfaceGrid::new(&cube, self.cfg.cell_size);
                let pts = &self.mapper.map.objects[&id].points;
                let far = Pose::from_yaw(0.0, Vec3::new(0.0, 0.0, -1e6));
                g.update(&cube, pts, &far, &self.intrinsics);
                self.grids.insert(id, g);
            }
        }
        for (local, id) in outcome.locals.iter().zip(&outcome.assigned) {
            let Some(id) = *id else { continue };
            let Some(cube) = self.cube(id) else { continue };
            if let Some(g) = self.grids.get_mut(&id) {
                g.update(&cube, &local.points, view, &self.intrinsics);
            }
        }
        for &id in &ids {
            if let Some(cube) = self.cube(id) {
                self.volumes.entry(id).or_default().push(cube.volume());
            }
        }
        self.camera = *view;
        self.steps += 1;
    }
}

/// Index (into `candidates`) of the view with the highest utility. Ties go
/// to the view closest to the current camera, then to the lowest
/// candidate index.
pub fn select_nbv(state: &ExplorationState, candidates: &[CandidateView]) -> usize {
    let here = state.camera.camera_center();
    let scored: Vec<(f64, f64, usize, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(pos, c)| {
            (
                state.view_utility(&c.camera),
                (c.camera.camera_center() - here).norm(),
                c.index,
                pos,
            )
        })
        .collect();
    let best = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * best.abs().max(1.0);
    scored
        .iter()
        .filter(|s| s.0 >= best - tol)
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)))
        .map(|s| s.3)
        .expect("candidates are non-empty")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Nbv,
    Random,
    Coverage,
    Init,
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nbv" => Ok(Policy::Nbv),
            "random" => Ok(Policy::Random),
            "coverage" => Ok(Policy::Coverage),
            "init" => Ok(Policy::Init),
            other => Err(format!("unknown policy {other:?} (expected nbv, random, coverage or init)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectStep {
    pub id: u64,
    pub label: String,
    pub h_obj: f64,
    pub h_bar: f64,
    pub r_o: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub view: ViewKind,
    pub view_index: usize,
    pub objects: Vec<ObjectStep>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplorationRun {
    pub policy: Policy,
    pub trace: Vec<StepRecord>,
    pub final_map: ObjectMapFile,
    pub final_metrics: MetricsReport,
    pub stopped_early: bool,
}

fn scene_metrics(state: &ExplorationState, scene: &SimScene) -> MetricsReport {
    let map: Vec<_> = state
        .mapper
        .map
        .objects
        .values()
        .filter_map(|g| g.estimate.as_ref().map(|e| (g.id, e.model)))
        .collect();
    let gt: Vec<_> = scene
        .objects
        .iter()
        .map(|o| (o.id, o.label.clone(), o.ground_truth()))
        .collect();
    eval_models(&map, &gt)
}

fn record(state: &ExplorationState, scene: &SimScene, step: usize, view: &CandidateView) -> StepRecord {
    let objects = state
        .grids
        .iter()
        .map(|(&id, g)| {
            let (h_obj, h_bar) = g.entropy();
            ObjectStep {
                id,
                label: state.mapper.map.objects.get(&id).map(|o| o.label().to_string()).unwrap_or_default(),
                h_obj,
                h_bar,
                r_o: g.occupied_ratio(),
                active: state.is_active(id),
            }
        })
        .collect();
    StepRecord {
        step,
        view: view.kind,
        view_index: view.index,
        objects,
        metrics: scene_metrics(state, scene),
    }
}

/// Runs the four corner views, then up to `max_steps` views chosen by
/// `policy`, stopping once every mapped object meets the stop rule.
pub fn explore(scene: &SimScene, policy: Policy, config: &Config, seed: u64) -> ExplorationRun {
    let cfg = config.exploration;
    let mut state = ExplorationState::new(*config, scene.intrinsics, seed);
    let mut trace = Vec::new();
    for v in corner_views(scene, &cfg) {
        state.observe(scene, &v.camera);
        trace.push(record(&state, scene, trace.len(), &v));
    }

    let candidates = candidate_views(scene, &cfg);
    let coverage = coverage_views(scene, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_7a11);
    let mut stopped_early = false;
    // Candidate views are used at most once.
    let mut unvisited: Vec<CandidateView> = candidates.clone();
    if policy != Policy::Init {
        for step in 0..cfg.max_steps {
            if state.mapper.map.objects.is_empty() || state.all_done() {
                stopped_early = true;
                break;
            }
            if unvisited.is_empty() && policy == Policy::Nbv {
                break;
            }
            let view = match policy {
                Policy::Nbv => unvisited.remove(select_nbv(&state, &unvisited)),
                Policy::Random => random_reachable_view(scene, &cfg, &mut rng, step),
                Policy::Coverage => coverage[step % coverage.len()],
                Policy::Init => unreachable!(),
            };
            state.observe(scene, &view.camera);
            trace.push(record(&state, scene, trace.len(), &view));
        }
    }
    let final_map = state.mapper.finish();
    let final_metrics = scene_metrics(&state, scene);
    ExplorationRun {
        policy,
        trace,
        final_map,
        final_metrics,
        stopped_early,
    }
}

/// Per-step, per-object CSV of an exploration trace.
pub fn trace_csv(run: &ExplorationRun) -> String {
    let mut out = String::from(
        "step,view,view_index,object_id,label,h_obj,h_bar,r_o,active,mean_iou_3d,mean_cde_cm\n",
    );
    for r in &run.trace {
        let cde = r.metrics.mean_cde_cm.map(fmt_num).unwrap_or_default();
        let view = serde_json::to_value(r.view).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        for o in &r.objects {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.step,
                view,
                r.view_index,
                o.id,
                o.label,
                fmt_num(o.h_obj),
                fmt_num(o.h_bar),
                fmt_num(o.r_o),
                o.active,
                fmt_num(r.metrics.mean_iou_3d),
                cde,
            ));
        }
    }
    out
}

//! A small synthetic sensor: gravity-aligned boxes and cylinders observed by
//! a pinhole camera, producing the same frame records as a real front end.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{
    convex_clip, normalize_yaw, polygon_area, project_unchecked, rot_z, BBox2D, CameraIntrinsics, CubeModel, LineSegment2D,
    Pose, QuadricModel, Vec2, Vec3, CUBE_EDGES,
};
use crate::parameterization::ObjectModel;
use crate::pipeline::frame::{Detection, Frame, PointObservation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Box,
    /// Vertical cylinder; `s.x` is the radius and `s.y` must equal it.
    Cylinder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimObject {
    pub id: u64,
    pub label: String,
    pub shape: Shape,
    /// Center of the body.
    pub t: Vec3,
    pub yaw: f64,
    /// Half-extents.
    pub s: Vec3,
    /// Surface points per square centimeter.
    pub texture_density: f64,
}

impl SimObject {
    pub fn bounding_box(&self) -> CubeModel {
        CubeModel {
            t: self.t,
            yaw: if self.shape == Shape::Box { self.yaw } else { 0.0 },
            s: self.s,
        }
    }

    /// The model an ideal estimator would produce.
    pub fn ground_truth(&self) -> ObjectModel {
        match self.shape {
            Shape::Box => ObjectModel::Cube(CubeModel {
                t: self.t,
                yaw: normalize_yaw(self.yaw),
                s: self.s,
            }),
            Shape::Cylinder => ObjectModel::Quadric(QuadricModel {
                t: self.t,
                s: self.s,
            }),
        }
    }
}

/// The support surface objects rest on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Table {
    pub center: Vec2,
    pub half_size: Vec2,
    /// Height of the top surface.
    pub height: f64,
}

impl Table {
    pub fn corners(&self) -> [Vec3; 4] {
        let (c, h) = (self.center, self.half_size);
        [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
            .map(|(sx, sy)| Vec3::new(c.x + sx * h.x, c.y + sy * h.y, self.height))
    }

    pub fn center3(&self) -> Vec3 {
        Vec3::new(self.center.x, self.center.y, self.height)
    }
}

/// Noise and detector behavior of the simulated sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    /// Std of each detection box coordinate, pixels.
    pub bbox_sigma_px: f64,
    /// Std of the range error of each point, meters.
    pub depth_sigma: f64,
    /// Std of the in-plane rotation of each segment, degrees.
    pub segment_sigma_deg: f64,
    /// Probability that a visible object is not detected.
    pub dropout: f64,
    /// Smallest detection box area, square pixels.
    pub min_box_area: f64,
    /// Smallest emitted segment, pixels.
    pub min_segment_px: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            bbox_sigma_px: 1.0,
            depth_sigma: 0.002,
            segment_sigma_deg: 0.5,
            dropout: 0.0,
            min_box_area: 64.0,
            min_segment_px: 10.0,
        }
    }
}

impl SensorModel {
    pub fn noiseless() -> Self {
        Self {
            bbox_sigma_px: 0.0,
            depth_sigma: 0.0,
            segment_sigma_deg: 0.0,
            dropout: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScene {
    pub table: Table,
    pub objects: Vec<SimObject>,
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub sensor: SensorModel,
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 525.0,
        fy: 525.0,
        cx: 319.5,
        cy: 239.5,
        width: 640,
        height: 480,
    }
}

impl SimScene {
    /// Checks ids, sizes, support contact and pairwise separation.
    pub fn validate(&self) -> Result<(), String> {
        self.intrinsics.validate().map_err(|e| e.to_string())?;
        let mut ids = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(format!("duplicate object id {}", o.id));
            }
            if o.s.iter().any(|&v| !(v > 0.0)) || !o.t.iter().all(|v| v.is_finite()) {
                return Err(format!("object {}: invalid pose or size", o.id));
            }
            if o.shape == Shape::Cylinder && (o.s.x - o.s.y).abs() > 1e-12 {
                return Err(format!("object {}: cylinder radii differ", o.id));
            }
            if ((o.t.z - o.s.z) - self.table.height).abs() > 1e-6 {
                return Err(format!("object {}: does not rest on the table", o.id));
            }
            if !(o.texture_density >= 0.0) {
                return Err(format!("object {}: negative texture density", o.id));
            }
        }
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                if footprints_overlap(a, b) {
                    return Err(format!("objects {} and {} interpenetrate", a.id, b.id));
                }
            }
        }
        Ok(())
    }
}

fn footprint_radius(o: &SimObject) -> f64 {
    match o.shape {
        Shape::Box => o.s.x.hypot(o.s.y),
        Shape::Cylinder => o.s.x,
    }
}

/// Conservative check using circumscribed circles of the footprints.
/// Whether the footprints of two objects (bounding rectangles for
/// cylinders) share a positive area.
pub fn footprints_overlap(a: &SimObject, b: &SimObject) -> bool {
    let (fa, fb) = (a.bounding_box().footprint(), b.bounding_box().footprint());
    polygon_area(&convex_clip(&fa, &fb)).abs() > 1e-12
}

/// Box faces as `(axis, sign)`; the bottom face is `(2, -1)`.
pub const BOX_FACES: [(usize, f64); 6] = [
    (0, 1.0),
    (0, -1.0),
    (1, 1.0),
    (1, -1.0),
    (2, 1.0),
    (2, -1.0),
];

/// Outward normal of a face of `cube` in world coordinates.
pub fn face_normal(cube: &CubeModel, axis: usize, sign: f64) -> Vec3 {
    let mut n = Vec3::zeros();
    n[axis] = sign;
    rot_z(cube.yaw) * n
}

pub fn face_center(cube: &CubeModel, axis: usize, sign: f64) -> Vec3 {
    let mut c = Vec3::zeros();
    c[axis] = sign * cube.s[axis];
    cube.to_world(&c)
}

/// Whether the outer side of a face points toward `eye`.
pub fn face_visible_from(cube: &CubeModel, axis: usize, sign: f64, eye: &Vec3) -> bool {
    face_normal(cube, axis, sign).dot(&(eye - face_center(cube, axis, sign))) > 1e-9
}

/// Whether the open segment `from -> to` passes through `cube`.
pub fn segment_hits_box(cube: &CubeModel, from: &Vec3, to: &Vec3) -> bool {
    let a = cube.to_object(from);
    let b = cube.to_object(to);
    let d = b - a;
    let (mut t0, mut t1) = (1e-9, 1.0 - 1e-6);
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if a[k].abs() > cube.s[k] {
                return false;
            }
        } else {
            let mut ta = (-cube.s[k] - a[k]) / d[k];
            let mut tb = (cube.s[k] - a[k]) / d[k];
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = f64::max(t0, ta);
            t1 = f64::min(t1, tb);
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

fn occluded(scene: &SimScene, skip: u64, eye: &Vec3, p: &Vec3) -> bool {
    scene
        .objects
        .iter()
        .filter(|o| o.id != skip)
        .any(|o| segment_hits_box(&o.bounding_box(), eye, p))
}

/// Stable key of a camera pose, used to derive the per-view noise stream.
pub fn view_key(camera: &Pose) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in camera.rotation.iter().chain(camera.translation.iter()) {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Points on the outline used for the detection box.
fn outline_points(o: &SimObject) -> Vec<Vec3> {
    match o.shape {
        Shape::Box => {
            let c = o.bounding_box();
            (0..8).map(|i| c.to_world(&c.object_vertex(i))).collect()
        }
        Shape::Cylinder => {
            let mut pts = Vec::with_capacity(64);
            for k in 0..32 {
                let a = k as f64 * PI / 16.0;
                for z in [-o.s.z, o.s.z] {
                    pts.push(o.t + Vec3::new(o.s.x * a.cos(), o.s.x * a.sin(), z));
                }
            }
            pts
        }
    }
}

/// Points whose line of sight decides whether the object is detectable.
fn probe_points(o: &SimObject) -> [Vec3; 5] {
    let top = o.s.z * 0.8;
    let r = match o.shape {
        Shape::Box => Vec3::new(o.s.x * 0.8, o.s.y * 0.8, 0.0),
        Shape::Cylinder => Vec3::new(o.s.x * 0.55, o.s.x * 0.55, 0.0),
    };
    let rot = rot_z(if o.shape == Shape::Box { o.yaw } else { 0.0 });
    [
        o.t,
        o.t + rot * Vec3::new(r.x, r.y, top),
        o.t + rot * Vec3::new(-r.x, r.y, top),
        o.t + rot * Vec3::new(r.x, -r.y, top),
        o.t + rot * Vec3::new(-r.x, -r.y, top),
    ]
}

fn sample_count(rng: &mut ChaCha8Rng, expected: f64) -> usize {
    let base = expected.floor();
    base as usize + usize::from(rng.random::<f64>() < expected - base)
}

/// Candidate surface samples (world point, outward normal) on the faces of
/// `o` that could be seen from `eye`.
fn surface_samples(o: &SimObject, eye: &Vec3, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let density_m2 = o.texture_density * 1e4;
    let mut out = Vec::new();
    match o.shape {
        Shape::Box => {
            let cube = o.bounding_box();
            for &(axis, sign) in &BOX_FACES[..5] {
                if !face_visible_from(&cube, axis, sign, eye) {
                    continue;
                }
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                let area = 4.0 * cube.s[u] * cube.s[v];
                for _ in 0..sample_count(rng, area * density_m2) {
                    let mut p = Vec3::zeros();
                    p[axis] = sign * cube.s[axis];
                    p[u] = rng.random_range(-1.0..1.0) * cube.s[u];
                    p[v] = rng.random_range(-1.0..1.0) * cube.s[v];
                    out.push(cube.to_world(&p));
                }
            }
        }
        Shape::Cylinder => {
            let (r, h) = (o.s.x, o.s.z);
            if eye.z > o.t.z + h {
                for _ in 0..sample_count(rng, PI * r * r * density_m2) {
                    let rr = r * rng.random::<f64>().sqrt();
                    let a = rng.random_range(0.0..2.0 * PI);
                    out.push(o.t + Vec3::new(rr * a.cos(), rr * a.sin(), h));
                }
            }
            for _ in 0..sample_count(rng, 2.0 * PI * r * 2.0 * h * density_m2) {
                let a = rng.random_range(0.0..2.0 * PI);
                let z = rng.random_range(-h..h);
                let p = o.t + Vec3::new(r * a.cos(), r * a.sin(), z);
                let n = Vec3::new(a.cos(), a.sin(), 0.0);
                if n.dot(&(eye - p)) > 0.0 {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Clips the segment `a-b` to `bounds` (Liang–Barsky).
fn clip_segment(a: Vec2, b: Vec2, bounds: &BBox2D) -> Option<(Vec2, Vec2)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-d.x, a.x - bounds.xmin),
        (d.x, bounds.xmax - a.x),
        (-d.y, a.y - bounds.ymin),
        (d.y, bounds.ymax - a.y),
    ] {
        if p.abs() < 1e-15 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((a + d * t0, a + d * t1))
}

fn box_segments(
    scene: &SimScene,
    o: &SimObject,
    camera: &Pose,
    eye: &Vec3,
    angle_noise: Option<&Normal<f64>>,
    rng: &mut ChaCha8Rng,
) -> Vec<LineSegment2D> {
    let cube = o.bounding_box();
    let k = &scene.intrinsics;
    let bounds = BBox2D::new(0.0, 0.0, k.width as f64 - 1e-6, k.height as f64 - 1e-6);
    let mut out = Vec::new();
    for &(i, j) in &CUBE_EDGES {
        let axis_along = (i ^ j).trailing_zeros() as usize;
        let seen = (0..3).filter(|&a| a != axis_along).any(|a| {
            let sign = if i & (1 << a) != 0 { 1.0 } else { -1.0 };
            !(a == 2 && sign < 0.0) && face_visible_from(&cube, a, sign, eye)
        });
        if !seen {
            continue;
        }
        let (vi, vj) = (cube.to_world(&cube.object_vertex(i)), cube.to_world(&cube.object_vertex(j)));
        if occluded(scene, o.id, eye, &((vi + vj) / 2.0)) {
            continue;
        }
        let (Some(pi), Some(pj)) = (
            project_unchecked(&vi, k, camera).pixel(),
            project_unchecked(&vj, k, camera).pixel(),
        ) else {
            continue;
        };
        let Some((mut a, mut b)) = clip_segment(pi, pj, &bounds) else {
            continue;
        };
        if (b - a).norm() < scene.sensor.min_segment_px {
            continue;
        }
        if let Some(noise) = angle_noise {
            let phi = noise.sample(rng).to_radians();
            let (m, h) = ((a + b) / 2.0, (b - a) / 2.0);
            let (s, c) = phi.sin_cos();
            let h = Vec2::new(c * h.x - s * h.y, s * h.x + c * h.y);
            a = m - h;
            b = m + h;
        }
        if let Ok(seg) = LineSegment2D::new(a, b) {
            out.push(seg);
        }
    }
    out
}

/// Renders one frame of `scene` from `camera`.
///
/// Deterministic in `(scene.seed, camera)`: the noise stream is derived from
/// the pose, so revisiting a view reproduces the same frame.
pub fn simulate_observation(scene: &SimScene, camera: &Pose, frame_id: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    rng.set_stream(view_key(camera));
    let k = &scene.intrinsics;
    let eye = camera.camera_center();
    let sensor = &scene.sensor;
    let box_noise = (sensor.bbox_sigma_px > 0.0).then(|| Normal::new(0.0, sensor.bbox_sigma_px).expect("valid sigma"));
    let depth_noise = (sensor.depth_sigma > 0.0).then(|| Normal::new(0.0, sensor.depth_sigma).expect("valid sigma"));
    let angle_noise =
        (sensor.segment_sigma_deg > 0.0).then(|| Normal::new(0.0, sensor.segment_sigma_deg).expect("valid sigma"));

    let mut detections = Vec::new();
    let mut points = Vec::new();
    let mut segments = Vec::new();
    let image = k.image_box();

    for o in &scene.objects {
        // Surface points exist whether or not the detector fires.
        for p in surface_samples(o, &eye, &mut rng) {
            if occluded(scene, o.id, &eye, &p) {
                continue;
            }
            let Some(uv) = project_unchecked(&p, k, camera).pixel() else {
                continue;
            };
            if !k.contains(&uv) {
                continue;
            }
            let xyz = match &depth_noise {
                Some(n) => p + (p - eye).normalize() * n.sample(&mut rng),
                None => p,
            };
            points.push(PointObservation { uv, xyz });
        }

        if o.shape == Shape::Box {
            segments.extend(box_segments(scene, o, camera, &eye, angle_noise.as_ref(), &mut rng));
        }

        let projected: Vec<Vec2> = outline_points(o)
            .iter()
            .filter_map(|p| project_unchecked(p, k, camera).pixel())
            .collect();
        if projected.len() < 2 {
            continue;
        }
        let Some(full) = BBox2D::from_points(projected.iter()) else {
            continue;
        };
        let clamped = full.clamp_to(&image);
        if !clamped.is_valid()
            || clamped.area() < sensor.min_box_area
            || clamped.area() < 0.3 * full.area()
        {
            continue;
        }
        let any_probe_visible = probe_points(o).iter().any(|p| {
            project_unchecked(p, k, camera)
                .pixel()
                .is_some_and(|uv| k.contains(&uv))
                && !occluded(scene, o.id, &eye, p)
        });
        if !any_probe_visible {
            continue;
        }
        if sensor.dropout > 0.0 && rng.random::<f64>() < sensor.dropout {
            continue;
        }
        let bbox = match &box_noise {
            Some(n) => {
                let (x0, y0, x1, y1) = (
                    clamped.xmin + n.sample(&mut rng),
                    clamped.ymin + n.sample(&mut rng),
                    clamped.xmax + n.sample(&mut rng),
                    clamped.ymax + n.sample(&mut rng),
                );
                BBox2D::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1)).clamp_to(&image)
            }
            None => clamped,
        };
        if !bbox.is_valid() || bbox.area() <= 0.0 {
            continue;
        }
        detections.push(Detection {
            label: o.label.clone(),
            bbox,
            confidence: 0.9,
        });
    }

    Frame {
        frame_id,
        timestamp: frame_id as f64 / 30.0,
        camera: *camera,
        intrinsics: *k,
        detections,
        points,
        segments,
    }
}

/// Label catalogue used by the scene generators: shape and nominal
/// half-extents.
pub const TABLETOP_CATALOGUE: &[(&str, Shape, [f64; 3])] = &[
    ("book", Shape::Box, [0.10, 0.07, 0.025]),
    ("box", Shape::Box, [0.08, 0.07, 0.06]),
    ("keyboard", Shape::Box, [0.18, 0.07, 0.02]),
    ("remote", Shape::Box, [0.09, 0.03, 0.015]),
    ("laptop", Shape::Box, [0.15, 0.11, 0.02]),
    ("cup", Shape::Cylinder, [0.04, 0.04, 0.05]),
    ("bottle", Shape::Cylinder, [0.035, 0.035, 0.11]),
    ("can", Shape::Cylinder, [0.033, 0.033, 0.06]),
];

pub const ROOM_CATALOGUE: &[(&str, Shape, [f64; 3])] = &[
    ("chair", Shape::Box, [0.25, 0.25, 0.45]),
    ("monitor", Shape::Box, [0.28, 0.08, 0.22]),
    ("box", Shape::Box, [0.2, 0.16, 0.15]),
    ("suitcase", Shape::Box, [0.3, 0.12, 0.35]),
    ("microwave", Shape::Box, [0.25, 0.18, 0.15]),
    ("vase", Shape::Cylinder, [0.12, 0.12, 0.25]),
    ("can", Shape::Cylinder, [0.15, 0.15, 0.3]),
    ("ball", Shape::Cylinder, [0.12, 0.12, 0.12]),
];

/// Parameters of the random scene generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub objects: usize,
    /// Multiplicative size jitter, e.g. 0.3 for ±30%.
    pub size_jitter: f64,
    pub texture_density: f64,
    /// Minimum free gap between footprints, meters.
    pub gap: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            objects: 6,
            size_jitter: 0.3,
            texture_density: 0.5,
            gap: 0.03,
        }
    }
}

fn jittered(rng: &mut ChaCha8Rng, nominal: [f64; 3], jitter: f64, shape: Shape) -> Vec3 {
    let mut s = Vec3::from(nominal).map(|v| v * (1.0 + rng.random_range(-jitter..=jitter)));
    if shape == Shape::Cylinder {
        s.y = s.x;
    }
    s
}

/// Places objects on `table` by rejection sampling; objects that cannot be
/// placed after many attempts are dropped.
fn place_objects(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    catalogue: &[(&str, Shape, [f64; 3])],
    mut propose: impl FnMut(&mut ChaCha8Rng, f64) -> Option<Vec2>,
    base_z: f64,
) -> Vec<SimObject> {
    let mut objects: Vec<SimObject> = Vec::new();
    for id in 0..spec.objects as u64 {
        let &(label, shape, nominal) = &catalogue[rng.random_range(0..catalogue.len())];
        let s = jittered(rng, nominal, spec.size_jitter, shape);
        let yaw = if shape == Shape::Box {
            rng.random_range(-PI / 2.0..PI / 2.0)
        } else {
            0.0
        };
        for _ in 0..500 {
            let radius = match shape {
                Shape::Box => s.x.hypot(s.y),
                Shape::Cylinder => s.x,
            };
            let Some(xy) = propose(rng, radius) else {
                continue;
            };
            let candidate = SimObject {
                id,
                label: label.to_string(),
                shape,
                t: Vec3::new(xy.x, xy.y, base_z + s.z),
                yaw,
                s,
                texture_density: spec.texture_density,
            };
            let clear = objects.iter().all(|o| {
                (o.t.xy() - candidate.t.xy()).norm()
                    >= footprint_radius(o) + footprint_radius(&candidate) + spec.gap
            });
            if clear {
                objects.push(candidate);
                break;
            }
        }
    }
    objects
}

/// A random tabletop scene on a 1.2 m × 0.8 m table.
pub fn random_tabletop(seed: u64, spec: &SceneSpec) -> SimScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = Table {
        center: Vec2::zeros(),
        half_size: Vec2::new(0.6, 0.4),
        height: 0.75,
    };
    let objects = place_objects(
        &mut rng,
        spec,
        TABLETOP_CATALOGUE,
        |rng, r| {
            let (hx, hy) = (table.half_size.x - r, table.half_size.y - r);
            (hx > 0.0 && hy > 0.0)
                .then(|| Vec2::new(rng.random_range(-hx..hx), rng.random_range(-hy..hy)))
        },
        table.height,
    );
    SimScene {
        table,
        objects,
        seed,
        intrinsics: default_intrinsics(),
        sensor: SensorModel::default(),
    }
}

/// Objects on the floor of a room, in a ring around the origin between
/// `r_min` and `r_max` meters.
pub fn random_room(seed: u64, spec: &SceneSpec, r_min: f64, r_max: f64) -> SimScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects = place_objects(
        &mut rng,
        spec,
        ROOM_CATALOGUE,
        |rng, _| {
            let r = rng.random_range(r_min..r_max);
            let a = rng.random_range(-PI..PI);
            Some(Vec2::new(r * a.cos(), r * a.sin()))
        },
        0.0,
    );
    SimScene {
        table: Table {
            center: Vec2::zeros(),
            half_size: Vec2::new(r_max, r_max),
            height: 0.0,
        },
        objects,
        seed,
        intrinsics: default_intrinsics(),
        sensor: SensorModel::default(),
    }
}

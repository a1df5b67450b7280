//! Projective and box geometry shared by the rest of the crate.
//!
//! Conventions: the world frame is gravity aligned with `+z` up. Camera frames
//! follow the pinhole convention (`+z` forward, `+x` right, `+y` down). A
//! [`Pose`] used as camera extrinsics maps world coordinates into the camera
//! frame.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Minimum camera-frame depth (meters) for a point to count as in front.
pub const MIN_DEPTH: f64 = 1e-6;

/// Rigid transform `x -> R x + t`.
///
/// Serialized as `{"rotation": [[row0], [row1], [row2]], "translation": [..]}`;
/// deserialization rejects non-orthonormal rotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRecord {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        let r = &p.rotation;
        Self {
            rotation: std::array::from_fn(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: p.translation.into(),
        }
    }
}

impl TryFrom<PoseRecord> for Pose {
    type Error = GeometryError;

    fn try_from(rec: PoseRecord) -> Result<Self, Self::Error> {
        let rows = rec.rotation;
        let r = Matrix3::from_fn(|i, j| rows[i][j]);
        Pose::new(r, rec.translation.into())
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose after checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidInput("pose has non-finite entries".into()));
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if err > 1e-6 || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(GeometryError::InvalidInput(format!(
                "rotation is not orthonormal (|R^T R - I| = {err:.3e})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Rotation about the world `z` axis followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        Self {
            rotation: rot_z(yaw),
            translation,
        }
    }

    /// World-to-camera extrinsics for a camera at `eye` looking at `target`.
    ///
    /// `up` is the world direction that should appear upward in the image.
    /// Falls back to the world `y` axis when the view direction is parallel
    /// to `up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::y());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        // Rows are the camera axes expressed in world coordinates.
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        Self {
            rotation,
            translation: -(rotation * eye),
        }
    }

    #[inline]
    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera center in world coordinates when `self` is world-to-camera.
    pub fn camera_center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidInput(format!(
                "invalid intrinsics {self:?}"
            )))
        }
    }

    pub fn contains(&self, px: &Vec2) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= self.width as f64 && px.y <= self.height as f64
    }

    pub fn image_box(&self) -> BBox2D {
        BBox2D::new(0.0, 0.0, self.width as f64, self.height as f64)
    }
}

/// Result of projecting a point through a pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel(Vec2),
    Behind,
}

impl Projection {
    pub fn pixel(self) -> Option<Vec2> {
        match self {
            Projection::Pixel(p) => Some(p),
            Projection::Behind => None,
        }
    }
}

/// Pinhole projection of a world point; `camera` maps world to camera.
pub fn project_point(
    p: &Vec3,
    k: &CameraIntrinsics,
    camera: &Pose,
) -> Result<Projection, GeometryError> {
    if !p.iter().all(|v| v.is_finite()) || !camera.is_finite() {
        return Err(GeometryError::InvalidInput("non-finite point or pose".into()));
    }
    Ok(project_unchecked(p, k, camera))
}

/// [`project_point`] without the finiteness checks.
#[inline]
pub fn project_unchecked(p: &Vec3, k: &CameraIntrinsics, camera: &Pose) -> Projection {
    let c = camera.transform(p);
    if c.z <= MIN_DEPTH {
        return Projection::Behind;
    }
    Projection::Pixel(Vec2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy))
}

/// Axis-aligned image rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox2D {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl From<[f64; 4]> for BBox2D {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox2D> for [f64; 4] {
    fn from(b: BBox2D) -> Self {
        [b.xmin, b.ymin, b.xmax, b.ymax]
    }
}

impl BBox2D {
    pub const fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.xmin, self.ymin, self.xmax, self.ymax]
            .iter()
            .all(|v| v.is_finite())
            && self.xmin <= self.xmax
            && self.ymin <= self.ymax
    }

    pub fn width(&self) -> f64 {
        (self.xmax - self.xmin).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.ymax - self.ymin).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    pub fn intersection_area(&self, other: &BBox2D) -> f64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn clamp_to(&self, bounds: &BBox2D) -> BBox2D {
        let cx = |x: f64| x.clamp(bounds.xmin, bounds.xmax);
        let cy = |y: f64| y.clamp(bounds.ymin, bounds.ymax);
        BBox2D::new(cx(self.xmin), cy(self.ymin), cx(self.xmax), cy(self.ymax))
    }

    /// Smallest box containing all `points`, or `None` for an empty iterator.
    pub fn from_points<'a, I>(points: I) -> Option<BBox2D>
    where
        I: IntoIterator<Item = &'a Vec2>,
    {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = BBox2D::new(first.x, first.y, first.x, first.y);
        for p in it {
            b.xmin = b.xmin.min(p.x);
            b.ymin = b.ymin.min(p.y);
            b.xmax = b.xmax.max(p.x);
            b.ymax = b.ymax.max(p.y);
        }
        Some(b)
    }
}

/// Intersection over union of two boxes; 0 for disjoint or degenerate pairs.
pub fn bbox_iou(a: &BBox2D, b: &BBox2D) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Image line segment, serialized as `[u0, v0, u1, v1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct LineSegment2D {
    pub p0: Vec2,
    pub p1: Vec2,
}

impl TryFrom<[f64; 4]> for LineSegment2D {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3]))
    }
}

impl From<LineSegment2D> for [f64; 4] {
    fn from(s: LineSegment2D) -> Self {
        [s.p0.x, s.p0.y, s.p1.x, s.p1.y]
    }
}

impl LineSegment2D {
    pub fn new(p0: Vec2, p1: Vec2) -> Result<Self, GeometryError> {
        if !(p0.iter().chain(p1.iter()).all(|v| v.is_finite())) {
            return Err(GeometryError::InvalidInput("non-finite segment".into()));
        }
        if p0 == p1 {
            return Err(GeometryError::InvalidInput("degenerate segment".into()));
        }
        Ok(Self { p0, p1 })
    }

    pub fn reversed(&self) -> Self {
        Self {
            p0: self.p1,
            p1: self.p0,
        }
    }

    pub fn midpoint(&self) -> Vec2 {
        0.5 * (self.p0 + self.p1)
    }

    pub fn length(&self) -> f64 {
        (self.p1 - self.p0).norm()
    }

    /// Distance from `q` to the closest point of the segment.
    pub fn distance_to_point(&self, q: &Vec2) -> f64 {
        let d = self.p1 - self.p0;
        let len2 = d.norm_squared();
        if len2 == 0.0 {
            return (q - self.p0).norm();
        }
        let s = ((q - self.p0).dot(&d) / len2).clamp(0.0, 1.0);
        (self.p0 + s * d - q).norm()
    }
}

/// Undirected direction of a segment, folded into `[0, π)`.
pub fn segment_angle(seg: &LineSegment2D) -> Result<f64, GeometryError> {
    let d = seg.p1 - seg.p0;
    if d.norm_squared() == 0.0 || !d.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::InvalidInput("degenerate segment".into()));
    }
    Ok(line_angle(d))
}

/// Direction angle of `d` folded into `[0, π)`; `d` and `-d` map to the same value.
#[inline]
pub fn line_angle(d: Vec2) -> f64 {
    // Canonicalize the direction before atan2 so reversal is exactly symmetric.
    let d = if d.y < 0.0 || (d.y == 0.0 && d.x < 0.0) {
        -d
    } else {
        d
    };
    let a = d.y.atan2(d.x);
    if a >= PI {
        0.0
    } else {
        a
    }
}

/// Absolute difference between two undirected line angles, in `[0, π/2]`.
#[inline]
pub fn angle_between_lines(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Rotation about the world `z` axis.
pub fn rot_z(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Maps a yaw into the canonical half-open range `[-π/2, π/2)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let y = (yaw + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if y >= FRAC_PI_2 {
        -FRAC_PI_2
    } else {
        y
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Gravity-aligned box: yaw about `z`, half-extents `(l, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubeModel {
    pub t: Vec3,
    pub yaw: f64,
    pub s: Vec3,
}

/// Vertex `i` has `+s_l` when bit 0 is set, `+s_w` for bit 1, `+s_h` for bit 2,
/// and the negative half-extent otherwise.
pub const CUBE_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

impl CubeModel {
    pub fn new(t: Vec3, yaw: f64, s: Vec3) -> Result<Self, GeometryError> {
        if !(t.iter().chain(s.iter()).all(|v| v.is_finite()) && yaw.is_finite()) {
            return Err(GeometryError::InvalidInput("non-finite cube".into()));
        }
        if s.iter().any(|&v| v <= 0.0) {
            return Err(GeometryError::InvalidInput("cube extents must be positive".into()));
        }
        Ok(Self {
            t,
            yaw: normalize_yaw(yaw),
            s,
        })
    }

    pub fn object_vertex(&self, i: usize) -> Vec3 {
        let sign = |bit: usize| if i & (1 << bit) != 0 { 1.0 } else { -1.0 };
        Vec3::new(sign(0) * self.s.x, sign(1) * self.s.y, sign(2) * self.s.z)
    }

    pub fn to_world(&self, p_obj: &Vec3) -> Vec3 {
        rot_z(self.yaw) * p_obj + self.t
    }

    pub fn to_object(&self, p_world: &Vec3) -> Vec3 {
        rot_z(-self.yaw) * (p_world - self.t)
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.s.x * self.s.y * self.s.z
    }

    pub fn contains(&self, p_world: &Vec3) -> bool {
        let o = self.to_object(p_world);
        o.x.abs() <= self.s.x && o.y.abs() <= self.s.y && o.z.abs() <= self.s.z
    }

    /// Footprint corners in world `xy`, counter-clockwise.
    pub fn footprint(&self) -> [Vec2; 4] {
        let r = rot_z(self.yaw);
        let c = |x: f64, y: f64| {
            let w = r * Vec3::new(x, y, 0.0);
            Vec2::new(w.x + self.t.x, w.y + self.t.y)
        };
        [
            c(-self.s.x, -self.s.y),
            c(self.s.x, -self.s.y),
            c(self.s.x, self.s.y),
            c(-self.s.x, self.s.y),
        ]
    }
}

/// Eight world-frame vertices; ordering documented on [`CUBE_EDGES`].
pub fn cube_vertices(c: &CubeModel) -> [Vec3; 8] {
    std::array::from_fn(|i| c.to_world(&c.object_vertex(i)))
}

/// The twelve edges of a cube as pairs of vertex indices.
pub fn cube_edges(_c: &CubeModel) -> [(usize, usize); 12] {
    CUBE_EDGES
}

/// Ellipsoid with semiaxes `s` centered at `t`; orientation is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadricModel {
    pub t: Vec3,
    pub s: Vec3,
}

impl QuadricModel {
    pub fn new(t: Vec3, s: Vec3) -> Result<Self, GeometryError> {
        if s.iter().any(|&v| !(v > 0.0)) || !t.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidInput("quadric semiaxes must be positive".into()));
        }
        Ok(Self { t, s })
    }

    /// `diag(s_l², s_w², s_h², -1)` in the object frame.
    pub fn object_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&nalgebra::Vector4::new(
            self.s.x * self.s.x,
            self.s.y * self.s.y,
            self.s.z * self.s.z,
            -1.0,
        ))
    }

    /// `T Q_o Tᵀ` with `T` the homogeneous translation to `t`.
    pub fn world_matrix(&self) -> Matrix4<f64> {
        let mut tr = Matrix4::identity();
        tr.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        tr * self.object_matrix() * tr.transpose()
    }

    /// Bounding box with the same center and half-extents.
    pub fn bounding_cube(&self) -> CubeModel {
        CubeModel {
            t: self.t,
            yaw: 0.0,
            s: self.s,
        }
    }
}

/// Axis-aligned bounds of projected world points, clamped to the image.
pub fn project_bbox<'a, I>(
    points: I,
    k: &CameraIntrinsics,
    camera: &Pose,
) -> Result<BBox2D, GeometryError>
where
    I: IntoIterator<Item = &'a Vec3>,
{
    let mut bounds: Option<BBox2D> = None;
    for p in points {
        if let Projection::Pixel(px) = project_point(p, k, camera)? {
            bounds = Some(match bounds {
                None => BBox2D::new(px.x, px.y, px.x, px.y),
                Some(b) => BBox2D::new(
                    b.xmin.min(px.x),
                    b.ymin.min(px.y),
                    b.xmax.max(px.x),
                    b.ymax.max(px.y),
                ),
            });
        }
    }
    bounds
        .map(|b| b.clamp_to(&k.image_box()))
        .ok_or(GeometryError::NoVisiblePoints)
}

/// Area of a simple polygon (shoelace formula), positive when counter-clockwise.
pub fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Intersection of two convex counter-clockwise polygons (Sutherland–Hodgman).
pub fn convex_clip(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut output: Vec<Vec2> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let inside = |p: &Vec2| (b - a).perp(&(p - a)) >= 0.0;
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci {
                if !pi {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if pi {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn line_intersection(p: Vec2, q: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let r = q - p;
    let s = b - a;
    let denom = r.perp(&s);
    if denom.abs() < 1e-300 {
        return p;
    }
    let t = (a - p).perp(&s) / denom;
    p + t * r
}

//! Per-object surface occupancy grids and their entropy.
//!
//! Each of the five faces other than the bottom is divided into cells
//! addressed in normalized face coordinates, so a grid keeps its cells when
//! the box estimate it is laid over changes size. Cell counts are fixed when
//! the grid is created (about one cell per centimeter at that size).

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::geometry::{project_unchecked, CameraIntrinsics, CubeModel, Pose, Vec3};

use super::sim::face_visible_from;

pub const P_UNKNOWN: f64 = 0.5;
pub const P_OCCUPIED: f64 = 0.99;
pub const P_FREE: f64 = 0.01;
pub const DEFAULT_CELL_SIZE: f64 = 0.01;
/// Upper bound on cells along one face side.
pub const MAX_CELLS_PER_SIDE: usize = 200;

/// Faces covered by a grid: `(axis, sign)` in the object frame.
pub const GRID_FACES: [(usize, f64); 5] = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

impl CellState {
    pub fn probability(self) -> f64 {
        match self {
            CellState::Unknown => P_UNKNOWN,
            CellState::Free => P_FREE,
            CellState::Occupied => P_OCCUPIED,
        }
    }

    /// Allowed transitions only move away from unknown; occupied is final.
    fn upgrade(self, to: CellState) -> CellState {
        self.max(to)
    }
}

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn grid_entropy(p: f64) -> Result<f64, GeometryError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(GeometryError::InvalidInput(format!("probability {p} outside [0, 1]")));
    }
    let h = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    Ok(h(p) + h(1.0 - p))
}

fn cell_entropy(state: CellState) -> f64 {
    grid_entropy(state.probability()).expect("cell probabilities are valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceGrid {
    pub axis: usize,
    pub sign: f64,
    pub nu: usize,
    pub nv: usize,
    pub cells: Vec<CellState>,
}

impl FaceGrid {
    fn tangent_axes(&self) -> (usize, usize) {
        ((self.axis + 1) % 3, (self.axis + 2) % 3)
    }

    /// World position of a cell center on `cube`.
    pub fn cell_center(&self, cube: &CubeModel, iu: usize, iv: usize) -> Vec3 {
        let (u, v) = self.tangent_axes();
        let mut p = Vec3::zeros();
        p[self.axis] = self.sign * cube.s[self.axis];
        p[u] = ((iu as f64 + 0.5) / self.nu as f64 * 2.0 - 1.0) * cube.s[u];
        p[v] = ((iv as f64 + 0.5) / self.nv as f64 * 2.0 - 1.0) * cube.s[v];
        cube.to_world(&p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellCounts {
    pub occupied: usize,
    pub free: usize,
    pub unknown: usize,
}

impl CellCounts {
    pub fn total(&self) -> usize {
        self.occupied + self.free + self.unknown
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub faces: Vec<FaceGrid>,
}

fn cells_along(extent: f64, cell: f64) -> usize {
    ((2.0 * extent / cell).ceil() as usize).clamp(1, MAX_CELLS_PER_SIDE)
}

impl SurfaceGrid {
    pub fn new(cube: &CubeModel, cell_size: f64) -> Self {
        let faces = GRID_FACES
            .iter()
            .map(|&(axis, sign)| {
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                let (nu, nv) = (cells_along(cube.s[u], cell_size), cells_along(cube.s[v], cell_size));
                FaceGrid {
                    axis,
                    sign,
                    nu,
                    nv,
                    cells: vec![CellState::Unknown; nu * nv],
                }
            })
            .collect();
        Self { faces }
    }

    pub fn counts(&self) -> CellCounts {
        let mut c = CellCounts {
            occupied: 0,
            free: 0,
            unknown: 0,
        };
        for s in self.faces.iter().flat_map(|f| &f.cells) {
            match s {
                CellState::Occupied => c.occupied += 1,
                CellState::Free => c.free += 1,
                CellState::Unknown => c.unknown += 1,
            }
        }
        c
    }

    /// Total entropy and entropy per cell, in bits.
    pub fn entropy(&self) -> (f64, f64) {
        let c = self.counts();
        let h = c.unknown as f64 * cell_entropy(CellState::Unknown)
            + c.occupied as f64 * cell_entropy(CellState::Occupied)
            + c.free as f64 * cell_entropy(CellState::Free);
        (h, h / c.total().max(1) as f64)
    }

    pub fn occupied_ratio(&self) -> f64 {
        let c = self.counts();
        c.occupied as f64 / c.total().max(1) as f64
    }

    /// Face and cell a world point falls on, if it lies near the box.
    fn locate(&self, cube: &CubeModel, p: &Vec3) -> Option<(usize, usize)> {
        let q = cube.to_object(p);
        let slack = 0.02;
        if (0..3).any(|k| q[k].abs() > 1.5 * cube.s[k] + slack) {
            return None;
        }
        let (fi, _) = self
            .faces
            .iter()
            .enumerate()
            .map(|(i, f)| (i, (f.sign * cube.s[f.axis] - q[f.axis]).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))?;
        let f = &self.faces[fi];
        let (u, v) = f.tangent_axes();
        let idx = |x: f64, s: f64, n: usize| {
            let t = ((x / s + 1.0) / 2.0 * n as f64).floor();
            (t.max(0.0) as usize).min(n - 1)
        };
        Some((fi, idx(q[v], cube.s[v], f.nv) * f.nu + idx(q[u], cube.s[u], f.nu)))
    }

    /// Calls `visit(face, cell)` for every cell whose center is visible from
    /// `camera`: on a face turned toward the camera and inside the image.
    pub fn for_each_visible(
        &self,
        cube: &CubeModel,
        camera: &Pose,
        k: &CameraIntrinsics,
        mut visit: impl FnMut(usize, usize),
    ) {
        let eye = camera.camera_center();
        for (fi, f) in self.faces.iter().enumerate() {
            if !face_visible_from(cube, f.axis, f.sign, &eye) {
                continue;
            }
            for iv in 0..f.nv {
                for iu in 0..f.nu {
                    let c = f.cell_center(cube, iu, iv);
                    if project_unchecked(&c, k, camera)
                        .pixel()
                        .is_some_and(|px| k.contains(&px))
                    {
                        visit(fi, iv * f.nu + iu);
                    }
                }
            }
        }
    }

    /// Entropy of the cells visible from a view, bits.
    pub fn visible_entropy(&self, cube: &CubeModel, camera: &Pose, k: &CameraIntrinsics) -> f64 {
        let mut h = 0.0;
        self.for_each_visible(cube, camera, k, |fi, ci| {
            h += cell_entropy(self.faces[fi].cells[ci]);
        });
        h
    }

    /// Marks cells hit by `points` occupied and the remaining visible cells
    /// free. Returns the number of cells that changed state.
    pub fn update(
        &mut self,
        cube: &CubeModel,
        points: &[Vec3],
        camera: &Pose,
        k: &CameraIntrinsics,
    ) -> usize {
        let mut changed = 0;
        for p in points {
            if let Some((fi, ci)) = self.locate(cube, p) {
                let cell = &mut self.faces[fi].cells[ci];
                let next = cell.upgrade(CellState::Occupied);
                changed += usize::from(next != *cell);
                *cell = next;
            }
        }
        let mut visible = Vec::new();
        self.for_each_visible(cube, camera, k, |fi, ci| visible.push((fi, ci)));
        for (fi, ci) in visible {
            let cell = &mut self.faces[fi].cells[ci];
            let next = cell.upgrade(CellState::Free);
            changed += usize::from(next != *cell);
            *cell = next;
        }
        changed
    }

    /// Folds another grid of the same object into this one, cell by cell in
    /// normalized coordinates; states only move away from unknown.
    pub fn absorb(&mut self, other: &SurfaceGrid) {
        for (f, g) in self.faces.iter_mut().zip(&other.faces) {
            for iv in 0..f.nv {
                for iu in 0..f.nu {
                    let gu = ((iu as f64 + 0.5) / f.nu as f64 * g.nu as f64) as usize;
                    let gv = ((iv as f64 + 0.5) / f.nv as f64 * g.nv as f64) as usize;
                    let src = g.cells[gv.min(g.nv - 1) * g.nu + gu.min(g.nu - 1)];
                    let cell = &mut f.cells[iv * f.nu + iu];
                    *cell = cell.upgrade(src);
                }
            }
        }
    }
}

//! Image features shared by states, actions and tasks.
//!
//! Grids are `d × d`, row-major, row 0 at the bottom of the construction
//! space (z = 0). Column `i` covers `x ∈ [-5 + i·10/d, -5 + (i+1)·10/d)`.

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Assembly, Task};
use crate::geometry::{point_strictly_inside, world_polygon, ConstructionSpace, Placement, Vec2};

pub const DEFAULT_D: usize = 64;
pub const DEFAULT_SIGMA_PX: f64 = 2.0;
pub const DEFAULT_REWARD_C: f64 = 0.001;
/// Kernel support radius in units of sigma.
pub const KERNEL_TRUNCATION: f64 = 6.0;
const EDGE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureImage {
    d: usize,
    data: Vec<f64>,
}

impl FeatureImage {
    pub fn zeros(d: usize) -> Self {
        Self { d, data: vec![0.0; d * d] }
    }

    pub fn filled(d: usize, v: f64) -> Self {
        Self { d, data: vec![v; d * d] }
    }

    pub fn from_data(d: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), d * d, "feature image must hold d*d values");
        Self { d, data }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.d + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.d + i] = v;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    pub fn dot(&self, other: &FeatureImage) -> f64 {
        assert_eq!(self.d, other.d);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn add_assign(&mut self, other: &FeatureImage) {
        assert_eq!(self.d, other.d);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled_add(&mut self, s: f64, other: &FeatureImage) {
        assert_eq!(self.d, other.d);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    }

    /// Binary PGM (P5), top row first, linearly mapped from `[min, max]`.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> io::Result<()> {
        let (lo, hi) = self.min_max();
        let span = if hi > lo { hi - lo } else { 1.0 };
        write!(w, "P5\n{} {}\n255\n", self.d, self.d)?;
        let mut bytes = Vec::with_capacity(self.d * self.d);
        for j in (0..self.d).rev() {
            for i in 0..self.d {
                bytes.push((((self.get(i, j) - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        w.write_all(&bytes)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> io::Result<()> {
        self.write_pgm(io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// World ↔ pixel mapping for a `d × d` grid over the construction space.
#[derive(Clone, Copy, Debug)]
pub struct Grid {
    pub d: usize,
    pub space: ConstructionSpace,
}

impl Grid {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            space: ConstructionSpace::BENCHMARK,
        }
    }

    pub fn cell_w(&self) -> f64 {
        (self.space.x_max - self.space.x_min) / self.d as f64
    }

    pub fn cell_h(&self) -> f64 {
        (self.space.z_max - self.space.z_min) / self.d as f64
    }

    pub fn center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.space.x_min + (i as f64 + 0.5) * self.cell_w(),
            self.space.z_min + (j as f64 + 0.5) * self.cell_h(),
        )
    }

    /// The cell containing `p`, clamped to the grid.
    pub fn cell_of(&self, p: Vec2) -> (usize, usize) {
        let fi = ((p.x - self.space.x_min) / self.cell_w()).floor();
        let fj = ((p.z - self.space.z_min) / self.cell_h()).floor();
        let clamp = |v: f64| v.max(0.0).min((self.d - 1) as f64) as usize;
        (clamp(fi), clamp(fj))
    }

    /// Index range of cells whose centers may fall in `[lo, hi]` along x.
    fn col_range(&self, lo: f64, hi: f64) -> (usize, usize) {
        let a = ((lo - self.space.x_min) / self.cell_w() - 0.5).floor().max(0.0) as usize;
        let b = ((hi - self.space.x_min) / self.cell_w() - 0.5).ceil().min((self.d - 1) as f64).max(0.0) as usize;
        (a, b)
    }

    fn row_range(&self, lo: f64, hi: f64) -> (usize, usize) {
        let a = ((lo - self.space.z_min) / self.cell_h() - 0.5).floor().max(0.0) as usize;
        let b = ((hi - self.space.z_min) / self.cell_h() - 0.5).ceil().min((self.d - 1) as f64).max(0.0) as usize;
        (a, b)
    }
}

/// Two-channel task image: obstacles, then targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskImage {
    pub obstacles: FeatureImage,
    pub targets: FeatureImage,
}

/// Per-pixel reward ρ(T).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardField {
    pub field: FeatureImage,
    pub sigma_px: f64,
    pub c: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub d: usize,
    pub sigma_px: f64,
    pub c: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            d: DEFAULT_D,
            sigma_px: DEFAULT_SIGMA_PX,
            c: DEFAULT_REWARD_C,
        }
    }
}

/// Binary raster: a pixel is set iff its center lies strictly inside the
/// placed block.
pub fn rasterize_action(a: &Placement, d: usize) -> FeatureImage {
    let mut img = FeatureImage::zeros(d);
    rasterize_into(a, &Grid::new(d), &mut img, 1.0);
    img
}

fn rasterize_into(a: &Placement, grid: &Grid, img: &mut FeatureImage, value: f64) {
    let poly = world_polygon(a);
    let (xlo, xhi) = poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v.x), h.max(v.x)));
    let (zlo, zhi) = poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v.z), h.max(v.z)));
    let (i0, i1) = grid.col_range(xlo, xhi);
    let (j0, j1) = grid.row_range(zlo, zhi);
    for j in j0..=j1 {
        for i in i0..=i1 {
            if point_strictly_inside(grid.center(i, j), &poly, EDGE_EPS) {
                let k = j * grid.d + i;
                img.data[k] += value;
            }
        }
    }
}

/// ψ(S): elementwise sum of the action rasters of all placements.
pub fn state_features(s: &Assembly, d: usize) -> FeatureImage {
    let grid = Grid::new(d);
    let mut img = FeatureImage::zeros(d);
    for p in s.placements() {
        rasterize_into(p, &grid, &mut img, 1.0);
    }
    img
}

pub fn task_features(t: &Task, d: usize) -> TaskImage {
    let grid = Grid::new(d);
    let mut obstacles = FeatureImage::zeros(d);
    for o in &t.obstacles {
        let (i0, i1) = grid.col_range(o.center.x - o.half_side, o.center.x + o.half_side);
        let (j0, j1) = grid.row_range(o.center.z - o.half_side, o.center.z + o.half_side);
        for j in j0..=j1 {
            for i in i0..=i1 {
                if o.contains(grid.center(i, j)) {
                    obstacles.set(i, j, 1.0);
                }
            }
        }
    }
    let mut targets = FeatureImage::zeros(d);
    for p in &t.targets {
        let (i, j) = grid.cell_of(*p);
        targets.set(i, j, 1.0);
    }
    TaskImage { obstacles, targets }
}

/// Sum of unit-mass truncated Gaussians at the target pixels, minus `c`.
///
/// Each kernel is renormalized over its in-image support, so every target
/// contributes exactly unit mass.
pub fn reward_field(t: &Task, sigma_px: f64, c: f64, d: usize) -> RewardField {
    reward_field_for_points(&t.targets, sigma_px, c, d)
}

pub fn reward_field_for_points(targets: &[Vec2], sigma_px: f64, c: f64, d: usize) -> RewardField {
    assert!(sigma_px > 0.0 && c > 0.0, "sigma_px and C must be positive");
    let grid = Grid::new(d);
    let mut field = FeatureImage::filled(d, -c);
    let radius = KERNEL_TRUNCATION * sigma_px;
    let r = radius.floor() as i64;
    for p in targets {
        let (ti, tj) = grid.cell_of(*p);
        let mut kernel = Vec::new();
        let mut mass = 0.0;
        for dj in -r..=r {
            for di in -r..=r {
                let dist2 = (di * di + dj * dj) as f64;
                if dist2 > radius * radius {
                    continue;
                }
                let (i, j) = (ti as i64 + di, tj as i64 + dj);
                if i < 0 || j < 0 || i >= d as i64 || j >= d as i64 {
                    continue;
                }
                let w = (-dist2 / (2.0 * sigma_px * sigma_px)).exp();
                mass += w;
                kernel.push((i as usize, j as usize, w));
            }
        }
        for (i, j, w) in kernel {
            field.data[j * d + i] += w / mass;
        }
    }
    RewardField { field, sigma_px, c }
}

/// r(A, T) = φ(A)ᵀ ρ(T).
pub fn reward(a: &Placement, rho: &RewardField) -> f64 {
    rasterize_action(a, rho.field.d()).dot(&rho.field)
}

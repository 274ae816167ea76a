//! Cartesian voxel grids.
//!
//! Data is stored x-fastest: voxel `(ix, iy, iz)` lives at
//! `ix + nx * (iy + ny * iz)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub shape: [usize; 3],
    pub pitch_m: f64,
    /// Center of voxel (0, 0, 0).
    pub origin_m: Point3,
}

impl GridSpec {
    pub fn new(shape: [usize; 3], pitch_m: f64, origin_m: Point3) -> Result<Self> {
        let g = GridSpec {
            shape,
            pitch_m,
            origin_m,
        };
        g.validate()?;
        Ok(g)
    }

    /// Grid whose center coincides with the coordinate origin.
    pub fn centered(shape: [usize; 3], pitch_m: f64) -> Result<Self> {
        let origin = [0, 1, 2].map(|a| -0.5 * (shape[a] as f64 - 1.0) * pitch_m);
        GridSpec::new(shape, pitch_m, origin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&n| n == 0) {
            return Err(Error::invalid(format!("grid shape {:?} has a zero extent", self.shape)));
        }
        if !(self.pitch_m > 0.0) || !self.pitch_m.is_finite() {
            return Err(Error::invalid(format!("voxel pitch must be positive, got {}", self.pitch_m)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.pitch_m.powi(3)
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.shape[0] * (iy + self.shape[1] * iz)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.shape[0];
        let ny = self.shape[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    #[inline]
    pub fn position(&self, index: usize) -> Point3 {
        let c = self.coords(index);
        [
            self.origin_m[0] + c[0] as f64 * self.pitch_m,
            self.origin_m[1] + c[1] as f64 * self.pitch_m,
            self.origin_m[2] + c[2] as f64 * self.pitch_m,
        ]
    }

    /// Axis-aligned box spanned by the voxel centers.
    pub fn center_bounds(&self) -> (Point3, Point3) {
        let hi = [0, 1, 2].map(|a| self.origin_m[a] + (self.shape[a] - 1) as f64 * self.pitch_m);
        (self.origin_m, hi)
    }

    /// Euclidean distance from `p` to the box of voxel centers (zero inside).
    pub fn distance_to_support(&self, p: &Point3) -> f64 {
        let (lo, hi) = self.center_bounds();
        let mut d2 = 0.0;
        for a in 0..3 {
            let d = if p[a] < lo[a] {
                lo[a] - p[a]
            } else if p[a] > hi[a] {
                p[a] - hi[a]
            } else {
                0.0
            };
            d2 += d * d;
        }
        d2.sqrt()
    }

    /// Largest distance from `p` to any voxel center.
    pub fn max_distance(&self, p: &Point3) -> f64 {
        let (lo, hi) = self.center_bounds();
        let mut d2 = 0.0;
        for a in 0..3 {
            let d = (p[a] - lo[a]).abs().max((p[a] - hi[a]).abs());
            d2 += d * d;
        }
        d2.sqrt()
    }

    pub fn same_layout(&self, other: &GridSpec) -> bool {
        self.shape == other.shape
            && (self.pitch_m - other.pitch_m).abs() <= 1e-12 * self.pitch_m
            && (0..3).all(|a| (self.origin_m[a] - other.origin_m[a]).abs() <= 1e-12 + 1e-9 * self.pitch_m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: GridSpec,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn zeros(grid: GridSpec) -> Self {
        Volume {
            data: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn from_data(grid: GridSpec, data: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::invalid(format!(
                "volume data has {} values for shape {:?}",
                data.len(),
                grid.shape
            )));
        }
        Ok(Volume { grid, data })
    }

    pub fn from_f64(grid: GridSpec, data: &[f64]) -> Result<Self> {
        Volume::from_data(grid, data.iter().map(|&v| v as f32).collect())
    }

    pub fn shape(&self) -> [usize; 3] {
        self.grid.shape
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f32 {
        self.data[self.grid.index(ix, iy, iz)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, value: f32) {
        let i = self.grid.index(ix, iy, iz);
        self.data[i] = value;
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    /// Index of the largest absolute value; first occurrence wins.
    pub fn argmax_abs(&self) -> [usize; 3] {
        let mut best = 0;
        let mut best_v = f32::NEG_INFINITY;
        for (i, &v) in self.data.iter().enumerate() {
            if v.abs() > best_v {
                best_v = v.abs();
                best = i;
            }
        }
        self.grid.coords(best)
    }

    /// Maximum-intensity projection along z, as an `nx * ny` image (x-fastest).
    pub fn mip_z(&self) -> Vec<f32> {
        let [nx, ny, nz] = self.grid.shape;
        let mut out = vec![f32::NEG_INFINITY; nx * ny];
        for iz in 0..nz {
            let slab = &self.data[iz * nx * ny..(iz + 1) * nx * ny];
            for (o, &v) in out.iter_mut().zip(slab) {
                *o = o.max(v);
            }
        }
        out
    }
}

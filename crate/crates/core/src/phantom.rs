//! Procedural vascular phantoms and their initial-pressure maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::volume::{GridSpec, Volume};

/// Optical side of the photoacoustic effect: `p0 = grueneisen * mu_a * fluence`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalProperties {
    pub grueneisen: f64,
    /// Absorption coefficient inside vessels, 1/m.
    pub mu_a: f64,
    /// Homogeneous fluence, J/m^2.
    pub fluence: f64,
}

impl OpticalProperties {
    pub fn validate(&self) -> Result<()> {
        if !(self.grueneisen > 0.0) || !(self.fluence > 0.0) || !(self.mu_a >= 0.0) {
            return Err(Error::invalid(format!(
                "optical properties need grueneisen > 0, fluence > 0, mu_a >= 0; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Initial pressure (Pa) of a voxel fully inside a vessel.
    pub fn peak_pressure(&self) -> Result<f64> {
        self.validate()?;
        Ok(self.grueneisen * self.mu_a * self.fluence)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Result<Self> {
        if (0..3).any(|a| !(max[a] > min[a])) {
            return Err(Error::invalid(format!("degenerate box {min:?}..{max:?}")));
        }
        Ok(Aabb { min, max })
    }

    pub fn unit() -> Self {
        Aabb {
            min: [0.0; 3],
            max: [1.0; 3],
        }
    }

    /// Central `fraction` of a grid's extent.
    pub fn central(grid: &GridSpec, fraction: f64) -> Result<Self> {
        let (lo, hi) = grid.center_bounds();
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for a in 0..3 {
            let c = 0.5 * (lo[a] + hi[a]);
            let h = 0.5 * fraction * (hi[a] - lo[a]);
            min[a] = c - h;
            max[a] = c + h;
        }
        Aabb::new(min, max)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - 1e-12 && p[a] <= self.max[a] + 1e-12)
    }

    fn sample(&self, rng: &mut impl Rng) -> Point3 {
        [0, 1, 2].map(|a| rng.random_range(self.min[a]..=self.max[a]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Point3,
    pub end: Point3,
    pub radius_m: f64,
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowthParams {
    pub root_radius_m: f64,
    /// Range of the Murray split fraction `r_left^3 / r_parent^3`.
    pub asymmetry: (f64, f64),
    /// Range of the fraction of the way a child grows toward its target.
    pub reach: (f64, f64),
}

impl Default for GrowthParams {
    fn default() -> Self {
        GrowthParams {
            root_radius_m: 1.5e-3,
            asymmetry: (0.4, 0.6),
            reach: (0.35, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselTree {
    pub segments: Vec<Segment>,
    pub seed: u64,
    pub params: GrowthParams,
}

impl VesselTree {
    pub fn empty() -> Self {
        VesselTree {
            segments: Vec::new(),
            seed: 0,
            params: GrowthParams::default(),
        }
    }

    /// Segments that no other segment continues from.
    pub fn terminal_count(&self) -> usize {
        let mut has_child = vec![false; self.segments.len()];
        for s in &self.segments {
            if let Some(p) = s.parent {
                has_child[p] = true;
            }
        }
        has_child.iter().filter(|&&c| !c).count()
    }

    pub fn translated(&self, offset: Point3) -> VesselTree {
        let shift = |p: Point3| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]];
        VesselTree {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    start: shift(s.start),
                    end: shift(s.end),
                    ..s.clone()
                })
                .collect(),
            ..self.clone()
        }
    }
}

/// Grows a binary vessel tree with `n_leaves` terminal segments.
///
/// The root runs from the center of the box's lower z face toward the box
/// center. Terminals are split oldest-first; each split sends two children
/// toward random targets in the box, with radii following Murray's law
/// `r^3 = r_left^3 + r_right^3`. Every point is a convex combination of points
/// in the box, so the whole tree stays inside it.
pub fn grow_vessel_tree(seed: u64, n_leaves: usize, bbox: &Aabb, params: &GrowthParams) -> Result<VesselTree> {
    if n_leaves < 1 {
        return Err(Error::invalid("a vessel tree needs at least one leaf"));
    }
    Aabb::new(bbox.min, bbox.max)?;
    if !(params.root_radius_m > 0.0) {
        return Err(Error::invalid("root radius must be positive"));
    }
    let (alo, ahi) = params.asymmetry;
    let (rlo, rhi) = params.reach;
    if !(0.0 < alo && alo <= ahi && ahi < 1.0) || !(0.0 < rlo && rlo <= rhi && rhi <= 1.0) {
        return Err(Error::invalid("growth ranges must lie inside (0, 1)"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = [0, 1, 2].map(|a| 0.5 * (bbox.min[a] + bbox.max[a]));
    let root_start = [center[0], center[1], bbox.min[2]];
    let mut segments = vec![Segment {
        start: root_start,
        end: center,
        radius_m: params.root_radius_m,
        parent: None,
    }];
    let mut frontier = std::collections::VecDeque::from([0usize]);
    let mut leaves = 1;
    while leaves < n_leaves {
        let parent = frontier.pop_front().expect("binary tree always has a terminal");
        let from = segments[parent].end;
        let r3 = segments[parent].radius_m.powi(3);
        let split = rng.random_range(alo..=ahi);
        for fraction in [split, 1.0 - split] {
            let target = bbox.sample(&mut rng);
            let reach = rng.random_range(rlo..=rhi);
            let end = [0, 1, 2].map(|a| from[a] + reach * (target[a] - from[a]));
            segments.push(Segment {
                start: from,
                end,
                radius_m: (fraction * r3).cbrt(),
                parent: Some(parent),
            });
            frontier.push_back(segments.len() - 1);
        }
        leaves += 1;
    }
    Ok(VesselTree {
        segments,
        seed,
        params: *params,
    })
}

fn point_segment_distance(p: &Point3, s: &Segment) -> f64 {
    let d = [0, 1, 2].map(|a| s.end[a] - s.start[a]);
    let w = [0, 1, 2].map(|a| p[a] - s.start[a]);
    let len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let t = if len2 > 0.0 {
        ((w[0] * d[0] + w[1] * d[1] + w[2] * d[2]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [0, 1, 2].map(|a| w[a] - t * d[a]);
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt()
}

/// Binary capsule raster: a voxel is set when its center lies within a
/// segment's radius of the segment axis. Returns the raster and whether any
/// capsule extended past the grid.
pub fn rasterize_tree(tree: &VesselTree, grid: &GridSpec) -> (Volume, bool) {
    let mut vol = Volume::zeros(*grid);
    let mut clipped = false;
    let [nx, ny, nz] = grid.shape;
    let h = grid.pitch_m;
    for seg in &tree.segments {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut empty = false;
        for a in 0..3 {
            let smin = seg.start[a].min(seg.end[a]) - seg.radius_m;
            let smax = seg.start[a].max(seg.end[a]) + seg.radius_m;
            let n = grid.shape[a] as f64;
            let fmin = ((smin - grid.origin_m[a]) / h).ceil();
            let fmax = ((smax - grid.origin_m[a]) / h).floor();
            if fmin < 0.0 || fmax > n - 1.0 {
                clipped = true;
            }
            let (cmin, cmax) = (fmin.max(0.0), fmax.min(n - 1.0));
            if cmin > cmax {
                empty = true;
                break;
            }
            lo[a] = cmin as usize;
            hi[a] = cmax as usize;
        }
        if empty {
            continue;
        }
        for iz in lo[2]..=hi[2] {
            for iy in lo[1]..=hi[1] {
                for ix in lo[0]..=hi[0] {
                    let idx = ix + nx * (iy + ny * iz);
                    if vol.data[idx] == 0.0 && point_segment_distance(&grid.position(idx), seg) <= seg.radius_m {
                        vol.data[idx] = 1.0;
                    }
                }
            }
        }
        debug_assert!(hi[2] < nz);
    }
    (vol, clipped)
}

/// Unit-sum Gaussian kernel truncated at `3 sigma`.
pub fn gaussian_kernel(sigma_vox: f64) -> Vec<f64> {
    if sigma_vox <= 0.0 {
        return vec![1.0];
    }
    let half = (3.0 * sigma_vox).ceil() as i64;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable isotropic Gaussian smoothing with zero padding.
pub fn gaussian_smooth(vol: &Volume, sigma_vox: f64) -> Volume {
    let kernel = gaussian_kernel(sigma_vox);
    if kernel.len() == 1 {
        return vol.clone();
    }
    let mut data: Vec<f64> = vol.to_f64();
    for axis in 0..3 {
        data = convolve_axis(&data, vol.grid.shape, axis, &kernel);
    }
    Volume {
        grid: vol.grid,
        data: data.into_iter().map(|v| v as f32).collect(),
    }
}

fn convolve_axis(data: &[f64], shape: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let [nx, ny, _] = shape;
    let stride = [1, nx, nx * ny][axis];
    let n = shape[axis] as i64;
    let half = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; data.len()];
    out.par_iter_mut().enumerate().for_each(|(idx, o)| {
        let pos = ((idx / stride) % shape[axis]) as i64;
        let base = idx as i64 - pos * stride as i64;
        let mut acc = 0.0;
        for (k, &w) in kernel.iter().enumerate() {
            let q = pos + k as i64 - half;
            if q >= 0 && q < n {
                acc += w * data[(base + q * stride as i64) as usize];
            }
        }
        *o = acc;
    });
    out
}

/// `P = p0_scale * (V * g_sigma) / max(V * g_sigma)`.
pub fn make_initial_pressure(tree: &VesselTree, grid: &GridSpec, p0_scale: f64, sigma_vox: f64) -> Result<Volume> {
    grid.validate()?;
    if !(sigma_vox >= 0.0) {
        return Err(Error::invalid(format!("smoothing width must be >= 0, got {sigma_vox}")));
    }
    if !(p0_scale > 0.0) {
        return Err(Error::invalid(format!("pressure scale must be positive, got {p0_scale}")));
    }
    let (binary, clipped) = rasterize_tree(tree, grid);
    if clipped {
        log::warn!("vessel tree extends beyond the grid; rasterization clipped");
    }
    let mut vol = gaussian_smooth(&binary, sigma_vox);
    let peak = vol.max();
    if peak > 0.0 {
        let scale = p0_scale / peak as f64;
        for v in vol.data.iter_mut() {
            *v = ((*v as f64) * scale).max(0.0) as f32;
        }
    }
    Ok(vol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn single_leaf_is_a_root_segment() {
        let t = grow_vessel_tree(3, 1, &Aabb::unit(), &GrowthParams::default()).unwrap();
        assert_eq!(t.segments.len(), 1);
        assert_eq!(t.segments[0].parent, None);
    }

    #[test]
    fn sixteen_leaves_binary_counts() {
        let t = grow_vessel_tree(7, 16, &Aabb::unit(), &GrowthParams::default()).unwrap();
        assert_eq!(t.segments.len(), 31);
        assert_eq!(t.terminal_count(), 16);
        // Traversal from every node reaches the root.
        for (i, s) in t.segments.iter().enumerate() {
            let mut cur = i;
            let mut steps = 0;
            let mut seg = s;
            while let Some(p) = seg.parent {
                assert_eq!(t.segments[p].end, seg.start, "children start at the parent end");
                cur = p;
                seg = &t.segments[p];
                steps += 1;
                assert!(steps < 64);
            }
            assert_eq!(cur, 0);
        }
    }

    #[test]
    fn growth_respects_murray_and_box() {
        let bbox = Aabb::new([-1.0, -2.0, 0.0], [1.0, 2.0, 3.0]).unwrap();
        let p = GrowthParams::default();
        let t = grow_vessel_tree(99, 40, &bbox, &p).unwrap();
        for s in &t.segments {
            assert!(s.radius_m > 0.0);
            assert!(bbox.contains(&s.start) && bbox.contains(&s.end));
        }
        for (i, parent) in t.segments.iter().enumerate() {
            let kids: Vec<_> = t.segments.iter().filter(|s| s.parent == Some(i)).collect();
            if kids.is_empty() {
                continue;
            }
            assert_eq!(kids.len(), 2);
            let sum = kids[0].radius_m.powi(3) + kids[1].radius_m.powi(3);
            assert!((sum - parent.radius_m.powi(3)).abs() < 1e-12 * parent.radius_m.powi(3));
            let ratio = kids[0].radius_m.powi(3) / parent.radius_m.powi(3);
            assert!((0.4 - 1e-12..=0.6 + 1e-12).contains(&ratio));
        }
    }

    #[test]
    fn growth_is_deterministic() {
        let a = grow_vessel_tree(5, 12, &Aabb::unit(), &GrowthParams::default()).unwrap();
        let b = grow_vessel_tree(5, 12, &Aabb::unit(), &GrowthParams::default()).unwrap();
        assert_eq!(a, b);
        let c = grow_vessel_tree(6, 12, &Aabb::unit(), &GrowthParams::default()).unwrap();
        assert_ne!(a, c);
        assert!(grow_vessel_tree(5, 0, &Aabb::unit(), &GrowthParams::default()).is_err());
    }

    #[test]
    fn empty_tree_gives_zero_volume() {
        let g = GridSpec::centered([8, 8, 8], 1.0).unwrap();
        let v = make_initial_pressure(&VesselTree::empty(), &g, 1.0, 1.0).unwrap();
        assert!(v.data.iter().all(|&x| x == 0.0));
    }

    fn axis_segment(len: f64, radius: f64) -> VesselTree {
        VesselTree {
            segments: vec![Segment {
                start: [0.0, 0.0, -len / 2.0],
                end: [0.0, 0.0, len / 2.0],
                radius_m: radius,
                parent: None,
            }],
            ..VesselTree::empty()
        }
    }

    #[test]
    fn capsule_voxel_count_matches_analytic_volume() {
        let h = 1.0;
        let g = GridSpec::centered([33, 33, 49], h).unwrap();
        let (r, len) = (2.0 * h, 20.0 * h);
        let v = make_initial_pressure(&axis_segment(len, r), &g, 1.0, 0.0).unwrap();
        assert_eq!(v.max(), 1.0);
        assert!(v.data.iter().all(|&x| x == 0.0 || x == 1.0));
        let count = v.data.iter().filter(|&&x| x > 0.0).count() as f64;
        let analytic = (PI * r * r * len + 4.0 / 3.0 * PI * r.powi(3)) / h.powi(3);
        assert!(
            (count - analytic).abs() < 0.1 * analytic,
            "count {count} vs analytic {analytic}"
        );
    }

    #[test]
    fn smoothing_preserves_mass_and_never_raises_peak() {
        // wide enough that the 3-sigma kernel never reaches the zero padding
        let g = GridSpec::centered([40, 40, 40], 1.0).unwrap();
        let (binary, clipped) = rasterize_tree(&axis_segment(8.0, 3.0), &g);
        assert!(!clipped);
        let mass: f64 = binary.to_f64().iter().sum();
        let mut last_peak = binary.max();
        for sigma in [0.5, 1.0, 1.5, 2.5] {
            let s = gaussian_smooth(&binary, sigma);
            let m: f64 = s.to_f64().iter().sum();
            assert!((m - mass).abs() < 1e-3 * mass, "sigma {sigma}: {m} vs {mass}");
            assert!(s.max() <= last_peak + 1e-6);
            last_peak = s.max();
        }
    }

    #[test]
    fn translation_by_one_voxel_shifts_raster() {
        let g = GridSpec::centered([20, 20, 20], 1.0).unwrap();
        let t = grow_vessel_tree(2, 6, &Aabb::central(&g, 0.6).unwrap(), &GrowthParams {
            root_radius_m: 1.7,
            ..GrowthParams::default()
        })
        .unwrap();
        let (a, _) = rasterize_tree(&t, &g);
        let (b, _) = rasterize_tree(&t.translated([1.0, 0.0, 0.0]), &g);
        for iz in 0..20 {
            for iy in 0..20 {
                for ix in 0..19 {
                    assert_eq!(a.get(ix, iy, iz), b.get(ix + 1, iy, iz));
                }
            }
        }
    }

    #[test]
    fn pressure_is_scaled_and_nonnegative() {
        let g = GridSpec::centered([32, 32, 32], 0.5e-3).unwrap();
        let bbox = Aabb::central(&g, 0.8).unwrap();
        let t = grow_vessel_tree(1, 8, &bbox, &GrowthParams::default()).unwrap();
        let v = make_initial_pressure(&t, &g, 2.5, 1.0).unwrap();
        assert!(v.min() >= 0.0);
        assert!((v.max() - 2.5).abs() < 1e-6);
        assert!(make_initial_pressure(&t, &g, 0.0, 1.0).is_err());
        assert!(make_initial_pressure(&t, &g, 1.0, -1.0).is_err());
    }

    #[test]
    fn optical_pressure() {
        let o = OpticalProperties {
            grueneisen: 0.2,
            mu_a: 100.0,
            fluence: 50.0,
        };
        assert!((o.peak_pressure().unwrap() - 1000.0).abs() < 1e-9);
        assert!(OpticalProperties { grueneisen: 0.0, ..o }.peak_pressure().is_err());
    }
}

//! Hemispherical detector geometry and acquisition patterns.
//!
//! The physical bowl is modeled as a static equiangular grid of virtual
//! detectors. Element `(i, j)` sits at polar angle
//! `theta_i = (i + 0.5) * (pi/2) / n_theta`, measured from the bowl apex, and
//! azimuth `phi_j = j * 2pi / n_phi`. Elements are stored theta-major, so the
//! flat index is `i * n_phi + j`.
//!
//! The apex points along `-z`: a detector at `(theta, phi)` lives at
//! `R * (sin theta cos phi, sin theta sin phi, -cos theta)` and the bowl opens
//! toward `+z`, with the imaged volume centered on the sphere center.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct SensorArray {
    radius_m: f64,
    n_theta: usize,
    n_phi: usize,
    positions: Vec<Point3>,
    angles: Vec<(f64, f64)>,
    quad_weights: Vec<f64>,
    active: Vec<bool>,
}

/// Equiangular hemisphere grid with every element active.
pub fn build_hemisphere_grid(n_theta: usize, n_phi: usize, radius_m: f64) -> Result<SensorArray> {
    if n_theta == 0 || n_phi == 0 {
        return Err(Error::invalid(format!(
            "grid dimensions must be positive, got {n_theta}x{n_phi}"
        )));
    }
    if !(radius_m > 0.0) || !radius_m.is_finite() {
        return Err(Error::invalid(format!("radius must be positive, got {radius_m}")));
    }
    let d_theta = FRAC_PI_2 / n_theta as f64;
    let d_phi = TAU / n_phi as f64;
    let n = n_theta * n_phi;
    let mut positions = Vec::with_capacity(n);
    let mut angles = Vec::with_capacity(n);
    let mut quad_weights = Vec::with_capacity(n);
    for i in 0..n_theta {
        let theta = (i as f64 + 0.5) * d_theta;
        let weight = cell_area(radius_m, theta, d_theta, d_phi);
        for j in 0..n_phi {
            let phi = j as f64 * d_phi;
            positions.push(spherical_to_cartesian(radius_m, theta, phi));
            angles.push((theta, phi));
            quad_weights.push(weight);
        }
    }
    Ok(SensorArray {
        radius_m,
        n_theta,
        n_phi,
        positions,
        angles,
        quad_weights,
        active: vec![true; n],
    })
}

/// Exact area of the equiangular cell centered at `theta`.
///
/// `R^2 * (cos(theta - dt/2) - cos(theta + dt/2)) * dphi`, which is
/// `2 R^2 sin(theta) sin(dt/2) dphi`. The cells tile the hemisphere exactly.
fn cell_area(radius_m: f64, theta: f64, d_theta: f64, d_phi: f64) -> f64 {
    2.0 * radius_m * radius_m * theta.sin() * (0.5 * d_theta).sin() * d_phi
}

pub fn spherical_to_cartesian(radius: f64, theta: f64, phi: f64) -> Point3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [radius * st * cp, radius * st * sp, -radius * ct]
}

/// Area weights of the active elements; inactive elements report zero.
pub fn quadrature_weights(array: &SensorArray) -> Vec<f64> {
    array
        .quad_weights
        .iter()
        .zip(&array.active)
        .map(|(&q, &on)| if on { q } else { 0.0 })
        .collect()
}

/// Great-circle distance between two unit vectors, in radians.
pub fn geodesic_distance(u: &Point3, v: &Point3) -> Result<f64> {
    const UNIT_TOL: f64 = 1e-6;
    for w in [u, v] {
        let n = norm(w);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!("expected a unit vector, got norm {n}")));
        }
    }
    Ok(dot(u, v).clamp(-1.0, 1.0).acos())
}

#[inline]
pub(crate) fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternKind {
    Full,
    /// Keep every `rate`-th azimuth column.
    UniformAzimuth { rate: usize },
    /// Keep azimuths in `[0, arc_deg)`.
    LimitedAzimuth { arc_deg: f64 },
    /// Keep the `fraction` of polar rows closest to the bowl apex.
    LimitedElevation { fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPattern {
    pub kind: PatternKind,
    /// Reserved for randomized patterns; the built-in patterns ignore it.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SamplingPattern {
    pub fn new(kind: PatternKind) -> Result<Self> {
        let pattern = SamplingPattern { kind, seed: None };
        pattern.validate()?;
        Ok(pattern)
    }

    pub fn full() -> Self {
        SamplingPattern {
            kind: PatternKind::Full,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PatternKind::Full => Ok(()),
            PatternKind::UniformAzimuth { rate } if rate >= 1 => Ok(()),
            PatternKind::UniformAzimuth { rate } => {
                Err(Error::invalid(format!("acceleration rate must be >= 1, got {rate}")))
            }
            PatternKind::LimitedAzimuth { arc_deg } if arc_deg > 0.0 && arc_deg <= 360.0 => Ok(()),
            PatternKind::LimitedAzimuth { arc_deg } => {
                Err(Error::invalid(format!("azimuth arc must be in (0, 360], got {arc_deg}")))
            }
            PatternKind::LimitedElevation { fraction } if fraction > 0.0 && fraction <= 1.0 => {
                Ok(())
            }
            PatternKind::LimitedElevation { fraction } => Err(Error::invalid(format!(
                "elevation fraction must be in (0, 1], got {fraction}"
            ))),
        }
    }

    /// Whether element `(i, j)` survives the pattern on an `n_theta x n_phi` grid.
    fn keeps(&self, i: usize, j: usize, n_theta: usize, n_phi: usize) -> bool {
        match self.kind {
            PatternKind::Full => true,
            PatternKind::UniformAzimuth { rate } => j % rate == 0,
            PatternKind::LimitedAzimuth { arc_deg } => {
                // Compare in degrees on the exact grid to avoid rounding at the arc edge.
                (j as f64) * 360.0 / (n_phi as f64) < arc_deg - 1e-9
            }
            PatternKind::LimitedElevation { fraction } => {
                let rows = ((fraction * n_theta as f64).round() as usize).clamp(1, n_theta);
                i < rows
            }
        }
    }
}

impl FromStr for SamplingPattern {
    type Err = Error;

    /// Parses `full`, `uniform:K`, `limaz:DEG` or `limel:FRACTION`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let need = |what: &str| {
            arg.ok_or_else(|| Error::invalid(format!("pattern '{name}' needs a {what}")))
        };
        let bad = |e: &dyn fmt::Display| Error::invalid(format!("pattern '{s}': {e}"));
        let kind = match name {
            "full" => PatternKind::Full,
            "uniform" => PatternKind::UniformAzimuth {
                rate: need("rate")?.parse().map_err(|e| bad(&e))?,
            },
            "limaz" => PatternKind::LimitedAzimuth {
                arc_deg: need("arc in degrees")?.parse().map_err(|e| bad(&e))?,
            },
            "limel" => PatternKind::LimitedElevation {
                fraction: need("fraction")?.parse().map_err(|e| bad(&e))?,
            },
            other => return Err(Error::invalid(format!("unknown pattern '{other}'"))),
        };
        SamplingPattern::new(kind)
    }
}

impl fmt::Display for SamplingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PatternKind::Full => write!(f, "full"),
            PatternKind::UniformAzimuth { rate } => write!(f, "uniform:{rate}"),
            PatternKind::LimitedAzimuth { arc_deg } => write!(f, "limaz:{arc_deg}"),
            PatternKind::LimitedElevation { fraction } => write!(f, "limel:{fraction}"),
        }
    }
}

/// Returns a copy of `array` with the pattern's mask intersected into the
/// active set. Positions and weights are untouched.
pub fn apply_sampling_pattern(array: &SensorArray, pattern: &SamplingPattern) -> Result<SensorArray> {
    pattern.validate()?;
    if let PatternKind::UniformAzimuth { rate } = pattern.kind {
        if rate > array.n_phi {
            return Err(Error::invalid(format!(
                "acceleration rate {rate} exceeds the {} azimuth columns",
                array.n_phi
            )));
        }
    }
    let mut out = array.clone();
    for i in 0..array.n_theta {
        for j in 0..array.n_phi {
            let idx = i * array.n_phi + j;
            out.active[idx] = array.active[idx] && pattern.keeps(i, j, array.n_theta, array.n_phi);
        }
    }
    Ok(out)
}

impl SensorArray {
    pub fn radius_m(&self) -> f64 {
        self.radius_m
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn position(&self, index: usize) -> Point3 {
        self.positions[index]
    }

    /// Unit direction of an element from the sphere center.
    pub fn unit_position(&self, index: usize) -> Point3 {
        let p = self.positions[index];
        let r = self.radius_m;
        [p[0] / r, p[1] / r, p[2] / r]
    }

    pub fn angles(&self) -> &[(f64, f64)] {
        &self.angles
    }

    /// Cell areas of every element, active or not.
    pub fn cell_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn is_active(&self, index: usize) -> bool {
        self.active[index]
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Indices of the active elements in ascending order.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.active[i]).collect()
    }

    pub fn active_weight_sum(&self) -> f64 {
        crate::summation::pairwise_sum(&quadrature_weights(self))
    }

    /// Replaces the active mask; the mask length must match the element count.
    pub fn with_active_mask(&self, active: Vec<bool>) -> Result<SensorArray> {
        if active.len() != self.len() {
            return Err(Error::invalid(format!(
                "mask has {} entries for {} elements",
                active.len(),
                self.len()
            )));
        }
        Ok(SensorArray {
            active,
            ..self.clone()
        })
    }

    pub fn to_record(&self) -> GeometryRecord {
        GeometryRecord {
            radius_m: self.radius_m,
            n_theta: self.n_theta,
            n_phi: self.n_phi,
            elements: (0..self.len())
                .map(|i| ElementRecord {
                    index: i,
                    theta: self.angles[i].0,
                    phi: self.angles[i].1,
                    weight: self.quad_weights[i],
                    active: self.active[i],
                })
                .collect(),
        }
    }

    /// Rebuilds the array from a record, checking it against the equiangular layout.
    pub fn from_record(record: &GeometryRecord) -> Result<SensorArray> {
        let grid = build_hemisphere_grid(record.n_theta, record.n_phi, record.radius_m)?;
        if record.elements.len() != grid.len() {
            return Err(Error::invalid(format!(
                "geometry lists {} elements, layout {}x{} needs {}",
                record.elements.len(),
                record.n_theta,
                record.n_phi,
                grid.len()
            )));
        }
        let mut active = vec![false; grid.len()];
        for e in &record.elements {
            if e.index >= grid.len() {
                return Err(Error::invalid(format!("element index {} out of range", e.index)));
            }
            let (theta, phi) = grid.angles[e.index];
            if (theta - e.theta).abs() > 1e-9 || (phi - e.phi).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "element {} angles ({}, {}) do not match the equiangular layout",
                    e.index, e.theta, e.phi
                )));
            }
            active[e.index] = e.active;
        }
        grid.with_active_mask(active)
    }
}

/// Structured-text form of a [`SensorArray`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub radius_m: f64,
    pub n_theta: usize,
    pub n_phi: usize,
    pub elements: Vec<ElementRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementRecord {
    pub index: usize,
    pub theta: f64,
    pub phi: f64,
    pub weight: f64,
    pub active: bool,
}

/// Hemisphere area `2 pi R^2`.
pub fn hemisphere_area(radius_m: f64) -> f64 {
    2.0 * PI * radius_m * radius_m
}

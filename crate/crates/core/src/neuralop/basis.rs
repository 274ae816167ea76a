//! Kernel bases on a geodesic disk of radius `r`, in local polar
//! coordinates `(rho, phi)` about the disk center.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    PiecewiseLinear,
    HaarWavelet,
    Zernike,
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "piecewise-linear" | "piecewise_linear" | "linear" => Ok(BasisKind::PiecewiseLinear),
            "haar" | "haar_wavelet" => Ok(BasisKind::HaarWavelet),
            "zernike" => Ok(BasisKind::Zernike),
            other => Err(Error::invalid(format!("unknown kernel basis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBasis {
    pub kind: BasisKind,
    /// Support radius in radians.
    pub radius: f64,
    /// Piecewise-linear layout: collocation points per ring, rings evenly
    /// spaced from the center (one point) to the support radius.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ring_counts: Vec<usize>,
    /// Zernike `(n, m)` indices in OSA order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zernike_indices: Vec<(u32, i32)>,
    len: usize,
}

/// OSA/ANSI single index to `(n, m)`.
pub fn osa_to_nm(j: usize) -> (u32, i32) {
    let mut n = 0usize;
    while (n + 1) * (n + 2) / 2 <= j {
        n += 1;
    }
    let m = 2 * j as i64 - (n * (n + 2)) as i64;
    (n as u32, m as i32)
}

/// Zernike radial polynomial `R_n^m(x)` for `m >= 0`, `n - m` even.
pub fn zernike_radial(n: u32, m: u32, x: f64) -> f64 {
    if (n - m) % 2 == 1 {
        return 0.0;
    }
    let fact = |k: u32| (1..=k).map(f64::from).product::<f64>();
    (0..=(n - m) / 2)
        .map(|s| {
            let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
            sign * fact(n - s) / (fact(s) * fact((n + m) / 2 - s) * fact((n - m) / 2 - s)) * x.powi((n - 2 * s) as i32)
        })
        .sum()
}

fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

fn tent(t: f64) -> f64 {
    (1.0 - t.abs()).max(0.0)
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius > 0.0 && radius <= PI / 2.0) {
        return Err(Error::invalid(format!("kernel radius must lie in (0, pi/2], got {radius}")));
    }
    Ok(())
}

impl KernelBasis {
    /// Default layout for each kind with `size` functions. Piecewise-linear
    /// uses a center point plus one outer ring of `size - 1` points.
    pub fn new(kind: BasisKind, size: usize, radius: f64) -> Result<Self> {
        match kind {
            BasisKind::PiecewiseLinear => {
                if size < 2 {
                    return Err(Error::invalid("piecewise-linear basis needs at least 2 functions"));
                }
                KernelBasis::piecewise_linear(radius, vec![1, size - 1])
            }
            BasisKind::HaarWavelet => KernelBasis::haar(radius, size),
            BasisKind::Zernike => KernelBasis::zernike(radius, size),
        }
    }

    /// Separable tent functions on rings `rho_k = k r / (K - 1)`. The first ring
    /// is the center and must hold a single point.
    pub fn piecewise_linear(radius: f64, ring_counts: Vec<usize>) -> Result<Self> {
        check_radius(radius)?;
        if ring_counts.len() < 2 || ring_counts[0] != 1 || ring_counts.iter().any(|&m| m == 0) {
            return Err(Error::invalid(format!(
                "piecewise-linear rings need a single center point and at least one outer ring, got {ring_counts:?}"
            )));
        }
        let len = ring_counts.iter().sum();
        Ok(KernelBasis {
            kind: BasisKind::PiecewiseLinear,
            radius,
            ring_counts,
            zernike_indices: Vec::new(),
            len,
        })
    }

    /// Tensor-product Haar functions: radial `{1, inner/outer sign}` (equal-area
    /// split) times azimuthal `{1, half-plane sign, quarter-plane details}`.
    pub fn haar(radius: f64, size: usize) -> Result<Self> {
        check_radius(radius)?;
        if ![1, 2, 4, 8].contains(&size) {
            return Err(Error::invalid(format!("Haar basis size must be 1, 2, 4 or 8, got {size}")));
        }
        Ok(KernelBasis {
            kind: BasisKind::HaarWavelet,
            radius,
            ring_counts: Vec::new(),
            zernike_indices: Vec::new(),
            len: size,
        })
    }

    /// The first `size` Zernike polynomials in OSA order, unnormalized, of `rho / r`.
    pub fn zernike(radius: f64, size: usize) -> Result<Self> {
        check_radius(radius)?;
        if size == 0 {
            return Err(Error::invalid("Zernike basis needs at least one function"));
        }
        Ok(KernelBasis {
            kind: BasisKind::Zernike,
            radius,
            ring_counts: Vec::new(),
            zernike_indices: (0..size).map(osa_to_nm).collect(),
            len: size,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Collocation points `(rho_l, phi_l)` of a piecewise-linear basis.
    pub fn collocation_points(&self) -> Vec<(f64, f64)> {
        let k = self.ring_counts.len();
        let mut pts = Vec::new();
        for (ring, &m) in self.ring_counts.iter().enumerate() {
            let rho = self.radius * ring as f64 / (k - 1) as f64;
            for a in 0..m {
                pts.push((rho, TAU * a as f64 / m as f64));
            }
        }
        pts
    }

    /// Basis values at `(rho, phi)`; zero outside the disk.
    pub fn eval(&self, rho: f64, phi: f64) -> Result<Vec<f64>> {
        if !(rho >= 0.0) || !phi.is_finite() {
            return Err(Error::invalid(format!("kernel coordinates must have rho >= 0, got ({rho}, {phi})")));
        }
        let mut out = vec![0.0; self.len];
        self.eval_into(rho, phi, &mut out);
        Ok(out)
    }

    /// As [`eval`](Self::eval) without argument checks.
    pub(crate) fn eval_into(&self, rho: f64, phi: f64, out: &mut [f64]) {
        out.fill(0.0);
        if rho > self.radius {
            return;
        }
        let phi = phi.rem_euclid(TAU);
        match self.kind {
            BasisKind::PiecewiseLinear => self.eval_linear(rho, phi, out),
            BasisKind::HaarWavelet => self.eval_haar(rho, phi, out),
            BasisKind::Zernike => {
                let x = rho / self.radius;
                for (o, &(n, m)) in out.iter_mut().zip(&self.zernike_indices) {
                    let radial = zernike_radial(n, m.unsigned_abs(), x);
                    *o = if m >= 0 {
                        radial * (m as f64 * phi).cos()
                    } else {
                        radial * ((-m) as f64 * phi).sin()
                    };
                }
            }
        }
    }

    fn eval_linear(&self, rho: f64, phi: f64, out: &mut [f64]) {
        let k = self.ring_counts.len();
        let d_rho = self.radius / (k - 1) as f64;
        let mut l = 0;
        for (ring, &m) in self.ring_counts.iter().enumerate() {
            let rho_l = d_rho * ring as f64;
            let radial = tent((rho - rho_l) / d_rho);
            for a in 0..m {
                if radial > 0.0 {
                    out[l] = if ring == 0 {
                        // the center node has no azimuth
                        radial
                    } else {
                        let phi_l = TAU * a as f64 / m as f64;
                        radial * tent(rho_l.sin() / rho_l * wrap_pi(phi - phi_l))
                    };
                }
                l += 1;
            }
        }
    }

    fn eval_haar(&self, rho: f64, phi: f64, out: &mut [f64]) {
        let radial = if rho / self.radius < FRAC_1_SQRT_2 { 1.0 } else { -1.0 };
        let half = if phi < PI { 1.0 } else { -1.0 };
        let quarter = |lo: f64| {
            if phi >= lo && phi < lo + PI {
                if phi < lo + PI / 2.0 {
                    1.0
                } else {
                    -1.0
                }
            } else {
                0.0
            }
        };
        let azimuth = [1.0, half, quarter(0.0), quarter(PI)];
        let n_az = (self.len / 2).max(1);
        let mut l = 0;
        for az in azimuth.iter().take(n_az) {
            out[l] = *az;
            l += 1;
            if l < self.len {
                out[l] = radial * az;
                l += 1;
            }
        }
    }
}

//! Discrete-continuous convolution on the sphere.
//!
//! For an output point `v_i` and input samples `u_j` with quadrature weights
//! `q_j`, basis matrix `l` holds `K^l_ij = b_l(rho_ij, phi_ij) q_j` for every
//! input within geodesic distance `r`. Local coordinates are the geodesic
//! distance and the tangent-plane azimuth measured from local east.

use std::ops::{Add, Mul};
use std::sync::Arc;

use num_complex::Complex64;
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::basis::KernelBasis;
use crate::error::{Error, Result};
use crate::geometry::{quadrature_weights, Point3, SensorArray};

/// Colatitude from the apex at `-z` and longitude of a unit vector.
fn angles_of(v: &Point3) -> (f64, f64) {
    (v[0].hypot(v[1]).atan2(-v[2]), v[1].atan2(v[0]))
}

const SNAP: f64 = 1e12;

/// Angle difference snapped to a multiple of 1e-12 rad, so points rebuilt
/// from unit vectors and grid-aligned rotations reproduce it bit for bit.
fn snap(a: f64) -> f64 {
    (a * SNAP).round() / SNAP
}

/// Longitude difference wrapped to `[-pi, pi)`, snapped in integer arithmetic.
fn azimuth_difference(phi_u: f64, phi_v: f64) -> f64 {
    let period = (std::f64::consts::TAU * SNAP).round() as i64;
    let mut d = (((phi_u - phi_v) * SNAP).round() as i64).rem_euclid(period);
    if 2 * d >= period {
        d -= period;
    }
    d as f64 / SNAP
}

/// Local `(rho, phi)` from colatitudes and longitudes. East points along
/// increasing longitude (`z x v`), north is `v x east`; at the poles the
/// frame uses longitude zero.
fn local_from_angles((tv, pv): (f64, f64), (tu, pu): (f64, f64)) -> (f64, f64) {
    let d = azimuth_difference(pu, pv);
    let dt = snap(tu - tv);
    let (stv, ctv) = tv.sin_cos();
    let stu = tu.sin();
    let half = (d / 2.0).sin().powi(2);
    let h = (dt / 2.0).sin().powi(2) + stv * stu * half;
    let rho = 2.0 * h.sqrt().min(1.0).asin();
    let x = stu * d.sin();
    // cos(tv) sin(tu) cos(d) - sin(tv) cos(tu), exactly zero at u = v
    let y = dt.sin() - 2.0 * ctv * stu * half;
    let phi = if x == 0.0 && y == 0.0 {
        0.0
    } else {
        y.atan2(x).rem_euclid(std::f64::consts::TAU)
    };
    (rho, phi)
}

/// Local `(rho, phi)` of `u` about `v`, both unit vectors: geodesic distance
/// and the tangent-plane azimuth from local east.
pub fn local_coordinates(v: &Point3, u: &Point3) -> Result<(f64, f64)> {
    for p in [v, u] {
        let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if !((n - 1.0).abs() < 1e-9) {
            return Err(Error::invalid(format!("expected unit vectors, got norm {n}")));
        }
    }
    Ok(local_from_angles(angles_of(v), angles_of(u)))
}

/// The `L` basis matrices in CSR form sharing one sparsity pattern; entry
/// `e` of the pattern stores its `L` values at `values[e * L..(e + 1) * L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscoMatrices {
    pub n_out: usize,
    pub n_in: usize,
    pub n_basis: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
}

impl DiscoMatrices {
    pub fn from_csr(
        n_out: usize,
        n_in: usize,
        n_basis: usize,
        row_ptr: Vec<usize>,
        cols: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != n_out + 1
            || row_ptr[0] != 0
            || row_ptr.windows(2).any(|w| w[1] < w[0])
            || *row_ptr.last().unwrap() != cols.len()
            || values.len() != cols.len() * n_basis
            || cols.iter().any(|&c| c >= n_in)
        {
            return Err(Error::invalid("inconsistent sparse matrix layout"));
        }
        Ok(DiscoMatrices {
            n_out,
            n_in,
            n_basis,
            row_ptr,
            cols,
            values,
        })
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// `(K^l f)_i` for every basis function and output, laid out `[L x n_out]`.
    pub fn apply_all<T>(&self, f: &[T]) -> Vec<T>
    where
        T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T> + Send + Sync,
    {
        let nb = self.n_basis;
        let per_row: Vec<Vec<T>> = (0..self.n_out)
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![T::zero(); nb];
                for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                    let x = f[self.cols[e]];
                    for (a, &k) in acc.iter_mut().zip(&self.values[e * nb..(e + 1) * nb]) {
                        *a = *a + x * k;
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![T::zero(); nb * self.n_out];
        for (i, row) in per_row.iter().enumerate() {
            for (l, &v) in row.iter().enumerate() {
                out[l * self.n_out + i] = v;
            }
        }
        out
    }
}

/// Builds the basis matrices from the active elements of `inputs` to unit
/// vectors `outputs`. Quadrature weights are the detector cell areas, so
/// a constant kernel integrates over the physical cap.
pub fn build_disco_matrices(inputs: &SensorArray, outputs: &[Point3], basis: &KernelBasis) -> Result<DiscoMatrices> {
    if let Some(v) = outputs.iter().find(|v| !(((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).abs() < 1e-9)) {
        return Err(Error::invalid(format!("output points must be unit vectors, got {v:?}")));
    }
    let q = quadrature_weights(inputs);
    let pts: Vec<(usize, Point3, (f64, f64))> = inputs
        .active_indices()
        .into_iter()
        .map(|j| (j, inputs.unit_position(j), inputs.angles()[j]))
        .collect();
    let nb = basis.len();
    // cheap chord test before the exact geodesic distance
    let min_dot = basis.radius.cos() - 1e-9;
    let rows: Vec<(Vec<usize>, Vec<f64>)> = outputs
        .par_iter()
        .map(|v| {
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            let mut b = vec![0.0; nb];
            let av = angles_of(v);
            for &(j, u, au) in &pts {
                if u[0] * v[0] + u[1] * v[1] + u[2] * v[2] < min_dot {
                    continue;
                }
                let (rho, phi) = local_from_angles(av, au);
                if rho <= basis.radius {
                    basis.eval_into(rho, phi, &mut b);
                    cols.push(j);
                    vals.extend(b.iter().map(|x| x * q[j]));
                }
            }
            (cols, vals)
        })
        .collect();
    let mut row_ptr = vec![0];
    let mut cols = Vec::new();
    let mut values = Vec::new();
    let mut empty = 0;
    for row in rows {
        let (c, v) = row;
        if c.is_empty() {
            empty += 1;
        }
        cols.extend(c);
        values.extend(v);
        row_ptr.push(cols.len());
    }
    if 10 * empty > outputs.len() {
        return Err(Error::EmptyNeighborhoods {
            radius: basis.radius,
            empty,
            total: outputs.len(),
        });
    }
    DiscoMatrices::from_csr(outputs.len(), inputs.len(), nb, row_ptr, cols, values)
}

/// Multi-channel DISCO layer: `out[co, i] = sum_ci sum_l theta[co, ci, l] (K^l f[ci])_i`.
#[derive(Debug, Clone)]
pub struct DiscoLayer {
    pub basis: KernelBasis,
    pub matrices: Arc<DiscoMatrices>,
    /// `[C_out x C_in x L]`.
    pub theta: Vec<f64>,
    pub c_in: usize,
    pub c_out: usize,
}

impl DiscoLayer {
    pub fn new(basis: KernelBasis, matrices: Arc<DiscoMatrices>, theta: Vec<f64>, c_in: usize, c_out: usize) -> Result<Self> {
        if matrices.n_basis != basis.len() {
            return Err(Error::invalid("matrices were built for a different basis size"));
        }
        if theta.len() != c_out * c_in * basis.len() {
            return Err(Error::invalid(format!(
                "theta holds {} values, expected {} x {} x {}",
                theta.len(),
                c_out,
                c_in,
                basis.len()
            )));
        }
        Ok(DiscoLayer {
            basis,
            matrices,
            theta,
            c_in,
            c_out,
        })
    }

    /// Gaussian coefficients scaled by `1 / sqrt(C_in L)`.
    pub fn random(basis: KernelBasis, matrices: Arc<DiscoMatrices>, c_in: usize, c_out: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / ((c_in * basis.len()) as f64).sqrt();
        let theta = (0..c_out * c_in * basis.len())
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        DiscoLayer::new(basis, matrices, theta, c_in, c_out)
    }

    pub fn n_basis(&self) -> usize {
        self.basis.len()
    }
}

/// `(K^l f[ci])_i` for every input channel, laid out `[C_in x L x n_out]`;
/// the Jacobian of [`disco_apply`] with respect to `theta`.
pub fn disco_features<T>(matrices: &DiscoMatrices, f: &[T], c_in: usize) -> Result<Vec<T>>
where
    T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T> + Send + Sync,
{
    if f.len() != c_in * matrices.n_in {
        return Err(Error::invalid(format!(
            "input holds {} values, expected {} channels x {} points",
            f.len(),
            c_in,
            matrices.n_in
        )));
    }
    let mut out = Vec::with_capacity(c_in * matrices.n_basis * matrices.n_out);
    for c in 0..c_in {
        out.extend(matrices.apply_all(&f[c * matrices.n_in..(c + 1) * matrices.n_in]));
    }
    Ok(out)
}

/// Applies a DISCO layer to `[C_in x n_in]` samples, giving `[C_out x n_out]`.
pub fn disco_apply<T>(layer: &DiscoLayer, f: &[T]) -> Result<Vec<T>>
where
    T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T> + Send + Sync,
{
    let m = &layer.matrices;
    let feats = disco_features(m, f, layer.c_in)?;
    Ok(mix(&feats, &layer.theta, layer.c_in, layer.c_out, m.n_basis, m.n_out))
}

fn mix<T>(feats: &[T], theta: &[f64], c_in: usize, c_out: usize, nb: usize, n_out: usize) -> Vec<T>
where
    T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T>,
{
    let mut out = vec![T::zero(); c_out * n_out];
    for co in 0..c_out {
        let row = &mut out[co * n_out..(co + 1) * n_out];
        for ci in 0..c_in {
            for l in 0..nb {
                let w = theta[(co * c_in + ci) * nb + l];
                if w == 0.0 {
                    continue;
                }
                let g = &feats[(ci * nb + l) * n_out..(ci * nb + l + 1) * n_out];
                for (o, &x) in row.iter_mut().zip(g) {
                    *o = *o + x * w;
                }
            }
        }
    }
    out
}

/// Per-frequency DISCO blocks sharing one set of basis matrices; block `k`
/// maps the single-channel spectra at bin `k` to `C` output channels.
#[derive(Debug, Clone)]
pub struct FrequencyDisco {
    pub basis: KernelBasis,
    pub matrices: Arc<DiscoMatrices>,
    /// One `[C x 1 x L]` coefficient array per bin.
    pub thetas: Vec<Vec<f64>>,
    pub channels: usize,
}

impl FrequencyDisco {
    pub fn random(basis: KernelBasis, matrices: Arc<DiscoMatrices>, channels: usize, n_freq: usize, seed: u64) -> Result<Self> {
        let thetas = (0..n_freq)
            .map(|k| {
                DiscoLayer::random(basis.clone(), matrices.clone(), 1, channels, seed.wrapping_add(k as u64))
                    .map(|l| l.theta)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FrequencyDisco {
            basis,
            matrices,
            thetas,
            channels,
        })
    }

    /// `spectra` is `[n_in x N_k]` (detector-major, as stored in
    /// [`Spectra`](crate::forward::Spectra) over all elements); the result is
    /// `[C x n_out x N_k]` with the bin index fastest.
    pub fn apply(&self, spectra: &[Complex64], n_freq: usize) -> Result<Vec<Complex64>> {
        let m = &self.matrices;
        if n_freq != self.thetas.len() || spectra.len() != m.n_in * n_freq {
            return Err(Error::invalid("spectra do not match the per-bin blocks"));
        }
        let c = self.channels;
        let mut out = vec![Complex64::new(0.0, 0.0); c * m.n_out * n_freq];
        for (k, theta) in self.thetas.iter().enumerate() {
            let fk: Vec<Complex64> = (0..m.n_in).map(|j| spectra[j * n_freq + k]).collect();
            let feats = m.apply_all(&fk);
            let y = mix(&feats, theta, 1, c, m.n_basis, m.n_out);
            for co in 0..c {
                for i in 0..m.n_out {
                    out[(co * m.n_out + i) * n_freq + k] = y[co * m.n_out + i];
                }
            }
        }
        Ok(out)
    }
}

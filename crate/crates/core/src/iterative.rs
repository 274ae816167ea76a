//! Regularized least-squares reconstruction.
//!
//! Minimizes
//!
//! ```text
//! F(x) = 1/2 ||W (A x - Psi)||^2 + lambda TV_delta(x) + mu/2 ||x||^2,  x >= 0
//! ```
//!
//! with monotone FISTA: every iteration takes a projected gradient step from
//! the extrapolated point, keeps the better of the new and previous iterate,
//! and resets the momentum when the step fails to decrease `F`. Forward images
//! are carried along by linearity, so an iteration costs one forward and one
//! adjoint application.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{pressure_traces, AcousticMedium, ForwardModel, ReceiveChain, Spectra};
use crate::geometry::SensorArray;
use crate::summation::pairwise_map_sum;
use crate::ubp::{ubp_reconstruct, UbpConfig};
use crate::volume::{GridSpec, Volume};

/// A real-to-complex linear map with its real adjoint `Re(A^H y)`.
pub trait LinearOperator: Sync {
    fn domain_len(&self) -> usize;
    fn range_len(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<Complex64>;
    fn adjoint(&self, y: &[Complex64]) -> Vec<f64>;
}

impl LinearOperator for ForwardModel {
    fn domain_len(&self) -> usize {
        self.grid().len()
    }

    fn range_len(&self) -> usize {
        self.n_det() * self.n_freq()
    }

    fn apply(&self, x: &[f64]) -> Vec<Complex64> {
        ForwardModel::apply(self, x)
    }

    fn adjoint(&self, y: &[Complex64]) -> Vec<f64> {
        ForwardModel::adjoint(self, y)
    }
}

/// Diagonal map `x -> d * x`, a small stand-in operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagonal(pub Vec<f64>);

impl LinearOperator for Diagonal {
    fn domain_len(&self) -> usize {
        self.0.len()
    }

    fn range_len(&self) -> usize {
        self.0.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<Complex64> {
        x.iter().zip(&self.0).map(|(v, d)| Complex64::new(v * d, 0.0)).collect()
    }

    fn adjoint(&self, y: &[Complex64]) -> Vec<f64> {
        y.iter().zip(&self.0).map(|(v, d)| v.re * d).collect()
    }
}

fn norm_sq(x: &[f64]) -> f64 {
    pairwise_map_sum(x, &|v: &f64| v * v)
}

fn norm_sq_c(y: &[Complex64]) -> f64 {
    pairwise_map_sum(y, &|v: &Complex64| v.norm_sqr())
}

/// Successive estimates of `||A||_2` by power iteration on `A^H A` from a
/// seeded Gaussian start. Each entry is `||A x_i||` for the unit iterate
/// `x_i`, which cannot decrease for a positive semidefinite `A^H A`.
pub fn op_norm_history(op: &dyn LinearOperator, iters: usize, seed: u64) -> Result<Vec<f64>> {
    if iters < 3 {
        return Err(Error::invalid(format!("power iteration needs at least 3 steps, got {iters}")));
    }
    let n = op.domain_len();
    if n == 0 {
        return Ok(vec![0.0; iters]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut history = Vec::with_capacity(iters);
    for _ in 0..iters {
        let nx = norm_sq(&x).sqrt();
        if nx == 0.0 {
            history.resize(iters, 0.0);
            break;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let ax = op.apply(&x);
        history.push(norm_sq_c(&ax).sqrt());
        x = op.adjoint(&ax);
    }
    Ok(history)
}

/// Power-iteration estimate of the largest singular value of `op`; zero for
/// the zero operator.
pub fn estimate_op_norm(op: &dyn LinearOperator, iters: usize, seed: u64) -> Result<f64> {
    Ok(*op_norm_history(op, iters, seed)?.last().unwrap())
}

/// Huber penalty `s^2 / (2 delta)` below `delta`, `s - delta / 2` above.
#[inline]
pub fn huber(s: f64, delta: f64) -> f64 {
    if s <= delta {
        s * s / (2.0 * delta)
    } else {
        s - 0.5 * delta
    }
}

/// Huber-smoothed isotropic total variation with forward differences and a
/// replicated boundary: `sum_v huber(|grad x|_v)` and its gradient.
pub fn tv_huber_slice(x: &[f64], shape: [usize; 3], delta: f64) -> Result<(f64, Vec<f64>)> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("Huber delta must be positive, got {delta}")));
    }
    let [nx, ny, nz] = shape;
    if x.len() != nx * ny * nz {
        return Err(Error::invalid("volume length does not match its shape"));
    }
    let sx = 1;
    let sy = nx;
    let sz = nx * ny;
    // per voxel: huber value and the weighted differences phi'(s)/s * d
    let terms: Vec<(f64, [f64; 3])> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let ix = i % nx;
            let iy = (i / nx) % ny;
            let iz = i / sz;
            let d = [
                if ix + 1 < nx { x[i + sx] - x[i] } else { 0.0 },
                if iy + 1 < ny { x[i + sy] - x[i] } else { 0.0 },
                if iz + 1 < nz { x[i + sz] - x[i] } else { 0.0 },
            ];
            let s = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let w = if s <= delta { 1.0 / delta } else { 1.0 / s };
            (huber(s, delta), [w * d[0], w * d[1], w * d[2]])
        })
        .collect();
    let value = pairwise_map_sum(&terms, &|t: &(f64, [f64; 3])| t.0);
    let grad = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let ix = i % nx;
            let iy = (i / nx) % ny;
            let iz = i / sz;
            let q = &terms[i].1;
            let mut g = -(q[0] + q[1] + q[2]);
            if ix > 0 {
                g += terms[i - sx].1[0];
            }
            if iy > 0 {
                g += terms[i - sy].1[1];
            }
            if iz > 0 {
                g += terms[i - sz].1[2];
            }
            g
        })
        .collect();
    Ok((value, grad))
}

/// [`tv_huber_slice`] on a volume.
pub fn tv_huber(x: &Volume, delta: f64) -> Result<(f64, Volume)> {
    let (value, grad) = tv_huber_slice(&x.to_f64(), x.shape(), delta)?;
    Ok((value, Volume::from_f64(x.grid, &grad)?))
}

/// Bound on the Hessian norm of the Huber TV term: `||D||^2 <= 12` for
/// three-dimensional forward differences, scaled by the curvature `1 / delta`.
pub fn tv_lipschitz(delta: f64) -> f64 {
    12.0 / delta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmStart {
    Zero,
    Ubp,
}

impl std::str::FromStr for WarmStart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(WarmStart::Zero),
            "ubp" => Ok(WarmStart::Ubp),
            other => Err(Error::invalid(format!("unknown warm start {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterConfig {
    /// TV weight; `None` selects `1e-4 * ||A^H Psi||_inf`.
    pub lambda_tv: Option<f64>,
    pub mu_tik: f64,
    pub huber_delta: f64,
    pub max_iters: usize,
    pub rel_obj_tol: f64,
    /// Per-entry data weights, identity when absent.
    pub whitening: Option<Vec<f64>>,
    pub warm_start: WarmStart,
    pub power_iters: usize,
    /// Stop once `||W (A x - Psi)||^2` falls to this value.
    pub discrepancy_target: Option<f64>,
    pub nonnegative: bool,
    /// Known `||A||_2`, skipping the power iteration.
    pub op_norm: Option<f64>,
    pub seed: u64,
    pub ubp: UbpConfig,
}

impl Default for IterConfig {
    fn default() -> Self {
        IterConfig {
            lambda_tv: None,
            mu_tik: 0.0,
            huber_delta: 1e-2,
            max_iters: 200,
            rel_obj_tol: 1e-3,
            whitening: None,
            warm_start: WarmStart::Zero,
            power_iters: 20,
            discrepancy_target: None,
            nonnegative: true,
            op_norm: None,
            seed: 0,
            ubp: UbpConfig::default(),
        }
    }
}

impl IterConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be finite and nonnegative, got {v}")))
            }
        };
        if let Some(l) = self.lambda_tv {
            nonneg("lambda_tv", l)?;
        }
        nonneg("mu_tik", self.mu_tik)?;
        nonneg("rel_obj_tol", self.rel_obj_tol)?;
        if !(self.huber_delta > 0.0) {
            return Err(Error::invalid(format!("huber_delta must be positive, got {}", self.huber_delta)));
        }
        if self.power_iters < 3 {
            return Err(Error::invalid("power_iters must be at least 3"));
        }
        if let Some(t) = self.discrepancy_target {
            nonneg("discrepancy_target", t)?;
        }
        if let Some(n) = self.op_norm {
            nonneg("op_norm", n)?;
        }
        if let Some(w) = &self.whitening {
            if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::invalid("whitening weights must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RelativeDecrease,
    Discrepancy,
    MaxIterations,
    /// A plain projected gradient step from the current iterate made no progress.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FistaResult {
    pub x: Vec<f64>,
    /// `F` at the starting point followed by one entry per iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
    pub lambda_tv: f64,
    pub lipschitz: f64,
    pub op_norm: f64,
    /// `||W (A x - Psi)||^2` at the returned iterate.
    pub data_residual: f64,
}

struct Problem<'a> {
    op: &'a dyn LinearOperator,
    shape: [usize; 3],
    psi: &'a [Complex64],
    w2: Option<Vec<f64>>,
    lambda: f64,
    mu: f64,
    delta: f64,
}

impl Problem<'_> {
    /// Weighted residual `W^2 (A x - Psi)` and the data term `1/2 ||W (A x - Psi)||^2`.
    fn residual(&self, ax: &[Complex64]) -> (Vec<Complex64>, f64) {
        let mut r: Vec<Complex64> = ax.iter().zip(self.psi).map(|(a, p)| a - p).collect();
        let data = match &self.w2 {
            None => 0.5 * norm_sq_c(&r),
            Some(w2) => {
                let d = 0.5 * pairwise_map_sum(&r.iter().zip(w2).map(|(v, w)| v.norm_sqr() * w).collect::<Vec<_>>(), &|v: &f64| *v);
                r.iter_mut().zip(w2).for_each(|(v, w)| *v *= w);
                d
            }
        };
        (r, data)
    }

    fn objective(&self, x: &[f64], ax: &[Complex64]) -> Result<f64> {
        let (_, data) = self.residual(ax);
        let tv = if self.lambda > 0.0 {
            tv_huber_slice(x, self.shape, self.delta)?.0
        } else {
            0.0
        };
        Ok(data + self.lambda * tv + 0.5 * self.mu * norm_sq(x))
    }

    fn gradient(&self, y: &[f64], ay: &[Complex64]) -> Result<Vec<f64>> {
        let (r, _) = self.residual(ay);
        let mut g = self.op.adjoint(&r);
        if self.lambda > 0.0 {
            let (_, tg) = tv_huber_slice(y, self.shape, self.delta)?;
            g.iter_mut().zip(&tg).for_each(|(a, b)| *a += self.lambda * b);
        }
        if self.mu > 0.0 {
            g.iter_mut().zip(y).for_each(|(a, b)| *a += self.mu * b);
        }
        Ok(g)
    }
}

fn combine(a: &[f64], b: &[f64], c: &[f64], beta: f64, gamma: f64) -> Vec<f64> {
    // a + beta (b - a) + gamma (a - c)
    a.iter()
        .zip(b)
        .zip(c)
        .map(|((a, b), c)| a + beta * (b - a) + gamma * (a - c))
        .collect()
}

fn combine_c(a: &[Complex64], b: &[Complex64], c: &[Complex64], beta: f64, gamma: f64) -> Vec<Complex64> {
    a.iter()
        .zip(b)
        .zip(c)
        .map(|((a, b), c)| a + (b - a) * beta + (a - c) * gamma)
        .collect()
}

/// Monotone FISTA on a generic operator. `shape` lays out the domain for the
/// TV term; `x0` is projected before use.
pub fn fista_solve(
    op: &dyn LinearOperator,
    shape: [usize; 3],
    psi: &[Complex64],
    cfg: &IterConfig,
    x0: Option<Vec<f64>>,
) -> Result<FistaResult> {
    cfg.validate()?;
    let n = op.domain_len();
    if shape.iter().product::<usize>() != n {
        return Err(Error::invalid(format!("shape {shape:?} does not cover {n} unknowns")));
    }
    if psi.len() != op.range_len() {
        return Err(Error::invalid(format!(
            "data holds {} entries, operator range {}",
            psi.len(),
            op.range_len()
        )));
    }
    let w2 = match &cfg.whitening {
        Some(w) if w.len() != psi.len() => {
            return Err(Error::invalid("whitening weights do not match the data length"));
        }
        Some(w) => Some(w.iter().map(|v| v * v).collect::<Vec<f64>>()),
        None => None,
    };
    let w_max2 = w2.as_ref().map_or(1.0, |w| w.iter().copied().fold(0.0, f64::max));

    let lambda = match cfg.lambda_tv {
        Some(l) => l,
        None => {
            let weighted: Vec<Complex64> = match &w2 {
                Some(w) => psi.iter().zip(w).map(|(p, w)| p * w).collect(),
                None => psi.to_vec(),
            };
            1e-4 * op.adjoint(&weighted).iter().fold(0.0f64, |m, v| m.max(v.abs()))
        }
    };
    let op_norm = match cfg.op_norm {
        Some(v) => v,
        None => estimate_op_norm(op, cfg.power_iters, cfg.seed)?,
    };
    let mut lipschitz = op_norm * op_norm * w_max2 + cfg.mu_tik;
    if lambda > 0.0 {
        lipschitz += lambda * tv_lipschitz(cfg.huber_delta);
    }
    let problem = Problem {
        op,
        shape,
        psi,
        w2,
        lambda,
        mu: cfg.mu_tik,
        delta: cfg.huber_delta,
    };
    let project = |v: &mut [f64]| {
        if cfg.nonnegative {
            v.iter_mut().for_each(|a| *a = a.max(0.0));
        }
    };

    let mut x = match x0 {
        Some(v) if v.len() != n => return Err(Error::invalid("warm start has the wrong length")),
        Some(v) => v,
        None => vec![0.0; n],
    };
    project(&mut x);
    let mut ax = op.apply(&x);
    let mut f = problem.objective(&x, &ax)?;
    if !f.is_finite() {
        return Err(Error::Divergence { iteration: 0, value: f });
    }
    let mut objective = vec![f];
    if lipschitz == 0.0 {
        let (_, data) = problem.residual(&ax);
        return Ok(FistaResult {
            x,
            objective,
            iterations: 0,
            stop: StopReason::Stalled,
            lambda_tv: lambda,
            lipschitz,
            op_norm,
            data_residual: 2.0 * data,
        });
    }
    let step = 1.0 / lipschitz;

    let mut x_prev = x.clone();
    let mut ax_prev = ax.clone();
    let mut y = x.clone();
    let mut ay = ax.clone();
    let mut t = 1.0f64;
    let mut restarted = true;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    for it in 1..=cfg.max_iters {
        iterations = it;
        let g = problem.gradient(&y, &ay)?;
        let mut z: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        project(&mut z);
        let az = op.apply(&z);
        let fz = problem.objective(&z, &az)?;
        if !fz.is_finite() {
            return Err(Error::Divergence { iteration: it, value: fz });
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let accepted = fz <= f;
        let f_old = f;
        if accepted {
            x_prev = std::mem::replace(&mut x, z.clone());
            ax_prev = std::mem::replace(&mut ax, az.clone());
            f = fz;
        } else {
            x_prev.clone_from(&x);
            ax_prev.clone_from(&ax);
        }
        objective.push(f);

        if accepted {
            if let Some(target) = cfg.discrepancy_target {
                let (_, data) = problem.residual(&ax);
                if 2.0 * data <= target {
                    stop = StopReason::Discrepancy;
                    break;
                }
            }
            let decrease = f_old - f;
            if decrease <= cfg.rel_obj_tol * f_old.abs() {
                stop = StopReason::RelativeDecrease;
                break;
            }
            // y = x + (t / t_next)(z - x) + ((t - 1) / t_next)(x - x_prev), with z = x
            let gamma = (t - 1.0) / t_next;
            y = combine(&x, &z, &x_prev, t / t_next, gamma);
            ay = combine_c(&ax, &az, &ax_prev, t / t_next, gamma);
            t = t_next;
            restarted = false;
        } else {
            if restarted {
                stop = StopReason::Stalled;
                break;
            }
            // momentum overshot: restart from the current iterate
            y.clone_from(&x);
            ay.clone_from(&ax);
            t = 1.0;
            restarted = true;
        }
    }
    let (_, data) = problem.residual(&ax);
    Ok(FistaResult {
        x,
        objective,
        iterations,
        stop,
        lambda_tv: lambda,
        lipschitz,
        op_norm,
        data_residual: 2.0 * data,
    })
}

/// FISTA reconstruction of `psi` on `grid`. The warm start, when requested,
/// is the back-projection of the pressure traces scaled to best fit the data.
pub fn fista_reconstruct(
    psi: &Spectra,
    sensors: &SensorArray,
    medium: &AcousticMedium,
    chain: &ReceiveChain,
    grid: &GridSpec,
    cfg: &IterConfig,
) -> Result<(Volume, FistaResult)> {
    psi.validate()?;
    let model = ForwardModel::with_detectors(&psi.detector_ids, sensors, medium, chain, grid)?;
    let x0 = match cfg.warm_start {
        WarmStart::Zero => None,
        WarmStart::Ubp => {
            let traces = pressure_traces(psi, chain, medium)?;
            let ubp = ubp_reconstruct(&traces, sensors, grid, &UbpConfig { c0: medium.c0, ..cfg.ubp })?;
            let mut x = ubp.to_f64();
            if cfg.nonnegative {
                x.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let ax = model.apply(&x);
            let num: f64 = ax.iter().zip(&psi.values).map(|(a, p)| (a.conj() * p).re).sum();
            let den = norm_sq_c(&ax);
            let alpha = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
            x.iter_mut().for_each(|v| *v *= alpha);
            Some(x)
        }
    };
    let result = fista_solve(&model, grid.shape, &psi.values, cfg, x0)?;
    let vol = Volume::from_f64(*grid, &result.x)?;
    Ok((vol, result))
}

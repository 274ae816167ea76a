//! Invariant suites for the spherical convolution and the Fourier layer,
//! run on user-supplied configurations.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{geodesic_distance, hemisphere_area, Point3, SensorArray};
use crate::neuralop::{
    build_disco_matrices, disco_apply, fno_layer_apply, fno_spectral_conv, Activation, DiscoLayer, FnoLayer, FnoModes,
    KernelBasis,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckOutcome { name, passed, detail }
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscoCheckConfig {
    /// Bound on the mean relative error of the constant-kernel cap integral.
    pub cap_tol: f64,
    pub rotation_tol: f64,
    pub seed: u64,
}

impl Default for DiscoCheckConfig {
    fn default() -> Self {
        DiscoCheckConfig {
            cap_tol: 0.05,
            rotation_tol: 1e-6,
            seed: 0,
        }
    }
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let err: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let norm: f64 = b.iter().map(|y| y * y).sum();
    if norm > 0.0 {
        (err / norm).sqrt()
    } else {
        err.sqrt()
    }
}

/// Mean relative error of the constant-kernel integral against the cap area
/// `2 pi (1 - cos r) R^2`, over active outputs whose cap lies on the bowl.
pub fn cap_area_error(sensors: &SensorArray, radius: f64) -> Result<(f64, f64, usize)> {
    let outs: Vec<Point3> = sensors
        .active_indices()
        .into_iter()
        .filter(|&i| sensors.angles()[i].0 + radius < FRAC_PI_2 - 1e-9)
        .map(|i| sensors.unit_position(i))
        .collect();
    if outs.is_empty() {
        return Err(Error::invalid(format!("no active element has its radius-{radius} cap inside the bowl")));
    }
    let r2 = sensors.radius_m() * sensors.radius_m();
    let exact = TAU * (1.0 - radius.cos()) * r2;
    let m = build_disco_matrices(sensors, &outs, &KernelBasis::zernike(radius, 1)?)?;
    let g = m.apply_all(&vec![1.0; sensors.len()]);
    let errs: Vec<f64> = g.iter().map(|v| (v - exact).abs() / exact).collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let max = errs.iter().cloned().fold(0.0, f64::max);
    Ok((mean, max, outs.len()))
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Runs the DISCO invariants for `basis` on the active elements of `sensors`.
pub fn disco_checks(sensors: &SensorArray, basis: &KernelBasis, cfg: &DiscoCheckConfig) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let outs: Vec<Point3> = sensors.active_indices().into_iter().map(|i| sensors.unit_position(i)).collect();
    let matrices = match build_disco_matrices(sensors, &outs, basis) {
        Ok(m) => Arc::new(m),
        Err(e @ Error::EmptyNeighborhoods { .. }) => {
            out.push(CheckOutcome::new("neighbourhoods", false, e.to_string()));
            return Ok(out);
        }
        Err(e) => return Err(e),
    };
    let min_row = (0..matrices.n_out).map(|i| matrices.row_len(i)).min().unwrap_or(0);
    out.push(CheckOutcome::new(
        "neighbourhoods",
        true,
        format!("{} outputs, {} stored entries, fewest neighbours {min_row}", matrices.n_out, matrices.nnz()),
    ));

    match cap_area_error(sensors, basis.radius) {
        Ok((mean, max, n)) => out.push(CheckOutcome::new(
            "cap_area",
            mean <= cfg.cap_tol,
            format!("mean relative error {mean:.4} (max {max:.4}) over {n} outputs, bound {}", cfg.cap_tol),
        )),
        Err(e) => out.push(CheckOutcome::new("cap_area", false, e.to_string())),
    }

    // support membership, with a small band around the cut-off left undecided
    let active = sensors.active_indices();
    let step = (outs.len() / 64).max(1);
    let mut wrong = 0usize;
    for i in (0..outs.len()).step_by(step) {
        let cols = &matrices.cols[matrices.row_ptr[i]..matrices.row_ptr[i + 1]];
        for &j in &active {
            let d = geodesic_distance(&outs[i], &sensors.unit_position(j))?;
            let stored = cols.contains(&j);
            if (d < basis.radius - 1e-9 && !stored) || (d > basis.radius + 1e-9 && stored) {
                wrong += 1;
            }
        }
    }
    out.push(CheckOutcome::new("support", wrong == 0, format!("{wrong} misplaced entries")));

    let layer = DiscoLayer::random(basis.clone(), matrices, 1, 2, cfg.seed)?;
    let n = sensors.len();
    let f = random_vec(n, &mut rng);
    let g = random_vec(n, &mut rng);
    let a = 1.7;
    let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + y).collect();
    let lhs = disco_apply(&layer, &combo)?;
    let rhs: Vec<f64> = disco_apply(&layer, &f)?
        .iter()
        .zip(disco_apply(&layer, &g)?)
        .map(|(x, y)| a * x + y)
        .collect();
    let err = rel_l2(&lhs, &rhs);
    out.push(CheckOutcome::new("linearity", err < 1e-12, format!("relative error {err:.2e}")));

    // rotations act on the complete grid
    let full = sensors.with_active_mask(vec![true; n])?;
    let all: Vec<Point3> = (0..n).map(|i| full.unit_position(i)).collect();
    let (nt, np) = (full.n_theta(), full.n_phi());
    let layer = DiscoLayer::random(basis.clone(), Arc::new(build_disco_matrices(&full, &all, basis)?), 1, 2, cfg.seed)?;
    let rotate = |v: &[f64], shift: usize| -> Vec<f64> {
        let mut r = vec![0.0; v.len()];
        for (c, chunk) in v.chunks(nt * np).enumerate() {
            for i in 0..nt {
                for j in 0..np {
                    r[c * nt * np + i * np + (j + shift) % np] = chunk[i * np + j];
                }
            }
        }
        r
    };
    let mut worst = 0.0f64;
    for shift in [1, (np / 3).max(1)] {
        let lhs = disco_apply(&layer, &rotate(&f, shift))?;
        let rhs = rotate(&disco_apply(&layer, &f)?, shift);
        worst = worst.max(rel_l2(&lhs, &rhs));
    }
    out.push(CheckOutcome::new(
        "rotation",
        worst <= cfg.rotation_tol,
        format!("relative error {worst:.2e}, bound {:.0e}", cfg.rotation_tol),
    ));

    let covered: f64 = full.cell_weights().iter().sum();
    let area = hemisphere_area(full.radius_m());
    let err = (covered - area).abs() / area;
    out.push(CheckOutcome::new("quadrature_total", err < 1e-9, format!("cell areas sum to the bowl within {err:.1e}")));
    Ok(out)
}

fn random_complex(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn max_abs(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Runs the Fourier-layer invariants on `[channels x shape]` features with
/// the given retained modes.
pub fn fno_checks(channels: usize, shape: [usize; 3], modes: FnoModes, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [nt, np, nk] = shape;

    let full = FnoLayer::identity(channels, shape, FnoModes::full(shape), Activation::Identity)?;
    let f = random_complex(full.len(), &mut rng);
    let err = max_diff(&fno_layer_apply(&full, &f)?, &f) / max_abs(&f).max(f64::MIN_POSITIVE);
    out.push(CheckOutcome::new("identity", err < 1e-10, format!("relative error {err:.2e}")));

    let layer = FnoLayer::random(channels, shape, modes, seed)?;
    let beyond = if modes.theta < nt / 2 {
        Some((modes.theta + 1, 0, 0))
    } else if modes.phi < np / 2 {
        Some((0, modes.phi + 1, 0))
    } else if modes.k < nk {
        Some((0, 0, modes.k))
    } else {
        None
    };
    match beyond {
        Some((xt, xp, kb)) => {
            let mut g = vec![Complex64::new(0.0, 0.0); layer.len()];
            for c in 0..channels {
                for t in 0..nt {
                    for p in 0..np {
                        let phase = TAU * (xt as f64 * t as f64 / nt as f64 + xp as f64 * p as f64 / np as f64);
                        for k in 0..nk {
                            if kb == 0 || k >= kb {
                                g[((c * nt + t) * np + p) * nk + k] = Complex64::cis(phase);
                            }
                        }
                    }
                }
            }
            let leak = max_abs(&fno_spectral_conv(&layer, &g)?);
            out.push(CheckOutcome::new("low_pass", leak < 1e-12, format!("out-of-band response {leak:.2e}")));
        }
        None => out.push(CheckOutcome::new("low_pass", true, "every mode retained, nothing to reject".into())),
    }

    let proj = FnoLayer::identity(channels, shape, modes, Activation::Identity)?;
    let once = fno_layer_apply(&proj, &f)?;
    let twice = fno_layer_apply(&proj, &once)?;
    let err = max_diff(&twice, &once);
    out.push(CheckOutcome::new("projection", err < 1e-10, format!("max deviation {err:.2e}")));

    let g = random_complex(layer.len(), &mut rng);
    let a = Complex64::new(0.6, -1.3);
    let combo: Vec<Complex64> = f.iter().zip(&g).map(|(x, y)| a * x + y).collect();
    let lhs = fno_spectral_conv(&layer, &combo)?;
    let rhs: Vec<Complex64> = fno_spectral_conv(&layer, &f)?
        .iter()
        .zip(fno_spectral_conv(&layer, &g)?)
        .map(|(x, y)| a * x + y)
        .collect();
    let err = max_diff(&lhs, &rhs) / max_abs(&rhs).max(f64::MIN_POSITIVE);
    out.push(CheckOutcome::new("linearity", err < 1e-10, format!("relative error {err:.2e}")));
    Ok(out)
}

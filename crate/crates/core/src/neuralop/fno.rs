//! Fourier neural operator layer on `[C x N_theta x N_phi x N_k]` complex
//! features (bin index fastest).
//!
//! Each `(channel, bin)` slice is transformed over `(theta, phi)`, modes with
//! signed frequencies `|xi_theta| <= J_theta`, `|xi_phi| <= J_phi` and bins
//! `k <= J_k` (one-based) are multiplied by the spectral weights, all other
//! modes are zeroed, and the slice is transformed back. A real pointwise
//! channel mix and bias follow, then the activation.

use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{inverse_fiber, ReceiveChain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FnoModes {
    pub theta: usize,
    pub phi: usize,
    pub k: usize,
}

impl FnoModes {
    /// Largest modes that fit a grid: every mode retained.
    pub fn full(shape: [usize; 3]) -> Self {
        FnoModes {
            theta: shape[0] / 2,
            phi: shape[1] / 2,
            k: shape[2],
        }
    }

    fn weight_shape(&self) -> [usize; 3] {
        [2 * self.theta + 1, 2 * self.phi + 1, self.k]
    }

    pub fn weight_len(&self, channels: usize) -> usize {
        let [a, b, c] = self.weight_shape();
        channels * a * b * c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    /// ReLU applied to the real and imaginary parts separately.
    CRelu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnoLayer {
    pub channels: usize,
    /// `(N_theta, N_phi, N_k)`.
    pub shape: [usize; 3],
    pub modes: FnoModes,
    /// `[C x (2 J_theta + 1) x (2 J_phi + 1) x J_k]`, indexed by signed mode
    /// plus `J`, and by `k - 1`.
    pub spectral: Vec<Complex64>,
    /// Real `[C x C]` channel mix.
    pub pointwise: Vec<f64>,
    /// Real bias per channel, added to the real part.
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Signed frequency of FFT bin `b` of an `n`-point transform.
fn signed(b: usize, n: usize) -> i64 {
    if 2 * b < n {
        b as i64
    } else {
        b as i64 - n as i64
    }
}

impl FnoLayer {
    pub fn new(
        channels: usize,
        shape: [usize; 3],
        modes: FnoModes,
        spectral: Vec<Complex64>,
        pointwise: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if channels == 0 || shape.iter().any(|&n| n == 0) {
            return Err(Error::invalid("FNO layer needs at least one channel and a nonempty grid"));
        }
        if modes.theta > shape[0] / 2 || modes.phi > shape[1] / 2 || modes.k > shape[2] {
            return Err(Error::invalid(format!(
                "modes ({}, {}, {}) exceed the grid {:?}",
                modes.theta, modes.phi, modes.k, shape
            )));
        }
        if spectral.len() != modes.weight_len(channels) {
            return Err(Error::invalid("spectral weights do not match the retained modes"));
        }
        if pointwise.len() != channels * channels || bias.len() != channels {
            return Err(Error::invalid("pointwise weights or bias have the wrong size"));
        }
        Ok(FnoLayer {
            channels,
            shape,
            modes,
            spectral,
            pointwise,
            bias,
            activation,
        })
    }

    /// Unit spectral weights, identity mix, zero bias.
    pub fn identity(channels: usize, shape: [usize; 3], modes: FnoModes, activation: Activation) -> Result<Self> {
        let mut pointwise = vec![0.0; channels * channels];
        for c in 0..channels {
            pointwise[c * channels + c] = 1.0;
        }
        FnoLayer::new(
            channels,
            shape,
            modes,
            vec![Complex64::new(1.0, 0.0); modes.weight_len(channels)],
            pointwise,
            vec![0.0; channels],
            activation,
        )
    }

    /// Gaussian weights from a seed.
    pub fn random(channels: usize, shape: [usize; 3], modes: FnoModes, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let spectral = (0..modes.weight_len(channels))
            .map(|_| Complex64::new(normal(), normal()) * std::f64::consts::FRAC_1_SQRT_2)
            .collect();
        let scale = 1.0 / (channels as f64).sqrt();
        let pointwise = (0..channels * channels).map(|_| scale * normal()).collect();
        let bias = (0..channels).map(|_| 0.1 * normal()).collect();
        FnoLayer::new(channels, shape, modes, spectral, pointwise, bias, Activation::CRelu)
    }

    pub fn len(&self) -> usize {
        self.channels * self.shape.iter().product::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn weight(&self, c: usize, xt: i64, xp: i64, k: usize) -> Complex64 {
        let [a, b, kk] = self.modes.weight_shape();
        let it = (xt + self.modes.theta as i64) as usize;
        let ip = (xp + self.modes.phi as i64) as usize;
        self.spectral[((c * a + it) * b + ip) * kk + k]
    }
}

struct Plans {
    theta_fwd: Arc<dyn Fft<f64>>,
    theta_inv: Arc<dyn Fft<f64>>,
    phi_fwd: Arc<dyn Fft<f64>>,
    phi_inv: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(nt: usize, np: usize) -> Self {
        let mut planner = FftPlanner::new();
        Plans {
            theta_fwd: planner.plan_fft_forward(nt),
            theta_inv: planner.plan_fft_inverse(nt),
            phi_fwd: planner.plan_fft_forward(np),
            phi_inv: planner.plan_fft_inverse(np),
        }
    }
}

/// In-place 2D transform of a row-major `nt x np` slice.
fn fft2(buf: &mut [Complex64], nt: usize, np: usize, along_phi: &Arc<dyn Fft<f64>>, along_theta: &Arc<dyn Fft<f64>>) {
    for row in buf.chunks_mut(np) {
        along_phi.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); nt];
    for p in 0..np {
        for t in 0..nt {
            col[t] = buf[t * np + p];
        }
        along_theta.process(&mut col);
        for t in 0..nt {
            buf[t * np + p] = col[t];
        }
    }
}

fn check_input(layer: &FnoLayer, f: &[Complex64]) -> Result<()> {
    if f.len() != layer.len() {
        return Err(Error::invalid(format!(
            "features hold {} values, layer expects {} x {:?}",
            f.len(),
            layer.channels,
            layer.shape
        )));
    }
    Ok(())
}

/// Truncated spectral multiply, before the channel mix and activation.
pub fn fno_spectral_conv(layer: &FnoLayer, f: &[Complex64]) -> Result<Vec<Complex64>> {
    check_input(layer, f)?;
    let [nt, np, nk] = layer.shape;
    let plans = Plans::new(nt, np);
    let slice = nt * np;
    let norm = 1.0 / slice as f64;
    // one (channel, bin) slice per task
    let slices: Vec<Vec<Complex64>> = (0..layer.channels * nk)
        .into_par_iter()
        .map(|task| {
            let c = task / nk;
            let k = task % nk;
            let mut buf = vec![Complex64::new(0.0, 0.0); slice];
            if k >= layer.modes.k {
                return buf;
            }
            let base = c * slice * nk;
            for (s, b) in buf.iter_mut().enumerate() {
                *b = f[base + s * nk + k];
            }
            fft2(&mut buf, nt, np, &plans.phi_fwd, &plans.theta_fwd);
            for t in 0..nt {
                let xt = signed(t, nt);
                for p in 0..np {
                    let xp = signed(p, np);
                    let v = &mut buf[t * np + p];
                    if xt.unsigned_abs() as usize <= layer.modes.theta && xp.unsigned_abs() as usize <= layer.modes.phi {
                        *v *= layer.weight(c, xt, xp, k) * norm;
                    } else {
                        *v = Complex64::new(0.0, 0.0);
                    }
                }
            }
            fft2(&mut buf, nt, np, &plans.phi_inv, &plans.theta_inv);
            buf
        })
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); f.len()];
    for (task, buf) in slices.iter().enumerate() {
        let c = task / nk;
        let k = task % nk;
        let base = c * slice * nk;
        for (s, v) in buf.iter().enumerate() {
            out[base + s * nk + k] = *v;
        }
    }
    Ok(out)
}

/// `B g + b` with `g` the spectral convolution: the layer output before activation.
pub fn fno_preactivation(layer: &FnoLayer, f: &[Complex64]) -> Result<Vec<Complex64>> {
    let g = fno_spectral_conv(layer, f)?;
    let n = layer.len() / layer.channels;
    let c = layer.channels;
    let mut out = vec![Complex64::new(0.0, 0.0); g.len()];
    for co in 0..c {
        let dst = &mut out[co * n..(co + 1) * n];
        for ci in 0..c {
            let w = layer.pointwise[co * c + ci];
            if w == 0.0 {
                continue;
            }
            for (o, v) in dst.iter_mut().zip(&g[ci * n..(ci + 1) * n]) {
                *o += v * w;
            }
        }
        for o in dst.iter_mut() {
            o.re += layer.bias[co];
        }
    }
    Ok(out)
}

/// Full layer: spectral convolution, channel mix and bias, activation.
pub fn fno_layer_apply(layer: &FnoLayer, f: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut out = fno_preactivation(layer, f)?;
    if layer.activation == Activation::CRelu {
        for v in out.iter_mut() {
            *v = Complex64::new(v.re.max(0.0), v.im.max(0.0));
        }
    }
    Ok(out)
}

/// Inverse transform along the bin axis of `[C x N_theta x N_phi x N_k]`
/// features to real `[C x N_theta x N_phi x N_t]` time samples.
pub fn spectra_to_time_features(f: &[Complex64], n_fibers: usize, chain: &ReceiveChain) -> Result<Vec<f64>> {
    chain.validate()?;
    let nk = chain.n_freq;
    if f.len() != n_fibers * nk {
        return Err(Error::invalid(format!(
            "features hold {} values, expected {} fibers x {} bins",
            f.len(),
            n_fibers,
            nk
        )));
    }
    let n_t = chain.n_samples;
    let fft = FftPlanner::new().plan_fft_forward(n_t);
    let mut out = vec![0.0; n_fibers * n_t];
    out.par_chunks_mut(n_t).enumerate().for_each_init(
        || vec![Complex64::new(0.0, 0.0); n_t],
        |buf, (i, fiber)| inverse_fiber(&f[i * nk..(i + 1) * nk], &fft, buf, fiber),
    );
    Ok(out)
}

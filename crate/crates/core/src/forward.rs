//! Frequency-domain photoacoustic forward model.
//!
//! Detector `m` records, at the retained bins `omega_k = 2 pi k / T`
//! (`k = 1..=N_f`),
//!
//! ```text
//! Psi[m, k] = g_m * H(omega_k) * sum_r P(r) * exp(i kappa(omega_k) R) / (4 pi R) * dV
//! ```
//!
//! with `R = |r - s_m|`, `kappa(omega) = omega / c0 + i alpha(omega)` and
//! midpoint quadrature over the voxels. Spectra use the `exp(+i omega t)`
//! transform convention, so the inverse transform of a point source peaks at
//! the flight time `R / c0`.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, SensorArray};
use crate::summation::pairwise_map_sum;
use crate::volume::{GridSpec, Volume};

const FOUR_PI: f64 = 4.0 * PI;

/// Power-law attenuation `alpha(f) = alpha0 * (f / 1 MHz)^exponent` in Np/m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub alpha0_np_per_m: f64,
    pub exponent: f64,
}

impl PowerLaw {
    pub fn alpha(&self, freq_hz: f64) -> f64 {
        self.alpha0_np_per_m * (freq_hz / 1e6).powf(self.exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcousticMedium {
    pub c0: f64,
    pub rho0: f64,
    pub attenuation: Option<PowerLaw>,
}

impl Default for AcousticMedium {
    /// Water at room temperature, lossless.
    fn default() -> Self {
        AcousticMedium {
            c0: 1500.0,
            rho0: 1000.0,
            attenuation: None,
        }
    }
}

impl AcousticMedium {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0) || !(self.rho0 > 0.0) {
            return Err(Error::invalid(format!(
                "medium needs c0 > 0 and rho0 > 0, got {} and {}",
                self.c0, self.rho0
            )));
        }
        if let Some(a) = self.attenuation {
            if !(a.alpha0_np_per_m >= 0.0) || !a.exponent.is_finite() {
                return Err(Error::invalid(format!("invalid attenuation law {a:?}")));
            }
        }
        Ok(())
    }
}

/// Parametric receive response: Gaussian band-pass times a raised-cosine
/// anti-alias roll-off. Zero phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPass {
    pub center_hz: f64,
    /// Full width at half maximum divided by the center frequency.
    pub fractional_fwhm: f64,
    /// Half-amplitude point of the anti-alias roll-off.
    pub anti_alias_hz: f64,
    /// Width of the raised-cosine transition band.
    pub rolloff_hz: f64,
}

impl BandPass {
    /// The bowl transducers: 2.12 MHz center, 78% fractional bandwidth,
    /// 7.5 MHz analog anti-alias filter.
    pub fn system() -> Self {
        BandPass {
            center_hz: 2.12e6,
            fractional_fwhm: 0.78,
            anti_alias_hz: 7.5e6,
            rolloff_hz: 1.5e6,
        }
    }

    /// Band scaled to a highest usable frequency, for coarse desk-scale grids.
    pub fn scaled_to(f_max_hz: f64) -> Self {
        BandPass {
            center_hz: 0.5 * f_max_hz,
            fractional_fwhm: 0.78,
            anti_alias_hz: 0.8 * f_max_hz,
            rolloff_hz: 0.4 * f_max_hz,
        }
    }

    pub fn gain(&self, f: f64) -> f64 {
        let fwhm = self.fractional_fwhm * self.center_hz;
        let sigma = fwhm / (2.0 * (2.0 * 2f64.ln()).sqrt());
        let gauss = (-(f - self.center_hz).powi(2) / (2.0 * sigma * sigma)).exp();
        let lo = self.anti_alias_hz - 0.5 * self.rolloff_hz;
        let hi = self.anti_alias_hz + 0.5 * self.rolloff_hz;
        let aa = if f <= lo {
            1.0
        } else if f >= hi {
            0.0
        } else {
            0.5 * (1.0 + (PI * (f - lo) / self.rolloff_hz).cos())
        };
        gauss * aa
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiveChain {
    pub fs: f64,
    /// Samples per record; the record length is `n_samples / fs`.
    pub n_samples: usize,
    pub n_freq: usize,
    /// `H(omega_k)` for `k = 1..=n_freq`.
    pub response: Vec<Complex64>,
    /// Real gain per sensor element (indexed by element id).
    #[serde(default)]
    pub per_channel_gain: Option<Vec<f64>>,
    pub anti_alias_hz: f64,
}

impl ReceiveChain {
    pub fn new(fs: f64, record_s: f64, response: Vec<Complex64>, anti_alias_hz: f64) -> Result<Self> {
        if !(fs > 0.0) || !(record_s > 0.0) {
            return Err(Error::invalid(format!(
                "sampling rate and record length must be positive, got {fs} Hz and {record_s} s"
            )));
        }
        let chain = ReceiveChain {
            fs,
            n_samples: (fs * record_s).round() as usize,
            n_freq: response.len(),
            response,
            per_channel_gain: None,
            anti_alias_hz,
        };
        chain.validate()?;
        Ok(chain)
    }

    /// Unit response on every bin.
    pub fn flat(fs: f64, record_s: f64, n_freq: usize) -> Result<Self> {
        ReceiveChain::new(fs, record_s, vec![Complex64::new(1.0, 0.0); n_freq], fs / 2.0)
    }

    pub fn band_limited(fs: f64, record_s: f64, n_freq: usize, band: &BandPass) -> Result<Self> {
        let t = (fs * record_s).round() / fs;
        let response = (1..=n_freq)
            .map(|k| Complex64::new(band.gain(k as f64 / t), 0.0))
            .collect();
        ReceiveChain::new(fs, record_s, response, band.anti_alias_hz)
    }

    /// System defaults: 20 MHz sampling, 149 retained bins, bowl transducer band.
    pub fn system_default(record_s: f64) -> Result<Self> {
        ReceiveChain::band_limited(20e6, record_s, 149, &BandPass::system())
    }

    /// Chain sized for a grid and array: the window covers the farthest
    /// voxel-detector flight plus pulse support, the retained bins reach the
    /// grid Nyquist frequency `c0 / (2 pitch)`, and the band is scaled to it.
    pub fn for_setup(grid: &GridSpec, sensors: &SensorArray, medium: &AcousticMedium, fs: f64) -> Result<Self> {
        medium.validate()?;
        let f_max = medium.c0 / (2.0 * grid.pitch_m);
        let max_r = sensors
            .positions()
            .iter()
            .map(|p| grid.max_distance(p))
            .fold(0.0, f64::max);
        let record_s = max_r / medium.c0 + 8.0 / f_max;
        let n_samples = (fs * record_s).ceil();
        let record_s = n_samples / fs;
        let n_freq = ((f_max * record_s).floor() as usize).min(n_samples as usize / 2);
        ReceiveChain::band_limited(fs, record_s, n_freq, &BandPass::scaled_to(f_max.min(fs / 2.0)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::invalid("record holds fewer than two samples"));
        }
        if self.n_freq == 0 || self.n_freq > self.n_samples / 2 {
            return Err(Error::invalid(format!(
                "{} retained bins exceed the Nyquist bin {}",
                self.n_freq,
                self.n_samples / 2
            )));
        }
        if self.response.len() != self.n_freq {
            return Err(Error::invalid("response length differs from the bin count"));
        }
        if self.response.iter().any(|h| !(h.norm() <= 1.0 + 1e-12)) {
            return Err(Error::invalid("receive response magnitude exceeds one"));
        }
        Ok(())
    }

    pub fn with_gains(mut self, gains: Vec<f64>) -> Self {
        self.per_channel_gain = Some(gains);
        self
    }

    pub fn record_s(&self) -> f64 {
        self.n_samples as f64 / self.fs
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fs
    }

    /// Angular frequency of zero-based bin `b` (that is, `k = b + 1`).
    pub fn omega(&self, b: usize) -> f64 {
        TAU * (b + 1) as f64 / self.record_s()
    }

    pub fn freq_hz(&self) -> Vec<f64> {
        (1..=self.n_freq).map(|k| k as f64 / self.record_s()).collect()
    }

    pub fn gain(&self, element: usize) -> f64 {
        self.per_channel_gain
            .as_ref()
            .and_then(|g| g.get(element).copied())
            .unwrap_or(1.0)
    }
}

/// Complex spectra, one row of `n_freq` bins per detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectra {
    pub values: Vec<Complex64>,
    pub freq_hz: Vec<f64>,
    pub detector_ids: Vec<usize>,
}

impl Spectra {
    pub fn zeros(detector_ids: Vec<usize>, freq_hz: Vec<f64>) -> Self {
        Spectra {
            values: vec![Complex64::new(0.0, 0.0); detector_ids.len() * freq_hz.len()],
            freq_hz,
            detector_ids,
        }
    }

    pub fn n_det(&self) -> usize {
        self.detector_ids.len()
    }

    pub fn n_freq(&self) -> usize {
        self.freq_hz.len()
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        &self.values[m * self.n_freq()..(m + 1) * self.n_freq()]
    }

    pub fn energy(&self) -> f64 {
        pairwise_map_sum(&self.values, &|z: &Complex64| z.norm_sqr())
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.n_det() * self.n_freq() {
            return Err(Error::invalid(format!(
                "spectra hold {} values for {} detectors x {} bins",
                self.values.len(),
                self.n_det(),
                self.n_freq()
            )));
        }
        if self.freq_hz.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("spectral frequencies must increase strictly"));
        }
        Ok(())
    }

    fn check_against(&self, chain: &ReceiveChain) -> Result<()> {
        self.validate()?;
        if self.n_freq() != chain.n_freq {
            return Err(Error::invalid(format!(
                "spectra carry {} bins, receive chain {}",
                self.n_freq(),
                chain.n_freq
            )));
        }
        Ok(())
    }
}

/// Real time traces, one row of `n_t` samples per detector; sample `n` is at `n * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    pub n_t: usize,
    pub dt: f64,
    pub data: Vec<f64>,
    pub detector_ids: Vec<usize>,
}

impl Traces {
    pub fn n_det(&self) -> usize {
        self.detector_ids.len()
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.n_t..(m + 1) * self.n_t]
    }

    /// `a * self + other`, for linearity checks and superposition.
    pub fn axpy(&self, a: f64, other: &Traces) -> Traces {
        Traces {
            data: self.data.iter().zip(&other.data).map(|(x, y)| a * x + y).collect(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy)]
struct Detector {
    id: usize,
    pos: Point3,
    gain: f64,
}

#[derive(Clone, Copy)]
struct Source {
    pos: Point3,
    amp: f64,
}

/// Discretized forward operator `A: R^N -> C^(N_d * N_f)` on a fixed grid,
/// detector subset and receive chain.
///
/// The real-valued adjoint is `Re(A^H y)`, which is the transpose of `A`
/// viewed as a map into `R^(2M)`.
#[derive(Clone)]
pub struct ForwardModel {
    grid: GridSpec,
    detectors: Vec<Detector>,
    /// `omega_1 / c0`; the phase of bin `b` is `(b + 1) * step * R`.
    phase_step: f64,
    /// `alpha(omega_k)` per bin when the medium is lossy.
    attenuation: Option<Vec<f64>>,
    response: Vec<Complex64>,
    freq_hz: Vec<f64>,
}

const LANES: usize = 16;
const ADJOINT_LANES: usize = 32;

impl ForwardModel {
    /// Operator over all active elements of `sensors`.
    pub fn new(sensors: &SensorArray, medium: &AcousticMedium, chain: &ReceiveChain, grid: &GridSpec) -> Result<Self> {
        ForwardModel::with_detectors(&sensors.active_indices(), sensors, medium, chain, grid)
    }

    /// Operator over an explicit list of active elements, in the given order.
    pub fn with_detectors(
        ids: &[usize],
        sensors: &SensorArray,
        medium: &AcousticMedium,
        chain: &ReceiveChain,
        grid: &GridSpec,
    ) -> Result<Self> {
        medium.validate()?;
        chain.validate()?;
        grid.validate()?;
        if ids.is_empty() {
            return Err(Error::invalid("no active detectors"));
        }
        let mut detectors = Vec::with_capacity(ids.len());
        for &id in ids {
            if id >= sensors.len() || !sensors.is_active(id) {
                return Err(Error::invalid(format!("detector {id} is not an active element")));
            }
            let pos = sensors.position(id);
            let clearance = grid.distance_to_support(&pos);
            if clearance < grid.pitch_m {
                return Err(Error::Precondition(format!(
                    "detector {id} lies {clearance:.3e} m from the volume support, closer than one voxel pitch"
                )));
            }
            detectors.push(Detector {
                id,
                pos,
                gain: chain.gain(id),
            });
        }
        let freq_hz = chain.freq_hz();
        let attenuation = medium
            .attenuation
            .filter(|a| a.alpha0_np_per_m > 0.0)
            .map(|a| freq_hz.iter().map(|&f| a.alpha(f)).collect());
        Ok(ForwardModel {
            grid: *grid,
            detectors,
            phase_step: chain.omega(0) / medium.c0,
            attenuation,
            response: chain.response.clone(),
            freq_hz,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n_det(&self) -> usize {
        self.detectors.len()
    }

    pub fn n_freq(&self) -> usize {
        self.response.len()
    }

    pub fn detector_ids(&self) -> Vec<usize> {
        self.detectors.iter().map(|d| d.id).collect()
    }

    pub fn freq_hz(&self) -> &[f64] {
        &self.freq_hz
    }

    fn sources(&self, x: &[f64]) -> Vec<Source> {
        x.iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| Source {
                pos: self.grid.position(i),
                amp: v / FOUR_PI,
            })
            .collect()
    }

    /// `A x`, row-major `[n_det x n_freq]`.
    pub fn apply(&self, x: &[f64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.grid.len(), "volume length mismatch");
        let sources = self.sources(x);
        let nf = self.n_freq();
        let dv = self.grid.voxel_volume();
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_det() * nf];
        out.par_chunks_mut(nf).zip(&self.detectors).for_each(|(row, det)| {
            let mut re = vec![0.0; nf];
            let mut im = vec![0.0; nf];
            match &self.attenuation {
                None => green_row_lossless(&det.pos, &sources, self.phase_step, &mut re, &mut im),
                Some(alpha) => green_row_lossy(&det.pos, &sources, self.phase_step, alpha, &mut re, &mut im),
            }
            let scale = det.gain * dv;
            for (k, o) in row.iter_mut().enumerate() {
                *o = self.response[k] * Complex64::new(re[k], im[k]) * scale;
            }
        });
        out
    }

    /// `Re(A^H y)` over every voxel of the grid.
    pub fn adjoint(&self, y: &[Complex64]) -> Vec<f64> {
        let nf = self.n_freq();
        assert_eq!(y.len(), self.n_det() * nf, "spectra length mismatch");
        let dv = self.grid.voxel_volume();
        // Fold receive response, gain and quadrature into the data once.
        let weighted: Vec<Complex64> = y
            .chunks(nf)
            .zip(&self.detectors)
            .flat_map(|(row, det)| {
                row.iter()
                    .zip(&self.response)
                    .map(move |(v, h)| h.conj() * v * (det.gain * dv / FOUR_PI))
            })
            .collect();
        const BLOCK: usize = 256;
        let mut out = vec![0.0; self.grid.len()];
        out.par_chunks_mut(BLOCK).enumerate().for_each(|(b, block)| {
            let base = b * BLOCK;
            let positions: Vec<Point3> = (0..block.len()).map(|i| self.grid.position(base + i)).collect();
            for (det, row) in self.detectors.iter().zip(weighted.chunks(nf)) {
                match &self.attenuation {
                    None => adjoint_lossless(&det.pos, &positions, row, self.phase_step, block),
                    Some(alpha) => adjoint_lossy(&det.pos, &positions, row, self.phase_step, alpha, block),
                }
            }
        });
        out
    }

    /// `A x` restricted to detector rows `rows` (indices into this operator's
    /// detector list) and zero-based bins `modes`, evaluated directly for the
    /// selected entries only. Row-major `[rows x modes]`.
    pub fn apply_selected(&self, x: &[f64], rows: &[usize], modes: &[usize]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.grid.len(), "volume length mismatch");
        let sources = self.sources(x);
        let dv = self.grid.voxel_volume();
        let nm = modes.len();
        let mut out = vec![Complex64::new(0.0, 0.0); rows.len() * nm];
        out.par_chunks_mut(nm.max(1)).zip(rows).for_each(|(row, &r)| {
            let det = &self.detectors[r];
            let mut acc = vec![Complex64::new(0.0, 0.0); nm];
            let Some(alpha) = &self.attenuation else {
                let mut re = vec![0.0; nm];
                let mut im = vec![0.0; nm];
                selected_row_lossless(&det.pos, &sources, self.phase_step, modes, &mut re, &mut im);
                for ((o, &m), (a, b)) in row.iter_mut().zip(modes).zip(re.iter().zip(&im)) {
                    *o = self.response[m] * Complex64::new(*a, *b) * (det.gain * dv);
                }
                return;
            };
            for s in &sources {
                let dist = distance(&det.pos, &s.pos);
                let a = s.amp / dist;
                for (o, &m) in acc.iter_mut().zip(modes) {
                    let phase = (m + 1) as f64 * self.phase_step * dist;
                    *o += Complex64::from_polar(a * (-alpha[m] * dist).exp(), phase);
                }
            }
            for ((o, a), &m) in row.iter_mut().zip(acc).zip(modes) {
                *o = self.response[m] * a * (det.gain * dv);
            }
        });
        out
    }
}

/// Lane-wise `(sin x, cos x)`: reduction by `pi / 2` in three parts and
/// minimax polynomials on `[-pi/4, pi/4]`, accurate to a few ulp for
/// `|x| < 1e6`. Written branch-free so the lanes vectorize.
#[inline(always)]
fn sin_cos_lanes<const N: usize>(x: &[f64; N]) -> ([f64; N], [f64; N]) {
    const P1: f64 = 2.0 * 7.853_981_256_484_985_351_56e-1;
    const P2: f64 = 2.0 * 3.774_894_707_930_798_176_68e-8;
    const P3: f64 = 2.0 * 2.695_151_429_079_059_526_45e-15;
    const S: [f64; 6] = [
        1.589_623_015_765_465_680_60e-10,
        -2.505_074_776_285_780_728_66e-8,
        2.755_731_362_138_572_452_13e-6,
        -1.984_126_982_958_953_859_96e-4,
        8.333_333_333_322_118_588_78e-3,
        -1.666_666_666_666_663_072_95e-1,
    ];
    const C: [f64; 6] = [
        -1.135_853_652_138_768_173_00e-11,
        2.087_570_084_197_473_167_78e-9,
        -2.755_731_417_929_673_881_12e-7,
        2.480_158_728_885_170_453_48e-5,
        -1.388_888_888_887_305_641_16e-3,
        4.166_666_666_666_659_292_18e-2,
    ];
    let mut sin = [0.0; N];
    let mut cos = [0.0; N];
    for l in 0..N {
        let j = (x[l] * std::f64::consts::FRAC_2_PI).round();
        let r = ((x[l] - j * P1) - j * P2) - j * P3;
        let z = r * r;
        let ps = ((((S[0] * z + S[1]) * z + S[2]) * z + S[3]) * z + S[4]) * z + S[5];
        let pc = ((((C[0] * z + C[1]) * z + C[2]) * z + C[3]) * z + C[4]) * z + C[5];
        let s = r + r * z * ps;
        let c = 1.0 - 0.5 * z + z * z * pc;
        let q = (j as i64) & 3;
        let (a, b) = if q & 1 == 1 { (c, s) } else { (s, c) };
        sin[l] = if q & 2 == 2 { -a } else { a };
        cos[l] = if (q + 1) & 2 == 2 { -b } else { b };
    }
    (sin, cos)
}

#[inline]
fn distance(a: &Point3, b: &Point3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Accumulates `sum_s amp_s / R_s * exp(i k step R_s)` for `k = 1..=nf`.
///
/// Sources are processed in lanes; each lane advances its phasor by one
/// complex multiply per bin into its own accumulator, and the lanes are
/// added in a fixed order at the end.
#[inline(always)]
fn green_row_lossless_impl(det: &Point3, sources: &[Source], step: f64, re: &mut [f64], im: &mut [f64]) {
    let nf = re.len();
    let mut acc_re = vec![[0.0; LANES]; nf];
    let mut acc_im = vec![[0.0; LANES]; nf];
    for chunk in sources.chunks(LANES) {
        // padding lanes sit at unit distance with zero amplitude
        let mut r = [1.0; LANES];
        let mut amp = [0.0; LANES];
        for (l, s) in chunk.iter().enumerate() {
            r[l] = distance(det, &s.pos);
            amp[l] = s.amp;
        }
        let mut phase = [0.0; LANES];
        for l in 0..LANES {
            phase[l] = step * r[l];
        }
        let (zi, zr) = sin_cos_lanes(&phase);
        let mut cr = [0.0; LANES];
        let mut ci = [0.0; LANES];
        for l in 0..LANES {
            let a = amp[l] / r[l];
            cr[l] = a * zr[l];
            ci[l] = a * zi[l];
        }
        for (ar, ai) in acc_re.iter_mut().zip(acc_im.iter_mut()) {
            for l in 0..LANES {
                ar[l] += cr[l];
                ai[l] += ci[l];
                let nr = cr[l] * zr[l] - ci[l] * zi[l];
                let ni = cr[l] * zi[l] + ci[l] * zr[l];
                cr[l] = nr;
                ci[l] = ni;
            }
        }
    }
    for k in 0..nf {
        re[k] += acc_re[k].iter().sum::<f64>();
        im[k] += acc_im[k].iter().sum::<f64>();
    }
}

fn green_row_lossless(det: &Point3, sources: &[Source], step: f64, re: &mut [f64], im: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the CPU supports AVX-512F.
        return unsafe { green_row_lossless_avx512(det, sources, step, re, im) };
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        return unsafe { green_row_lossless_avx2(det, sources, step, re, im) };
    }
    green_row_lossless_impl(det, sources, step, re, im)
}

/// Same arithmetic as the portable path (no contraction into FMA), compiled
/// for wider vectors, so results agree bitwise.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn green_row_lossless_avx2(det: &Point3, sources: &[Source], step: f64, re: &mut [f64], im: &mut [f64]) {
    green_row_lossless_impl(det, sources, step, re, im)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn green_row_lossless_avx512(det: &Point3, sources: &[Source], step: f64, re: &mut [f64], im: &mut [f64]) {
    green_row_lossless_impl(det, sources, step, re, im)
}

/// Accumulates `sum_s amp_s / R_s * exp(i (m + 1) step R_s)` for the listed
/// bins only. Each lane keeps the powers `z^(2^j)` of its base phasor and
/// steps between consecutive bins by the set bits of the gap.
#[inline(always)]
fn selected_row_lossless_impl(det: &Point3, sources: &[Source], step: f64, modes: &[usize], re: &mut [f64], im: &mut [f64]) {
    let nm = modes.len();
    let top = modes.iter().map(|&m| m + 1).max().unwrap_or(1);
    let bits = (usize::BITS - top.leading_zeros()) as usize;
    let mut acc_re = vec![[0.0; LANES]; nm];
    let mut acc_im = vec![[0.0; LANES]; nm];
    let mut pow_re = vec![[0.0; LANES]; bits];
    let mut pow_im = vec![[0.0; LANES]; bits];
    for chunk in sources.chunks(LANES) {
        let mut r = [1.0; LANES];
        let mut amp = [0.0; LANES];
        for (l, s) in chunk.iter().enumerate() {
            r[l] = distance(det, &s.pos);
            amp[l] = s.amp;
        }
        let mut phase = [0.0; LANES];
        for l in 0..LANES {
            phase[l] = step * r[l];
        }
        let (zi, zr) = sin_cos_lanes(&phase);
        pow_re[0] = zr;
        pow_im[0] = zi;
        for j in 1..bits {
            for l in 0..LANES {
                let (a, b) = (pow_re[j - 1][l], pow_im[j - 1][l]);
                pow_re[j][l] = a * a - b * b;
                pow_im[j][l] = 2.0 * a * b;
            }
        }
        let mut cr = [0.0; LANES];
        let mut ci = [0.0; LANES];
        for l in 0..LANES {
            cr[l] = amp[l] / r[l];
        }
        let mut at = 0usize;
        for ((ar, ai), &m) in acc_re.iter_mut().zip(acc_im.iter_mut()).zip(modes) {
            let gap = m + 1 - at;
            at = m + 1;
            for j in 0..bits {
                if gap >> j & 1 == 1 {
                    for l in 0..LANES {
                        let nr = cr[l] * pow_re[j][l] - ci[l] * pow_im[j][l];
                        let ni = cr[l] * pow_im[j][l] + ci[l] * pow_re[j][l];
                        cr[l] = nr;
                        ci[l] = ni;
                    }
                }
            }
            for l in 0..LANES {
                ar[l] += cr[l];
                ai[l] += ci[l];
            }
        }
    }
    for j in 0..nm {
        re[j] += acc_re[j].iter().sum::<f64>();
        im[j] += acc_im[j].iter().sum::<f64>();
    }
}

fn selected_row_lossless(det: &Point3, sources: &[Source], step: f64, modes: &[usize], re: &mut [f64], im: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the CPU supports AVX-512F.
        return unsafe { selected_row_lossless_avx512(det, sources, step, modes, re, im) };
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        return unsafe { selected_row_lossless_avx2(det, sources, step, modes, re, im) };
    }
    selected_row_lossless_impl(det, sources, step, modes, re, im)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn selected_row_lossless_avx2(det: &Point3, sources: &[Source], step: f64, modes: &[usize], re: &mut [f64], im: &mut [f64]) {
    selected_row_lossless_impl(det, sources, step, modes, re, im)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn selected_row_lossless_avx512(det: &Point3, sources: &[Source], step: f64, modes: &[usize], re: &mut [f64], im: &mut [f64]) {
    selected_row_lossless_impl(det, sources, step, modes, re, im)
}

fn green_row_lossy(det: &Point3, sources: &[Source], step: f64, alpha: &[f64], re: &mut [f64], im: &mut [f64]) {
    for s in sources {
        let r = distance(det, &s.pos);
        let a = s.amp / r;
        for (k, (er, ei)) in re.iter_mut().zip(im.iter_mut()).enumerate() {
            let z = Complex64::from_polar(a * (-alpha[k] * r).exp(), (k + 1) as f64 * step * r);
            *er += z.re;
            *ei += z.im;
        }
    }
}

/// Adds `Re(sum_k conj(exp(i k step R)) w_k) / R` to each voxel of a block,
/// evaluating the polynomial in `exp(-i step R)` by Horner's rule across
/// lanes of voxels.
#[inline(always)]
fn adjoint_lossless_impl(det: &Point3, positions: &[Point3], w: &[Complex64], step: f64, out: &mut [f64]) {
    for (pos, o) in positions.chunks(ADJOINT_LANES).zip(out.chunks_mut(ADJOINT_LANES)) {
        let mut r = [1.0; ADJOINT_LANES];
        for (l, p) in pos.iter().enumerate() {
            r[l] = distance(det, p);
        }
        let mut phase = [0.0; ADJOINT_LANES];
        let mut inv_r = [0.0; ADJOINT_LANES];
        for l in 0..ADJOINT_LANES {
            phase[l] = step * r[l];
            inv_r[l] = 1.0 / r[l];
        }
        let (sn, qr) = sin_cos_lanes(&phase);
        let mut qi = [0.0; ADJOINT_LANES];
        for l in 0..ADJOINT_LANES {
            qi[l] = -sn[l];
        }
        let mut sr = [0.0; ADJOINT_LANES];
        let mut si = [0.0; ADJOINT_LANES];
        for wk in w.iter().rev() {
            for l in 0..ADJOINT_LANES {
                let nr = sr[l] * qr[l] - si[l] * qi[l] + wk.re;
                let ni = sr[l] * qi[l] + si[l] * qr[l] + wk.im;
                sr[l] = nr;
                si[l] = ni;
            }
        }
        for (l, v) in o.iter_mut().enumerate() {
            // one more factor of q for the k = 1 offset; keep the real part
            *v += (sr[l] * qr[l] - si[l] * qi[l]) * inv_r[l];
        }
    }
}

fn adjoint_lossless(det: &Point3, positions: &[Point3], w: &[Complex64], step: f64, out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the CPU supports AVX-512F.
        return unsafe { adjoint_lossless_avx512(det, positions, w, step, out) };
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        return unsafe { adjoint_lossless_avx2(det, positions, w, step, out) };
    }
    adjoint_lossless_impl(det, positions, w, step, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn adjoint_lossless_avx2(det: &Point3, positions: &[Point3], w: &[Complex64], step: f64, out: &mut [f64]) {
    adjoint_lossless_impl(det, positions, w, step, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn adjoint_lossless_avx512(det: &Point3, positions: &[Point3], w: &[Complex64], step: f64, out: &mut [f64]) {
    adjoint_lossless_impl(det, positions, w, step, out)
}

fn adjoint_lossy(det: &Point3, positions: &[Point3], w: &[Complex64], step: f64, alpha: &[f64], out: &mut [f64]) {
    for (p, o) in positions.iter().zip(out.iter_mut()) {
        let r = distance(det, p);
        let mut acc = 0.0;
        for (k, wk) in w.iter().enumerate() {
            let g = Complex64::from_polar((-alpha[k] * r).exp(), -((k + 1) as f64) * step * r);
            acc += (g * wk).re;
        }
        *o += acc / r;
    }
}

/// Spectra of an initial-pressure volume at the active detectors.
pub fn forward_operator(
    p: &Volume,
    sensors: &SensorArray,
    medium: &AcousticMedium,
    chain: &ReceiveChain,
) -> Result<Spectra> {
    let model = ForwardModel::new(sensors, medium, chain, &p.grid)?;
    Ok(Spectra {
        values: model.apply(&p.to_f64()),
        freq_hz: model.freq_hz().to_vec(),
        detector_ids: model.detector_ids(),
    })
}

/// `Re(A^H psi)` on `grid`, for spectra recorded by `psi.detector_ids`.
pub fn adjoint_operator(
    psi: &Spectra,
    sensors: &SensorArray,
    medium: &AcousticMedium,
    chain: &ReceiveChain,
    grid: &GridSpec,
) -> Result<Volume> {
    psi.check_against(chain)?;
    let model = ForwardModel::with_detectors(&psi.detector_ids, sensors, medium, chain, grid)?;
    Volume::from_f64(*grid, &model.adjoint(&psi.values))
}

/// Inverse transform of one detector's retained bins to `n_t` real samples,
/// `x_n = (2 / N) Re sum_k X_k exp(-i 2 pi k n / N)`. Bin 0 and bins above
/// `N_f` are zero; at an even-length Nyquist bin only the real part survives.
pub(crate) fn inverse_fiber(bins: &[Complex64], fft: &Arc<dyn Fft<f64>>, buf: &mut [Complex64], out: &mut [f64]) {
    let n = buf.len();
    buf.fill(Complex64::new(0.0, 0.0));
    for (b, &v) in bins.iter().enumerate() {
        let k = b + 1;
        buf[k] += v;
        if n - k != k {
            buf[n - k] += v.conj();
        }
    }
    fft.process(buf);
    let inv = 1.0 / n as f64;
    for (o, z) in out.iter_mut().zip(buf.iter()) {
        *o = z.re * inv;
    }
}

/// Real time traces from retained positive-frequency bins.
pub fn to_time_domain(psi: &Spectra, chain: &ReceiveChain) -> Result<Traces> {
    psi.check_against(chain)?;
    let n_t = chain.n_samples;
    if chain.n_freq > n_t / 2 {
        return Err(Error::invalid("retained bins exceed the Nyquist bin"));
    }
    let fft = FftPlanner::new().plan_fft_forward(n_t);
    let nf = psi.n_freq();
    let mut data = vec![0.0; psi.n_det() * n_t];
    data.par_chunks_mut(n_t).enumerate().for_each_init(
        || vec![Complex64::new(0.0, 0.0); n_t],
        |buf, (m, out)| inverse_fiber(&psi.values[m * nf..(m + 1) * nf], &fft, buf, out),
    );
    Ok(Traces {
        n_t,
        dt: chain.dt(),
        data,
        detector_ids: psi.detector_ids.clone(),
    })
}

/// Forward DFT of real traces, `X_k = sum_n x_n exp(+i 2 pi k n / N)`, keeping
/// bins `1..=N_f`. Inverts [`to_time_domain`] on every bin below Nyquist.
pub fn from_time_domain(traces: &Traces, chain: &ReceiveChain) -> Result<Spectra> {
    chain.validate()?;
    if traces.n_t != chain.n_samples {
        return Err(Error::invalid(format!(
            "traces hold {} samples, receive chain {}",
            traces.n_t, chain.n_samples
        )));
    }
    let n_t = traces.n_t;
    let nf = chain.n_freq;
    let fft = FftPlanner::new().plan_fft_forward(n_t);
    let mut values = vec![Complex64::new(0.0, 0.0); traces.n_det() * nf];
    values.par_chunks_mut(nf).enumerate().for_each_init(
        || vec![Complex64::new(0.0, 0.0); n_t],
        |buf, (m, row)| {
            for (b, &x) in buf.iter_mut().zip(traces.row(m)) {
                *b = Complex64::new(x, 0.0);
            }
            fft.process(buf);
            for (k, o) in row.iter_mut().enumerate() {
                *o = buf[k + 1].conj();
            }
        },
    );
    Ok(Spectra {
        values,
        freq_hz: chain.freq_hz(),
        detector_ids: traces.detector_ids.clone(),
    })
}

/// Acoustic pressure traces for back-projection.
///
/// The single-layer sum is the pressure's time antiderivative scaled by
/// `c0^2`, so the pressure spectrum is `-i omega / c0^2` times it.
pub fn pressure_traces(psi: &Spectra, chain: &ReceiveChain, medium: &AcousticMedium) -> Result<Traces> {
    psi.check_against(chain)?;
    medium.validate()?;
    let nf = psi.n_freq();
    let c2 = medium.c0 * medium.c0;
    let mut dpsi = psi.clone();
    for row in dpsi.values.chunks_mut(nf) {
        for (b, v) in row.iter_mut().enumerate() {
            *v *= Complex64::new(0.0, -chain.omega(b) / c2);
        }
    }
    to_time_domain(&dpsi, chain)
}

/// Adds circular complex Gaussian noise at `snr_db` relative to the spectra
/// energy. `f64::INFINITY` returns the input unchanged.
pub fn add_noise(psi: &Spectra, snr_db: f64, rng_seed: u64) -> Result<Spectra> {
    psi.validate()?;
    if psi.values.is_empty() {
        return Err(Error::invalid("cannot add noise to empty spectra"));
    }
    if snr_db == f64::INFINITY {
        return Ok(psi.clone());
    }
    if snr_db.is_nan() {
        return Err(Error::invalid("SNR is NaN"));
    }
    let energy = psi.energy();
    if energy == 0.0 {
        return Err(Error::invalid("zero-energy spectra have no finite SNR"));
    }
    let variance = noise_variance(energy, psi.values.len(), snr_db);
    let sd = (variance / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = psi.clone();
    for v in out.values.iter_mut() {
        let nr: f64 = StandardNormal.sample(&mut rng);
        let ni: f64 = StandardNormal.sample(&mut rng);
        *v += Complex64::new(sd * nr, sd * ni);
    }
    Ok(out)
}

/// Per-entry complex noise variance giving `snr_db` on `n` entries of total energy `energy`.
pub fn noise_variance(energy: f64, n: usize, snr_db: f64) -> f64 {
    energy / (n as f64 * 10f64.powf(snr_db / 10.0))
}

/// Random subset of frequency bins and sensors for the physics residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsMask {
    /// Zero-based bin indices, ascending.
    pub mode_indices: Vec<usize>,
    /// Sensor element ids, ascending.
    pub sensor_indices: Vec<usize>,
    pub seed: u64,
}

impl PhysicsMask {
    /// Every bin and every active sensor.
    pub fn identity(chain: &ReceiveChain, sensors: &SensorArray) -> Self {
        PhysicsMask {
            mode_indices: (0..chain.n_freq).collect(),
            sensor_indices: sensors.active_indices(),
            seed: 0,
        }
    }

    pub fn validate(&self, n_freq: usize) -> Result<()> {
        if self.mode_indices.is_empty() || self.sensor_indices.is_empty() {
            return Err(Error::invalid("physics mask selects nothing"));
        }
        if self.mode_indices.windows(2).any(|w| w[1] <= w[0])
            || self.sensor_indices.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::invalid("physics mask indices must be ascending and unique"));
        }
        if *self.mode_indices.last().unwrap() >= n_freq {
            return Err(Error::invalid("physics mask selects a bin beyond the retained band"));
        }
        Ok(())
    }
}

/// Samples `n_modes` bins and `n_sensors` active sensors uniformly without replacement.
pub fn sample_physics_mask(
    n_modes: usize,
    n_sensors: usize,
    chain: &ReceiveChain,
    sensors: &SensorArray,
    rng_seed: u64,
) -> Result<PhysicsMask> {
    let active = sensors.active_indices();
    if n_modes == 0 || n_sensors == 0 {
        return Err(Error::invalid("physics mask needs at least one mode and one sensor"));
    }
    if n_modes > chain.n_freq {
        return Err(Error::invalid(format!("{n_modes} modes requested from {} bins", chain.n_freq)));
    }
    if n_sensors > active.len() {
        return Err(Error::invalid(format!(
            "{n_sensors} sensors requested from {} active elements",
            active.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut modes = rand::seq::index::sample(&mut rng, chain.n_freq, n_modes).into_vec();
    let mut picks = rand::seq::index::sample(&mut rng, active.len(), n_sensors).into_vec();
    modes.sort_unstable();
    picks.sort_unstable();
    Ok(PhysicsMask {
        mode_indices: modes,
        sensor_indices: picks.into_iter().map(|i| active[i]).collect(),
        seed: rng_seed,
    })
}

/// `|| M A p_hat - M psi ||^2` over the masked (sensor, bin) pairs, evaluating
/// only the masked entries of `A p_hat`.
pub fn physics_residual(
    p_hat: &Volume,
    psi: &Spectra,
    mask: &PhysicsMask,
    sensors: &SensorArray,
    medium: &AcousticMedium,
    chain: &ReceiveChain,
) -> Result<f64> {
    psi.check_against(chain)?;
    mask.validate(chain.n_freq)?;
    let mut psi_rows = Vec::with_capacity(mask.sensor_indices.len());
    for id in &mask.sensor_indices {
        let row = psi
            .detector_ids
            .iter()
            .position(|d| d == id)
            .ok_or_else(|| Error::invalid(format!("masked sensor {id} has no spectra row")))?;
        psi_rows.push(row);
    }
    let model = ForwardModel::with_detectors(&mask.sensor_indices, sensors, medium, chain, &p_hat.grid)?;
    let rows: Vec<usize> = (0..mask.sensor_indices.len()).collect();
    let predicted = model.apply_selected(&p_hat.to_f64(), &rows, &mask.mode_indices);
    let nm = mask.mode_indices.len();
    let diffs: Vec<Complex64> = psi_rows
        .iter()
        .enumerate()
        .flat_map(|(r, &pr)| {
            let measured = psi.row(pr);
            let predicted = &predicted[r * nm..(r + 1) * nm];
            mask.mode_indices
                .iter()
                .zip(predicted)
                .map(move |(&m, a)| a - measured[m])
        })
        .collect();
    Ok(pairwise_map_sum(&diffs, &|z: &Complex64| z.norm_sqr()))
}

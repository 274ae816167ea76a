//! Universal back-projection.
//!
//! Each trace is filtered to `b(t) = d/dt [t p(t)]`, and every voxel sums
//! `-w(r, s_m) b_m(|r - s_m| / c0)` over the active detectors, normalized by
//! the total detector weight. The sign makes a positive source reconstruct
//! as a positive peak: the far-field pressure of a compact positive source
//! falls through zero at the arrival time, so its time derivative is negative
//! there.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Traces;
use crate::geometry::{Point3, SensorArray};
use crate::summation::{pairwise_sum, KahanSum};
use crate::volume::{GridSpec, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Linear,
    /// Catmull-Rom; cells touching the record ends fall back to linear.
    Cubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accumulation {
    Kahan,
    Pairwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UbpConfig {
    pub c0: f64,
    pub interp: Interp,
    /// Weight detectors by their cell area.
    pub use_solid_angle_weights: bool,
    /// Weight each pair by `1 / R`.
    pub spreading_weight: bool,
    pub accumulation: Accumulation,
}

impl Default for UbpConfig {
    fn default() -> Self {
        UbpConfig {
            c0: 1500.0,
            interp: Interp::Linear,
            use_solid_angle_weights: true,
            spreading_weight: true,
            accumulation: Accumulation::Kahan,
        }
    }
}

impl std::str::FromStr for Interp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Interp::Linear),
            "cubic" => Ok(Interp::Cubic),
            other => Err(Error::invalid(format!("unknown interpolation {other:?}"))),
        }
    }
}

/// `b_n = (t_{n+1} p_{n+1} - t_{n-1} p_{n-1}) / (2 dt)` with `t_n = n dt`;
/// one-sided differences at both ends. The sample spacing cancels, since
/// `t_n p_n / dt = n p_n`.
pub fn filter_trace(p: &[f64]) -> Result<Vec<f64>> {
    let n = p.len();
    if n < 3 {
        return Err(Error::invalid(format!("back-projection filter needs 3 samples, got {n}")));
    }
    let tp = |i: usize| i as f64 * p[i];
    let mut b = Vec::with_capacity(n);
    b.push(tp(1) - tp(0));
    for i in 1..n - 1 {
        b.push(0.5 * (tp(i + 1) - tp(i - 1)));
    }
    b.push(tp(n - 1) - tp(n - 2));
    Ok(b)
}

/// Applies [`filter_trace`] to every row.
pub fn ubp_filter(traces: &Traces) -> Result<Traces> {
    if traces.n_t < 3 {
        return Err(Error::invalid(format!(
            "back-projection filter needs 3 samples, got {}",
            traces.n_t
        )));
    }
    let mut data = Vec::with_capacity(traces.data.len());
    for m in 0..traces.n_det() {
        data.extend(filter_trace(traces.row(m))?);
    }
    Ok(Traces {
        data,
        ..traces.clone()
    })
}

#[inline]
fn sample(b: &[f32], u: f32, interp: Interp) -> f32 {
    let last = b.len() - 1;
    if !(u >= 0.0) || u > last as f32 {
        return 0.0;
    }
    let i = (u as usize).min(last);
    let f = u - i as f32;
    if i == last {
        return b[last];
    }
    match interp {
        Interp::Cubic if i >= 1 && i + 2 <= last => {
            let (p0, p1, p2, p3) = (b[i - 1], b[i], b[i + 1], b[i + 2]);
            let f2 = f * f;
            let f3 = f2 * f;
            0.5 * (2.0 * p1
                + (p2 - p0) * f
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * f2
                + (3.0 * (p1 - p2) + p3 - p0) * f3)
        }
        _ => b[i] + f * (b[i + 1] - b[i]),
    }
}

struct Channel {
    pos: Point3,
    weight: f64,
    filtered: Vec<f32>,
}

/// Voxel-driven back-projection of pressure traces onto `grid`.
///
/// Rows whose detector is inactive in `sensors` are skipped.
pub fn ubp_reconstruct(traces: &Traces, sensors: &SensorArray, grid: &GridSpec, cfg: &UbpConfig) -> Result<Volume> {
    grid.validate()?;
    if !(cfg.c0 > 0.0) {
        return Err(Error::invalid(format!("sound speed must be positive, got {}", cfg.c0)));
    }
    if traces.data.len() != traces.n_det() * traces.n_t {
        return Err(Error::invalid("trace buffer does not match its dimensions"));
    }
    let mut channels = Vec::new();
    for m in 0..traces.n_det() {
        let id = traces.detector_ids[m];
        if id >= sensors.len() {
            return Err(Error::invalid(format!("trace row {m} names unknown detector {id}")));
        }
        if !sensors.is_active(id) {
            continue;
        }
        let weight = if cfg.use_solid_angle_weights {
            sensors.cell_weights()[id]
        } else {
            1.0
        };
        let filtered = filter_trace(traces.row(m))?;
        channels.push(Channel {
            pos: sensors.position(id),
            weight,
            filtered: filtered.into_iter().map(|v| v as f32).collect(),
        });
    }
    if channels.is_empty() {
        return Err(Error::invalid("no trace belongs to an active detector"));
    }
    let weight_sum: f64 = channels.iter().map(|c| c.weight).sum();
    let inv_c_dt = 1.0 / (cfg.c0 * traces.dt);

    const BLOCK: usize = 64;
    let mut out = vec![0.0f32; grid.len()];
    let outside: u64 = out
        .par_chunks_mut(BLOCK)
        .enumerate()
        .map(|(blk, chunk)| {
            let base = blk * BLOCK;
            let positions: Vec<Point3> = (0..chunk.len()).map(|i| grid.position(base + i)).collect();
            let mut missed = 0u64;
            match cfg.accumulation {
                Accumulation::Kahan => {
                    let mut acc = vec![KahanSum::<f32>::new(); chunk.len()];
                    for ch in &channels {
                        for (p, a) in positions.iter().zip(acc.iter_mut()) {
                            let (v, hit) = contribution(ch, p, inv_c_dt, cfg);
                            missed += u64::from(!hit);
                            a.add(v);
                        }
                    }
                    for (o, a) in chunk.iter_mut().zip(&acc) {
                        *o = a.value();
                    }
                }
                Accumulation::Pairwise => {
                    let nd = channels.len();
                    let mut terms = vec![0.0f32; chunk.len() * nd];
                    for (m, ch) in channels.iter().enumerate() {
                        for (i, p) in positions.iter().enumerate() {
                            let (v, hit) = contribution(ch, p, inv_c_dt, cfg);
                            missed += u64::from(!hit);
                            terms[i * nd + m] = v;
                        }
                    }
                    for (o, t) in chunk.iter_mut().zip(terms.chunks(nd)) {
                        *o = pairwise_sum(t);
                    }
                }
            }
            missed
        })
        .sum();
    let total = (grid.len() * channels.len()) as u64;
    if 2 * outside > total {
        return Err(Error::WindowTooShort {
            outside,
            total,
            window_s: traces.n_t as f64 * traces.dt,
        });
    }
    let scale = (-1.0 / weight_sum) as f32;
    for v in out.iter_mut() {
        *v *= scale;
    }
    Volume::from_data(*grid, out)
}

#[inline]
fn contribution(ch: &Channel, p: &Point3, inv_c_dt: f64, cfg: &UbpConfig) -> (f32, bool) {
    let d = [p[0] - ch.pos[0], p[1] - ch.pos[1], p[2] - ch.pos[2]];
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let u = r * inv_c_dt;
    if u > (ch.filtered.len() - 1) as f64 {
        return (0.0, false);
    }
    let mut w = ch.weight;
    if cfg.spreading_weight {
        w /= r;
    }
    (w as f32 * sample(&ch.filtered, u as f32, cfg.interp), true)
}

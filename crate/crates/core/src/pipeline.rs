//! End-to-end driver: phantom, full-array simulation, noise, subsampling,
//! reconstruction and scoring. Every random draw is seeded from the
//! configuration, so a configuration determines the outputs bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{add_noise, forward_operator, noise_variance, pressure_traces, AcousticMedium, ReceiveChain, Spectra};
use crate::geometry::{apply_sampling_pattern, build_hemisphere_grid, SamplingPattern, SensorArray};
use crate::iterative::{fista_reconstruct, FistaResult, IterConfig, WarmStart};
use crate::metrics::MetricReport;
use crate::phantom::{grow_vessel_tree, make_initial_pressure, Aabb, GrowthParams};
use crate::ubp::{ubp_reconstruct, UbpConfig};
use crate::volume::{GridSpec, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recon {
    Ubp,
    Iter,
}

impl std::str::FromStr for Recon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ubp" => Ok(Recon::Ubp),
            "iter" | "fista" => Ok(Recon::Iter),
            other => Err(Error::invalid(format!("unknown reconstructor {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub leaves: usize,
    /// Fraction of the grid extent the tree may occupy, centered.
    pub bbox_fraction: f64,
    pub sigma_vox: f64,
    pub peak_pa: f64,
    pub growth: GrowthParams,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            leaves: 32,
            bbox_fraction: 0.8,
            sigma_vox: 1.0,
            peak_pa: 1.0,
            growth: GrowthParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub grid: [usize; 3],
    pub pitch_m: f64,
    pub n_theta: usize,
    pub n_phi: usize,
    pub radius_m: f64,
    pub fs_hz: f64,
    /// `None` leaves the spectra noiseless.
    pub snr_db: Option<f64>,
    pub pattern: SamplingPattern,
    pub recon: Recon,
    pub medium: AcousticMedium,
    pub phantom: PhantomConfig,
    pub ubp: UbpConfig,
    pub iter: IterConfig,
    /// Stop FISTA at the expected noise energy when the noise level is known.
    pub use_discrepancy: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            grid: [48, 48, 48],
            pitch_m: 5e-4,
            n_theta: 16,
            n_phi: 64,
            radius_m: 0.05,
            fs_hz: 20e6,
            snr_db: Some(20.0),
            pattern: SamplingPattern::full(),
            recon: Recon::Ubp,
            medium: AcousticMedium::default(),
            phantom: PhantomConfig::default(),
            ubp: UbpConfig::default(),
            iter: IterConfig {
                warm_start: WarmStart::Ubp,
                max_iters: 60,
                ..IterConfig::default()
            },
            use_discrepancy: true,
        }
    }
}

impl PipelineConfig {
    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::centered(self.grid, self.pitch_m)
    }

    /// Seed of the noise draw, kept apart from the phantom stream.
    pub fn noise_seed(&self) -> u64 {
        self.seed ^ 0x9e37_79b9_7f4a_7c15
    }
}

/// A phantom and its noisy spectra on the full array.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub phantom: Volume,
    pub sensors: SensorArray,
    pub chain: ReceiveChain,
    pub medium: AcousticMedium,
    pub spectra: Spectra,
    /// Per-entry complex noise variance; zero when noiseless.
    pub noise_variance: f64,
}

pub fn make_phantom(cfg: &PhantomConfig, grid: &GridSpec, seed: u64) -> Result<Volume> {
    let bbox = Aabb::central(grid, cfg.bbox_fraction)?;
    let tree = grow_vessel_tree(seed, cfg.leaves, &bbox, &cfg.growth)?;
    make_initial_pressure(&tree, grid, cfg.peak_pa, cfg.sigma_vox)
}

/// Simulates spectra of `phantom` on the full array described by `cfg`.
pub fn simulate_phantom(cfg: &PipelineConfig, phantom: Volume) -> Result<Simulation> {
    let sensors = build_hemisphere_grid(cfg.n_theta, cfg.n_phi, cfg.radius_m)?;
    let chain = ReceiveChain::for_setup(&phantom.grid, &sensors, &cfg.medium, cfg.fs_hz)?;
    let clean = forward_operator(&phantom, &sensors, &cfg.medium, &chain)?;
    let (spectra, variance) = match cfg.snr_db {
        Some(snr) => {
            let v = noise_variance(clean.energy(), clean.values.len(), snr);
            (add_noise(&clean, snr, cfg.noise_seed())?, v)
        }
        None => (clean, 0.0),
    };
    Ok(Simulation {
        phantom,
        sensors,
        chain,
        medium: cfg.medium,
        spectra,
        noise_variance: variance,
    })
}

pub fn simulate(cfg: &PipelineConfig) -> Result<Simulation> {
    let grid = cfg.grid_spec()?;
    let phantom = make_phantom(&cfg.phantom, &grid, cfg.seed)?;
    simulate_phantom(cfg, phantom)
}

/// Rows of `psi` whose detectors are active in `sensors`, in order.
pub fn restrict_to_active(psi: &Spectra, sensors: &SensorArray) -> Result<Spectra> {
    psi.validate()?;
    let nf = psi.n_freq();
    let mut out = Spectra::zeros(Vec::new(), psi.freq_hz.clone());
    for (m, &id) in psi.detector_ids.iter().enumerate() {
        if id >= sensors.len() {
            return Err(Error::invalid(format!("detector id {id} outside the {}-element array", sensors.len())));
        }
        if sensors.is_active(id) {
            out.detector_ids.push(id);
            out.values.extend_from_slice(&psi.values[m * nf..(m + 1) * nf]);
        }
    }
    if out.detector_ids.is_empty() {
        return Err(Error::invalid("no measured detector survives the sampling pattern"));
    }
    Ok(out)
}

/// Subsampled measurements ready for reconstruction.
#[derive(Debug, Clone)]
pub struct Acquisition {
    pub sensors: SensorArray,
    pub spectra: Spectra,
}

pub fn subsample(sim: &Simulation, pattern: &SamplingPattern) -> Result<Acquisition> {
    let sensors = apply_sampling_pattern(&sim.sensors, pattern)?;
    let spectra = restrict_to_active(&sim.spectra, &sensors)?;
    Ok(Acquisition { sensors, spectra })
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub volume: Volume,
    pub fista: Option<FistaResult>,
}

/// Reconstructs one acquisition. The simulated noise level sets the
/// discrepancy target when `cfg.use_discrepancy` is on and none is given.
pub fn reconstruct(
    acq: &Acquisition,
    sim: &Simulation,
    grid: &GridSpec,
    recon: Recon,
    cfg: &PipelineConfig,
) -> Result<Reconstruction> {
    match recon {
        Recon::Ubp => {
            let traces = pressure_traces(&acq.spectra, &sim.chain, &sim.medium)?;
            let ubp = UbpConfig {
                c0: sim.medium.c0,
                ..cfg.ubp
            };
            let volume = ubp_reconstruct(&traces, &acq.sensors, grid, &ubp)?;
            Ok(Reconstruction { volume, fista: None })
        }
        Recon::Iter => {
            let mut iter = cfg.iter.clone();
            iter.ubp.c0 = sim.medium.c0;
            if cfg.use_discrepancy && iter.discrepancy_target.is_none() && sim.noise_variance > 0.0 {
                iter.discrepancy_target = Some(sim.noise_variance * acq.spectra.values.len() as f64);
            }
            let (volume, result) = fista_reconstruct(&acq.spectra, &acq.sensors, &sim.medium, &sim.chain, grid, &iter)?;
            Ok(Reconstruction {
                volume,
                fista: Some(result),
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub simulation: Simulation,
    pub acquisition: Acquisition,
    pub reconstruction: Reconstruction,
    pub report: MetricReport,
}

/// Phantom, simulation, subsampling, reconstruction and metrics for one configuration.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let grid = cfg.grid_spec()?;
    let simulation = simulate(cfg)?;
    let acquisition = subsample(&simulation, &cfg.pattern)?;
    let reconstruction = reconstruct(&acquisition, &simulation, &grid, cfg.recon, cfg)?;
    let report = MetricReport::compute(&simulation.phantom, &reconstruction.volume)?;
    Ok(PipelineOutput {
        simulation,
        acquisition,
        reconstruction,
        report,
    })
}

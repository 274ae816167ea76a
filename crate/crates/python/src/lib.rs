//! Python bindings. Volumes cross the boundary as little-endian `float32`
//! bytes with x varying fastest, ready for
//! `numpy.frombuffer(...).reshape(shape, order="F")`.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use pact_core::forward::{add_noise, forward_operator, noise_variance, pressure_traces};
use pact_core::geometry::{apply_sampling_pattern, build_hemisphere_grid};
use pact_core::iterative::{fista_reconstruct, IterConfig, WarmStart};
use pact_core::pipeline::{make_phantom, restrict_to_active, run_pipeline, PhantomConfig, PipelineConfig};
use pact_core::ubp::{ubp_reconstruct, UbpConfig};
use pact_core::{io, AcousticMedium, Error, GridSpec, MetricReport, ReceiveChain, SamplingPattern};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn grid(shape: [usize; 3], pitch: f64) -> PyResult<GridSpec> {
    GridSpec::centered(shape, pitch).map_err(to_py)
}

#[pyclass(name = "Volume", module = "pact", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyVolume(pact_core::Volume);

#[pymethods]
impl PyVolume {
    /// Builds a volume centred on the origin from `float32` bytes, x fastest.
    #[staticmethod]
    fn from_bytes(shape: [usize; 3], pitch: f64, data: &[u8]) -> PyResult<Self> {
        if data.len() % 4 != 0 {
            return Err(PyValueError::new_err(format!("{} bytes is not a whole number of float32 values", data.len())));
        }
        let values = data.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        pact_core::Volume::from_data(grid(shape, pitch)?, values).map(PyVolume).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        io::read_volume(&path).map(PyVolume).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_volume(&path, &self.0).map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> [usize; 3] {
        self.0.shape()
    }

    #[getter]
    fn pitch(&self) -> f64 {
        self.0.grid.pitch_m
    }

    #[getter]
    fn origin(&self) -> [f64; 3] {
        self.0.grid.origin_m
    }

    fn tobytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        let bytes: Vec<u8> = self.0.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        PyBytes::new(py, &bytes)
    }

    fn max(&self) -> f32 {
        self.0.max()
    }

    fn __len__(&self) -> usize {
        self.0.data.len()
    }

    fn __repr__(&self) -> String {
        format!("Volume(shape={:?}, pitch={})", self.0.shape(), self.0.grid.pitch_m)
    }
}

#[pyclass(name = "Sensors", module = "pact", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySensors(pact_core::SensorArray);

#[pymethods]
impl PySensors {
    #[staticmethod]
    #[pyo3(signature = (n_theta=16, n_phi=64, radius=0.05))]
    fn hemisphere(n_theta: usize, n_phi: usize, radius: f64) -> PyResult<Self> {
        build_hemisphere_grid(n_theta, n_phi, radius).map(PySensors).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        io::read_geometry(&path).map(PySensors).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_geometry(&path, &self.0).map_err(to_py)
    }

    /// Applies a pattern such as `"uniform:6"` or `"limaz:90"`.
    fn subsample(&self, pattern: &str) -> PyResult<Self> {
        let pattern: SamplingPattern = pattern.parse().map_err(to_py)?;
        apply_sampling_pattern(&self.0, &pattern).map(PySensors).map_err(to_py)
    }

    #[getter]
    fn active_count(&self) -> usize {
        self.0.active_count()
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.0.radius_m()
    }

    fn active_indices(&self) -> Vec<usize> {
        self.0.active_indices()
    }

    fn positions(&self) -> Vec<[f64; 3]> {
        self.0.positions().to_vec()
    }

    fn cell_weights(&self) -> Vec<f64> {
        self.0.cell_weights().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Sensors({}x{}, radius={}, active={})",
            self.0.n_theta(),
            self.0.n_phi(),
            self.0.radius_m(),
            self.0.active_count()
        )
    }
}

/// Measured spectra together with the receive chain and medium they assume.
#[pyclass(name = "Spectra", module = "pact", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySpectra {
    spectra: pact_core::Spectra,
    chain: ReceiveChain,
    medium: AcousticMedium,
    #[pyo3(get)]
    noise_variance: f64,
}

#[pymethods]
impl PySpectra {
    #[getter]
    fn n_detectors(&self) -> usize {
        self.spectra.detector_ids.len()
    }

    #[getter]
    fn n_freq(&self) -> usize {
        self.spectra.n_freq()
    }

    fn energy(&self) -> f64 {
        self.spectra.energy()
    }

    fn detector_ids(&self) -> Vec<usize> {
        self.spectra.detector_ids.clone()
    }

    fn freq_hz(&self) -> Vec<f64> {
        self.spectra.freq_hz.clone()
    }

    fn __repr__(&self) -> String {
        format!("Spectra({} detectors x {} bins)", self.n_detectors(), self.n_freq())
    }
}

#[pyclass(name = "Report", module = "pact", frozen, skip_from_py_object, get_all)]
#[derive(Clone)]
struct PyReport {
    cosine: f64,
    psnr_db: f64,
    nmse: f64,
}

#[pymethods]
impl PyReport {
    fn __repr__(&self) -> String {
        format!("Report(cosine={:.4}, psnr_db={:.2}, nmse={:.4e})", self.cosine, self.psnr_db, self.nmse)
    }
}

impl From<MetricReport> for PyReport {
    fn from(r: MetricReport) -> Self {
        PyReport {
            cosine: r.cosine,
            psnr_db: r.psnr_db,
            nmse: r.nmse,
        }
    }
}

#[pyfunction]
#[pyo3(signature = (seed, shape=[48, 48, 48], pitch=5e-4, leaves=32, sigma_vox=1.0, peak=1.0))]
fn phantom(
    py: Python<'_>,
    seed: u64,
    shape: [usize; 3],
    pitch: f64,
    leaves: usize,
    sigma_vox: f64,
    peak: f64,
) -> PyResult<PyVolume> {
    let g = grid(shape, pitch)?;
    let cfg = PhantomConfig {
        leaves,
        sigma_vox,
        peak_pa: peak,
        ..PhantomConfig::default()
    };
    py.detach(|| make_phantom(&cfg, &g, seed)).map(PyVolume).map_err(to_py)
}

/// Simulates spectra of `volume` at the active elements, noiseless unless `snr_db` is given.
#[pyfunction]
#[pyo3(signature = (volume, sensors, fs=20e6, snr_db=None, seed=0))]
fn forward(
    py: Python<'_>,
    volume: &PyVolume,
    sensors: &PySensors,
    fs: f64,
    snr_db: Option<f64>,
    seed: u64,
) -> PyResult<PySpectra> {
    py.detach(|| {
        let medium = AcousticMedium::default();
        let chain = ReceiveChain::for_setup(&volume.0.grid, &sensors.0, &medium, fs)?;
        let clean = forward_operator(&volume.0, &sensors.0, &medium, &chain)?;
        let (spectra, noise) = match snr_db {
            Some(snr) => {
                let v = noise_variance(clean.energy(), clean.values.len(), snr);
                (add_noise(&clean, snr, seed)?, v)
            }
            None => (clean, 0.0),
        };
        Ok(PySpectra {
            spectra,
            chain,
            medium,
            noise_variance: noise,
        })
    })
    .map_err(to_py)
}

/// Universal back-projection from the detectors active in both `spectra` and `sensors`.
#[pyfunction]
#[pyo3(signature = (spectra, sensors, shape=[48, 48, 48], pitch=5e-4))]
fn ubp(py: Python<'_>, spectra: &PySpectra, sensors: &PySensors, shape: [usize; 3], pitch: f64) -> PyResult<PyVolume> {
    let g = grid(shape, pitch)?;
    py.detach(|| {
        let psi = restrict_to_active(&spectra.spectra, &sensors.0)?;
        let traces = pressure_traces(&psi, &spectra.chain, &spectra.medium)?;
        let cfg = UbpConfig {
            c0: spectra.medium.c0,
            ..UbpConfig::default()
        };
        ubp_reconstruct(&traces, &sensors.0, &g, &cfg)
    })
    .map(PyVolume)
    .map_err(to_py)
}

/// Huber-TV regularised FISTA. Returns the volume and the objective trace.
#[pyfunction]
#[pyo3(signature = (spectra, sensors, shape=[48, 48, 48], pitch=5e-4, iters=60, lambda_tv=None, warm_ubp=true))]
fn fista(
    py: Python<'_>,
    spectra: &PySpectra,
    sensors: &PySensors,
    shape: [usize; 3],
    pitch: f64,
    iters: usize,
    lambda_tv: Option<f64>,
    warm_ubp: bool,
) -> PyResult<(PyVolume, Vec<f64>)> {
    let g = grid(shape, pitch)?;
    py.detach(|| {
        let psi = restrict_to_active(&spectra.spectra, &sensors.0)?;
        let mut cfg = IterConfig {
            lambda_tv,
            max_iters: iters,
            warm_start: if warm_ubp { WarmStart::Ubp } else { WarmStart::Zero },
            ..IterConfig::default()
        };
        cfg.ubp.c0 = spectra.medium.c0;
        if spectra.noise_variance > 0.0 {
            cfg.discrepancy_target = Some(spectra.noise_variance * psi.values.len() as f64);
        }
        let (vol, result) = fista_reconstruct(&psi, &sensors.0, &spectra.medium, &spectra.chain, &g, &cfg)?;
        Ok((PyVolume(vol), result.objective))
    })
    .map_err(to_py)
}

#[pyfunction]
fn metrics(reference: &PyVolume, test: &PyVolume) -> PyResult<PyReport> {
    MetricReport::compute(&reference.0, &test.0).map(PyReport::from).map_err(to_py)
}

/// Runs the end-to-end pipeline on a JSON configuration, defaults when omitted.
/// Returns the phantom, the reconstruction and their metrics.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn pipeline(py: Python<'_>, config: Option<&str>) -> PyResult<(PyVolume, PyVolume, PyReport)> {
    let cfg: PipelineConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("bad configuration: {e}")))?,
        None => PipelineConfig::default(),
    };
    let out = py.detach(|| run_pipeline(&cfg)).map_err(to_py)?;
    Ok((
        PyVolume(out.simulation.phantom),
        PyVolume(out.reconstruction.volume),
        out.report.into(),
    ))
}

#[pymodule]
fn pact(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", pact_core::VERSION)?;
    m.add_class::<PyVolume>()?;
    m.add_class::<PySensors>()?;
    m.add_class::<PySpectra>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(phantom, m)?)?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(ubp, m)?)?;
    m.add_function(wrap_pyfunction!(fista, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(pipeline, m)?)?;
    Ok(())
}

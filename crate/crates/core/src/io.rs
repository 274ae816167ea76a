//! File formats.
//!
//! Binary payloads are raw little-endian arrays with a JSON sidecar next to
//! them at `<file>.json`. The sidecar carries a `kind` tag, the shapes and
//! enough of the acquisition setup to use the payload on its own.
//! Geometry, metric reports and run metadata are plain JSON.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{AcousticMedium, ReceiveChain, Spectra};
use crate::geometry::{GeometryRecord, Point3, SensorArray};
use crate::metrics::MetricReport;
use crate::neuralop::{Activation, DiscoLayer, FnoLayer, FnoModes, KernelBasis};
use crate::volume::{GridSpec, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub pitch_m: f64,
    pub origin_m: Point3,
    pub dtype: String,
    pub order: String,
}

impl VolumeHeader {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new([self.nx, self.ny, self.nz], self.pitch_m, self.origin_m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectraHeader {
    pub n_det: usize,
    pub n_freq: usize,
    pub fs: f64,
    #[serde(rename = "T")]
    pub record_s: f64,
    pub c0: f64,
    /// Geometry file the detector ids refer to.
    #[serde(default)]
    pub geometry: Option<String>,
    pub detector_ids: Vec<usize>,
    pub freq_hz: Vec<f64>,
    pub medium: AcousticMedium,
    pub chain: ReceiveChain,
    /// Noise variance per complex entry, when noise was added.
    #[serde(default)]
    pub noise_variance: Option<f64>,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoWeightsHeader {
    pub basis: KernelBasis,
    #[serde(rename = "L")]
    pub n_basis: usize,
    pub r: f64,
    pub c_in: usize,
    pub c_out: usize,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnoWeightsHeader {
    pub channels: usize,
    pub shape: [usize; 3],
    pub modes: FnoModes,
    pub activation: Activation,
    /// Payload order: spectral weights as interleaved complex pairs, then the
    /// pointwise matrix, then the bias.
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Header {
    Volume(VolumeHeader),
    Spectra(SpectraHeader),
    DiscoWeights(DiscoWeightsHeader),
    FnoWeights(FnoWeightsHeader),
}

impl Header {
    /// Payload size in bytes implied by the header.
    pub fn payload_bytes(&self) -> usize {
        match self {
            Header::Volume(h) => 4 * h.nx * h.ny * h.nz,
            Header::Spectra(h) => 8 * h.n_det * h.n_freq,
            Header::DiscoWeights(h) => 8 * h.c_in * h.c_out * h.n_basis,
            Header::FnoWeights(h) => {
                8 * (2 * h.modes.weight_len(h.channels) + h.channels * h.channels + h.channels)
            }
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Header::Volume(_) => "volume",
            Header::Spectra(_) => "spectra",
            Header::DiscoWeights(_) => "disco_weights",
            Header::FnoWeights(_) => "fno_weights",
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Header {
        path: path.to_owned(),
        source: e,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Header {
        path: path.to_owned(),
        source: e,
    })
}

pub fn read_header(path: &Path) -> Result<Header> {
    read_json(&sidecar_path(path))
}

fn write_with_header(path: &Path, header: &Header, payload: &[u8]) -> Result<()> {
    debug_assert_eq!(payload.len(), header.payload_bytes());
    write_bytes(path, payload)?;
    write_json(&sidecar_path(path), header)
}

/// Header and payload, with the payload size checked against the header.
fn read_with_header(path: &Path) -> Result<(Header, Vec<u8>)> {
    let header = read_header(path)?;
    let payload = read_bytes(path)?;
    if payload.len() != header.payload_bytes() {
        return Err(Error::Format {
            path: path.to_owned(),
            detail: format!(
                "payload holds {} bytes, {} header expects {}",
                payload.len(),
                header.kind(),
                header.payload_bytes()
            ),
        });
    }
    Ok((header, payload))
}

fn wrong_kind(path: &Path, expected: &str, found: &Header) -> Error {
    Error::Format {
        path: path.to_owned(),
        detail: format!("expected a {expected} file, header says {}", found.kind()),
    }
}

fn f32_bytes(values: impl Iterator<Item = f32>) -> Vec<u8> {
    values.flat_map(f32::to_le_bytes).collect()
}

fn f64_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(f64::to_le_bytes).collect()
}

fn le_f32(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

fn le_f64(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
}

pub fn volume_header(grid: &GridSpec) -> VolumeHeader {
    VolumeHeader {
        nx: grid.shape[0],
        ny: grid.shape[1],
        nz: grid.shape[2],
        pitch_m: grid.pitch_m,
        origin_m: grid.origin_m,
        dtype: "f32le".into(),
        order: "x-fastest".into(),
    }
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let header = Header::Volume(volume_header(&vol.grid));
    write_with_header(path, &header, &f32_bytes(vol.data.iter().copied()))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let (header, payload) = read_with_header(path)?;
    let Header::Volume(h) = &header else {
        return Err(wrong_kind(path, "volume", &header));
    };
    if h.dtype != "f32le" || h.order != "x-fastest" {
        return Err(Error::Format {
            path: path.to_owned(),
            detail: format!("unsupported layout {} / {}", h.dtype, h.order),
        });
    }
    Volume::from_data(h.grid()?, le_f32(&payload))
}

/// Acquisition context stored with a spectra file.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectraContext {
    pub medium: AcousticMedium,
    pub chain: ReceiveChain,
    pub geometry: Option<String>,
    pub noise_variance: Option<f64>,
}

/// Spectra as interleaved little-endian `complex64` (two `f32` per entry),
/// one detector row after another.
pub fn write_spectra(path: &Path, psi: &Spectra, ctx: &SpectraContext) -> Result<()> {
    psi.validate()?;
    let header = Header::Spectra(SpectraHeader {
        n_det: psi.n_det(),
        n_freq: psi.n_freq(),
        fs: ctx.chain.fs,
        record_s: ctx.chain.record_s(),
        c0: ctx.medium.c0,
        geometry: ctx.geometry.clone(),
        detector_ids: psi.detector_ids.clone(),
        freq_hz: psi.freq_hz.clone(),
        medium: ctx.medium,
        chain: ctx.chain.clone(),
        noise_variance: ctx.noise_variance,
        dtype: "c64le".into(),
    });
    let payload = f32_bytes(psi.values.iter().flat_map(|z| [z.re as f32, z.im as f32]));
    write_with_header(path, &header, &payload)
}

pub fn read_spectra(path: &Path) -> Result<(Spectra, SpectraContext)> {
    let (header, payload) = read_with_header(path)?;
    let Header::Spectra(h) = header else {
        return Err(wrong_kind(path, "spectra", &header));
    };
    if h.detector_ids.len() != h.n_det || h.freq_hz.len() != h.n_freq || h.chain.n_freq != h.n_freq {
        return Err(Error::Format {
            path: path.to_owned(),
            detail: "detector ids, frequencies and receive chain disagree with n_det x n_freq".into(),
        });
    }
    let values = le_f32(&payload)
        .chunks_exact(2)
        .map(|c| Complex64::new(c[0] as f64, c[1] as f64))
        .collect();
    let psi = Spectra {
        values,
        freq_hz: h.freq_hz,
        detector_ids: h.detector_ids,
    };
    psi.validate()?;
    h.chain.validate()?;
    h.medium.validate()?;
    let ctx = SpectraContext {
        medium: h.medium,
        chain: h.chain,
        geometry: h.geometry,
        noise_variance: h.noise_variance,
    };
    Ok((psi, ctx))
}

pub fn write_geometry(path: &Path, sensors: &SensorArray) -> Result<()> {
    write_json(path, &sensors.to_record())
}

pub fn read_geometry(path: &Path) -> Result<SensorArray> {
    let record: GeometryRecord = read_json(path)?;
    SensorArray::from_record(&record).map_err(|e| Error::Format {
        path: path.to_owned(),
        detail: e.to_string(),
    })
}

pub fn write_disco_weights(path: &Path, layer: &DiscoLayer) -> Result<()> {
    let header = Header::DiscoWeights(DiscoWeightsHeader {
        basis: layer.basis.clone(),
        n_basis: layer.basis.len(),
        r: layer.basis.radius,
        c_in: layer.c_in,
        c_out: layer.c_out,
        dtype: "f64le".into(),
    });
    write_with_header(path, &header, &f64_bytes(layer.theta.iter().copied()))
}

/// Header and `theta` coefficients `[C_out x C_in x L]` of a DISCO layer.
pub fn read_disco_weights(path: &Path) -> Result<(DiscoWeightsHeader, Vec<f64>)> {
    let (header, payload) = read_with_header(path)?;
    let Header::DiscoWeights(h) = header else {
        return Err(wrong_kind(path, "disco_weights", &header));
    };
    if h.basis.len() != h.n_basis || h.basis.radius != h.r {
        return Err(Error::Format {
            path: path.to_owned(),
            detail: "basis description disagrees with L or r".into(),
        });
    }
    Ok((h, le_f64(&payload)))
}

pub fn write_fno_weights(path: &Path, layer: &FnoLayer) -> Result<()> {
    let header = Header::FnoWeights(FnoWeightsHeader {
        channels: layer.channels,
        shape: layer.shape,
        modes: layer.modes,
        activation: layer.activation,
        dtype: "f64le".into(),
    });
    let values = layer
        .spectral
        .iter()
        .flat_map(|z| [z.re, z.im])
        .chain(layer.pointwise.iter().copied())
        .chain(layer.bias.iter().copied());
    write_with_header(path, &header, &f64_bytes(values))
}

pub fn read_fno_weights(path: &Path) -> Result<FnoLayer> {
    let (header, payload) = read_with_header(path)?;
    let Header::FnoWeights(h) = header else {
        return Err(wrong_kind(path, "fno_weights", &header));
    };
    let values = le_f64(&payload);
    let n_spec = h.modes.weight_len(h.channels);
    let c = h.channels;
    let spectral = values[..2 * n_spec]
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect();
    let pointwise = values[2 * n_spec..2 * n_spec + c * c].to_vec();
    let bias = values[2 * n_spec + c * c..].to_vec();
    FnoLayer::new(c, h.shape, h.modes, spectral, pointwise, bias, h.activation).map_err(|e| Error::Format {
        path: path.to_owned(),
        detail: e.to_string(),
    })
}

/// One objective value per line after a header row.
pub fn write_objective_csv(path: &Path, objective: &[f64]) -> Result<()> {
    let mut text = String::from("iteration,objective\n");
    for (i, v) in objective.iter().enumerate() {
        text.push_str(&format!("{i},{v:e}\n"));
    }
    write_bytes(path, text.as_bytes())
}

pub fn read_objective_csv(path: &Path) -> Result<Vec<f64>> {
    let text = String::from_utf8(read_bytes(path)?).map_err(|e| Error::Format {
        path: path.to_owned(),
        detail: e.to_string(),
    })?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Format {
                    path: path.to_owned(),
                    detail: format!("bad objective row {l:?}"),
                })
        })
        .collect()
}

/// 8-bit binary graymap of an `nx x ny` image (x-fastest), scaled so the
/// image maximum maps to 255 and values at or below zero to 0.
pub fn write_pgm(path: &Path, image: &[f32], nx: usize, ny: usize) -> Result<()> {
    if image.len() != nx * ny {
        return Err(Error::invalid(format!("image has {} pixels for {nx} x {ny}", image.len())));
    }
    let peak = image.iter().copied().fold(0.0f32, f32::max);
    let mut bytes = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    // rows top to bottom with y increasing upward
    for iy in (0..ny).rev() {
        for ix in 0..nx {
            let v = image[iy * nx + ix];
            let g = if peak > 0.0 { (v.max(0.0) / peak * 255.0).round() } else { 0.0 };
            bytes.push(g as u8);
        }
    }
    write_bytes(path, &bytes)
}

pub fn write_mip(path: &Path, vol: &Volume) -> Result<()> {
    let [nx, ny, _] = vol.shape();
    write_pgm(path, &vol.mip_z(), nx, ny)
}

/// Record written next to the outputs of every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub wall_time_s: f64,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl RunMetadata {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_report(path: &Path, report: &MetricReport) -> Result<()> {
    write_json(path, report)
}

pub fn read_report(path: &Path) -> Result<MetricReport> {
    read_json(path)
}

/// Checks a file the toolkit wrote and describes it in one line.
pub fn validate(path: &Path) -> Result<String> {
    if sidecar_path(path).exists() {
        let header = read_header(path)?;
        return Ok(match header {
            Header::Volume(_) => {
                let v = read_volume(path)?;
                if v.data.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Format {
                        path: path.to_owned(),
                        detail: "volume holds non-finite values".into(),
                    });
                }
                format!("volume {:?} pitch {} m", v.shape(), v.grid.pitch_m)
            }
            Header::Spectra(_) => {
                let (psi, _) = read_spectra(path)?;
                format!("spectra {} detectors x {} bins", psi.n_det(), psi.n_freq())
            }
            Header::DiscoWeights(_) => {
                let (h, theta) = read_disco_weights(path)?;
                format!("disco weights {:?} L={} C_in={} C_out={} ({} values)", h.basis.kind, h.n_basis, h.c_in, h.c_out, theta.len())
            }
            Header::FnoWeights(_) => {
                let l = read_fno_weights(path)?;
                format!("fno weights C={} shape {:?} modes {:?}", l.channels, l.shape, l.modes)
            }
        });
    }
    let name = path.to_string_lossy();
    if name.ends_with(".csv") {
        let obj = read_objective_csv(path)?;
        return Ok(format!("objective trace with {} iterations", obj.len()));
    }
    if name.ends_with(".pgm") {
        let bytes = read_bytes(path)?;
        if !bytes.starts_with(b"P5") {
            return Err(Error::Format {
                path: path.to_owned(),
                detail: "not a binary graymap".into(),
            });
        }
        return Ok("graymap".into());
    }
    let value: serde_json::Value = read_json(path)?;
    if value.get("elements").is_some() {
        let s = read_geometry(path)?;
        Ok(format!("geometry {}x{} ({} active)", s.n_theta(), s.n_phi(), s.active_count()))
    } else if value.get("cosine").is_some() {
        let r = read_report(path)?;
        Ok(format!("metrics cosine {} psnr {} dB nmse {}", r.cosine, r.psnr_db, r.nmse))
    } else if value.get("command").is_some() {
        let m: RunMetadata = read_json(path)?;
        Ok(format!("run metadata for {} ({} outputs)", m.command, m.outputs.len()))
    } else {
        Err(Error::Format {
            path: path.to_owned(),
            detail: "unrecognized file".into(),
        })
    }
}

/// Parses `NXxNYxNZ`.
pub fn parse_shape(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("grid must look like 64x64x64, got {s:?}")))?;
    match parts[..] {
        [nx, ny, nz] if nx > 0 && ny > 0 && nz > 0 => Ok([nx, ny, nz]),
        _ => Err(Error::invalid(format!("grid must look like 64x64x64, got {s:?}"))),
    }
}

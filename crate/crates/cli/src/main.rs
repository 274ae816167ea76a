//! `pact`: simulation, reconstruction and scoring from the command line.
//!
//! Configuration is resolved as defaults, then the `--config` file, then
//! flags. Every command that writes files also writes a run metadata record
//! next to them. Exit status is 0 on success, 1 on I/O or data errors and 2 on
//! usage errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pact_core::checks::{disco_checks, fno_checks, CheckOutcome, DiscoCheckConfig};
use pact_core::forward::{add_noise, forward_operator, noise_variance, pressure_traces};
use pact_core::geometry::{apply_sampling_pattern, build_hemisphere_grid};
use pact_core::io::{self, RunMetadata, SpectraContext};
use pact_core::iterative::{fista_reconstruct, WarmStart};
use pact_core::neuralop::{BasisKind, FnoModes, KernelBasis};
use pact_core::pipeline::{self, PipelineConfig, Recon};
use pact_core::ubp::{ubp_reconstruct, Interp};
use pact_core::{Error, GridSpec, MetricReport, ReceiveChain, SamplingPattern, SensorArray, Spectra, Volume};

#[derive(Parser)]
#[command(name = "pact", version, about = "Photoacoustic tomography simulation and reconstruction")]
struct Cli {
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON pipeline configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the run metadata record.
    #[arg(long, global = true)]
    meta: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grow a vessel tree and write its initial-pressure volume.
    Phantom(PhantomArgs),
    /// Write a hemispherical detector grid.
    Geometry(GeometryArgs),
    /// Simulate detector spectra of a volume.
    Forward(ForwardArgs),
    /// Keep the spectra of detectors that survive a sampling pattern.
    Subsample(SubsampleArgs),
    /// Universal back-projection.
    Ubp(UbpArgs),
    /// TV-regularized FISTA reconstruction.
    Iter(IterArgs),
    /// Compare a volume against a reference.
    Metrics(MetricsArgs),
    /// Run the spherical convolution invariants.
    DiscoCheck(DiscoCheckArgs),
    /// Run the Fourier layer invariants.
    FnoCheck(FnoCheckArgs),
    /// Phantom, simulation, subsampling, reconstruction and scoring in one run.
    Pipeline(PipelineArgs),
    /// Check files written by this tool.
    Validate(ValidateArgs),
}

fn parse_grid(s: &str) -> Result<[usize; 3], String> {
    io::parse_shape(s).map_err(|e| e.to_string())
}

fn parse_pattern(s: &str) -> Result<SamplingPattern, String> {
    SamplingPattern::from_str(s).map_err(|e| e.to_string())
}

fn parse_basis(s: &str) -> Result<BasisKind, String> {
    BasisKind::from_str(s).map_err(|e| e.to_string())
}

fn parse_interp(s: &str) -> Result<Interp, String> {
    Interp::from_str(s).map_err(|e| e.to_string())
}

fn parse_warm(s: &str) -> Result<WarmStart, String> {
    WarmStart::from_str(s).map_err(|e| e.to_string())
}

fn parse_recon(s: &str) -> Result<Recon, String> {
    Recon::from_str(s).map_err(|e| e.to_string())
}

#[derive(Args, Serialize)]
struct PhantomArgs {
    #[arg(long)]
    leaves: Option<usize>,
    #[arg(long, value_parser = parse_grid)]
    grid: Option<[usize; 3]>,
    #[arg(long)]
    pitch: Option<f64>,
    /// Smoothing width in voxels.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    peak: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mip: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct GeometryArgs {
    #[arg(long)]
    n_theta: Option<usize>,
    #[arg(long)]
    n_phi: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, value_parser = parse_pattern)]
    pattern: Option<SamplingPattern>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ForwardArgs {
    #[arg(long)]
    vol: PathBuf,
    #[arg(long)]
    geom: PathBuf,
    /// Signal-to-noise ratio in dB.
    #[arg(long, conflicts_with = "noiseless")]
    snr: Option<f64>,
    #[arg(long)]
    noiseless: bool,
    /// Sampling rate in Hz.
    #[arg(long)]
    fs: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SubsampleArgs {
    #[arg(long)]
    rf: PathBuf,
    #[arg(long)]
    geom: PathBuf,
    #[arg(long, value_parser = parse_pattern)]
    pattern: SamplingPattern,
    #[arg(long)]
    out: PathBuf,
    /// Also write the masked geometry.
    #[arg(long)]
    geom_out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct UbpArgs {
    #[arg(long)]
    rf: PathBuf,
    #[arg(long)]
    geom: PathBuf,
    #[arg(long, value_parser = parse_grid)]
    grid: Option<[usize; 3]>,
    #[arg(long)]
    pitch: Option<f64>,
    #[arg(long, value_parser = parse_interp)]
    interp: Option<Interp>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mip: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct IterArgs {
    #[arg(long)]
    rf: PathBuf,
    #[arg(long)]
    geom: PathBuf,
    #[arg(long, value_parser = parse_grid)]
    grid: Option<[usize; 3]>,
    #[arg(long)]
    pitch: Option<f64>,
    /// TV weight; chosen from the data when absent.
    #[arg(long)]
    lambda: Option<f64>,
    /// Tikhonov weight.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, value_parser = parse_warm)]
    warm: Option<WarmStart>,
    /// Run all iterations instead of stopping at the noise level.
    #[arg(long)]
    no_discrepancy: bool,
    #[arg(long)]
    out: PathBuf,
    /// Objective trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    mip: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Serialize)]
struct MetricsArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct DiscoCheckArgs {
    /// Geometry file; a full grid from the configuration when absent.
    #[arg(long)]
    geom: Option<PathBuf>,
    #[arg(long, value_parser = parse_basis, default_value = "zernike")]
    basis: BasisKind,
    /// Number of basis functions.
    #[arg(long = "L", default_value_t = 4)]
    size: usize,
    /// Kernel radius in radians.
    #[arg(long, default_value_t = 0.314)]
    r: f64,
    #[arg(long, default_value_t = 0.05)]
    cap_tol: f64,
}

#[derive(Args, Serialize)]
struct FnoCheckArgs {
    #[arg(long, default_value_t = 16)]
    n_theta: usize,
    #[arg(long, default_value_t = 32)]
    n_phi: usize,
    #[arg(long, default_value_t = 8)]
    n_freq: usize,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 4)]
    modes_theta: usize,
    #[arg(long, default_value_t = 6)]
    modes_phi: usize,
    #[arg(long, default_value_t = 6)]
    modes_k: usize,
}

#[derive(Args, Serialize)]
struct PipelineArgs {
    #[arg(long, value_parser = parse_grid)]
    grid: Option<[usize; 3]>,
    #[arg(long)]
    pitch: Option<f64>,
    #[arg(long, value_parser = parse_pattern)]
    pattern: Option<SamplingPattern>,
    #[arg(long, value_parser = parse_recon)]
    recon: Option<Recon>,
    #[arg(long, conflicts_with = "noiseless")]
    snr: Option<f64>,
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    n_theta: Option<usize>,
    #[arg(long)]
    n_phi: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    mip: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ValidateArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
    Checks(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

struct Run {
    cfg: PipelineConfig,
    meta: Option<PathBuf>,
    start: Instant,
}

impl Run {
    /// Writes the metadata record next to the first output, or at `--meta`.
    fn finish(&self, command: &str, args: &impl Serialize, outputs: &[&Path]) -> Outcome<()> {
        let path = match (&self.meta, outputs.first()) {
            (Some(p), _) => p.clone(),
            (None, Some(first)) => {
                let mut s = first.as_os_str().to_owned();
                s.push(".meta.json");
                PathBuf::from(s)
            }
            (None, None) => return Ok(()),
        };
        let config = serde_json::json!({ "resolved": self.cfg, "args": args });
        RunMetadata {
            command: command.into(),
            version: pact_core::VERSION.into(),
            seed: self.cfg.seed,
            threads: rayon::current_num_threads(),
            wall_time_s: self.start.elapsed().as_secs_f64(),
            config,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        }
        .write(&path)?;
        Ok(())
    }
}

fn describe_spectra(path: &Path, psi: &Spectra) -> String {
    format!("{} (spectra: {} detectors x {} bins)", path.display(), psi.n_det(), psi.n_freq())
}

fn describe_geometry(path: &Path, s: &SensorArray) -> String {
    format!(
        "{} (geometry: {}x{} grid, {} elements, radius {} m)",
        path.display(),
        s.n_theta(),
        s.n_phi(),
        s.len(),
        s.radius_m()
    )
}

fn describe_volume(path: &Path, v: &Volume) -> String {
    format!("{} (volume: {:?} at pitch {} m, origin {:?})", path.display(), v.shape(), v.grid.pitch_m, v.grid.origin_m)
}

/// Spectra and geometry files, checked against each other.
fn load_measurements(rf: &Path, geom: &Path) -> Outcome<(Spectra, SpectraContext, SensorArray)> {
    let (psi, ctx) = io::read_spectra(rf)?;
    let sensors = io::read_geometry(geom)?;
    if let Some(&id) = psi.detector_ids.iter().find(|&&id| id >= sensors.len()) {
        return Err(Error::Mismatch {
            first: describe_spectra(rf, &psi),
            second: describe_geometry(geom, &sensors),
            detail: format!("detector id {id} does not exist in the geometry"),
        }
        .into());
    }
    Ok((psi, ctx, sensors))
}

fn recon_grid(cfg: &PipelineConfig) -> Outcome<GridSpec> {
    cfg.grid_spec().map_err(usage)
}

fn write_volume_outputs(vol: &Volume, out: &Path, mip: Option<&Path>) -> Outcome<Vec<PathBuf>> {
    io::write_volume(out, vol)?;
    let mut written = vec![out.to_owned()];
    if let Some(m) = mip {
        io::write_mip(m, vol)?;
        written.push(m.to_owned());
    }
    Ok(written)
}

fn as_paths(v: &[PathBuf]) -> Vec<&Path> {
    v.iter().map(PathBuf::as_path).collect()
}

fn cmd_phantom(run: &mut Run, a: &PhantomArgs) -> Outcome<()> {
    let cfg = &mut run.cfg;
    if let Some(v) = a.leaves {
        cfg.phantom.leaves = v;
    }
    if let Some(v) = a.grid {
        cfg.grid = v;
    }
    if let Some(v) = a.pitch {
        cfg.pitch_m = v;
    }
    if let Some(v) = a.sigma {
        cfg.phantom.sigma_vox = v;
    }
    if let Some(v) = a.peak {
        cfg.phantom.peak_pa = v;
    }
    let grid = recon_grid(cfg)?;
    let vol = pipeline::make_phantom(&cfg.phantom, &grid, cfg.seed).map_err(usage)?;
    let written = write_volume_outputs(&vol, &a.out, a.mip.as_deref())?;
    run.finish("phantom", a, &as_paths(&written))
}

fn cmd_geometry(run: &mut Run, a: &GeometryArgs) -> Outcome<()> {
    let cfg = &mut run.cfg;
    if let Some(v) = a.n_theta {
        cfg.n_theta = v;
    }
    if let Some(v) = a.n_phi {
        cfg.n_phi = v;
    }
    if let Some(v) = a.radius {
        cfg.radius_m = v;
    }
    if let Some(v) = a.pattern {
        cfg.pattern = v;
    }
    let full = build_hemisphere_grid(cfg.n_theta, cfg.n_phi, cfg.radius_m).map_err(usage)?;
    let sensors = apply_sampling_pattern(&full, &cfg.pattern).map_err(usage)?;
    io::write_geometry(&a.out, &sensors)?;
    run.finish("geometry", a, &[&a.out])
}

fn cmd_forward(run: &mut Run, a: &ForwardArgs) -> Outcome<()> {
    let cfg = &mut run.cfg;
    if a.noiseless {
        cfg.snr_db = None;
    } else if let Some(v) = a.snr {
        cfg.snr_db = Some(v);
    }
    if let Some(v) = a.fs {
        cfg.fs_hz = v;
    }
    let vol = io::read_volume(&a.vol)?;
    let sensors = io::read_geometry(&a.geom)?;
    let chain = ReceiveChain::for_setup(&vol.grid, &sensors, &cfg.medium, cfg.fs_hz).map_err(usage)?;
    let clean = forward_operator(&vol, &sensors, &cfg.medium, &chain)?;
    let (psi, variance) = match cfg.snr_db {
        Some(snr) => (
            add_noise(&clean, snr, cfg.noise_seed())?,
            Some(noise_variance(clean.energy(), clean.values.len(), snr)),
        ),
        None => (clean, None),
    };
    let ctx = SpectraContext {
        medium: cfg.medium,
        chain,
        geometry: Some(a.geom.display().to_string()),
        noise_variance: variance,
    };
    io::write_spectra(&a.out, &psi, &ctx)?;
    run.finish("forward", a, &[&a.out])
}

fn cmd_subsample(run: &mut Run, a: &SubsampleArgs) -> Outcome<()> {
    run.cfg.pattern = a.pattern;
    let (psi, ctx, sensors) = load_measurements(&a.rf, &a.geom)?;
    let masked = apply_sampling_pattern(&sensors, &a.pattern).map_err(usage)?;
    let kept = pipeline::restrict_to_active(&psi, &masked)?;
    io::write_spectra(&a.out, &kept, &ctx)?;
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(g) = &a.geom_out {
        io::write_geometry(g, &masked)?;
        outputs.push(g);
    }
    run.finish("subsample", a, &outputs)
}

fn apply_grid_flags(cfg: &mut PipelineConfig, grid: Option<[usize; 3]>, pitch: Option<f64>) {
    if let Some(v) = grid {
        cfg.grid = v;
    }
    if let Some(v) = pitch {
        cfg.pitch_m = v;
    }
}

fn cmd_ubp(run: &mut Run, a: &UbpArgs) -> Outcome<()> {
    let cfg = &mut run.cfg;
    apply_grid_flags(cfg, a.grid, a.pitch);
    if let Some(v) = a.interp {
        cfg.ubp.interp = v;
    }
    let grid = recon_grid(cfg)?;
    let (psi, ctx, sensors) = load_measurements(&a.rf, &a.geom)?;
    let psi = pipeline::restrict_to_active(&psi, &sensors)?;
    let traces = pressure_traces(&psi, &ctx.chain, &ctx.medium)?;
    let ubp = pact_core::ubp::UbpConfig {
        c0: ctx.medium.c0,
        ..cfg.ubp
    };
    let vol = ubp_reconstruct(&traces, &sensors, &grid, &ubp)?;
    let written = write_volume_outputs(&vol, &a.out, a.mip.as_deref())?;
    run.finish("ubp", a, &as_paths(&written))
}

fn cmd_iter(run: &mut Run, a: &IterArgs) -> Outcome<()> {
    let cfg = &mut run.cfg;
    apply_grid_flags(cfg, a.grid, a.pitch);
    if let Some(v) = a.lambda {
        cfg.iter.lambda_tv = Some(v);
    }
    if let Some(v) = a.mu {
        cfg.iter.mu_tik = v;
    }
    if let Some(v) = a.iters {
        cfg.iter.max_iters = v;
    }
    if let Some(v) = a.warm {
        cfg.iter.warm_start = v;
    }
    if a.no_discrepancy {
        cfg.use_discrepancy = false;
    }
    cfg.iter.validate().map_err(usage)?;
    let grid = recon_grid(cfg)?;
    let (psi, ctx, sensors) = load_measurements(&a.rf, &a.geom)?;
    let psi = pipeline::restrict_to_active(&psi, &sensors)?;
    let mut iter = cfg.iter.clone();
    iter.ubp.c0 = ctx.medium.c0;
    if cfg.use_discrepancy && iter.discrepancy_target.is_none() {
        if let Some(v) = ctx.noise_variance.filter(|&v| v > 0.0) {
            iter.discrepancy_target = Some(v * psi.values.len() as f64);
        }
    }
    let (vol, result) = fista_reconstruct(&psi, &sensors, &ctx.medium, &ctx.chain, &grid, &iter)?;
    log::info!(
        "{} iterations, stopped by {:?}, lambda {:e}",
        result.iterations,
        result.stop,
        result.lambda_tv
    );
    let mut written = write_volume_outputs(&vol, &a.out, a.mip.as_deref())?;
    if let Some(t) = &a.trace {
        io::write_objective_csv(t, &result.objective)?;
        written.push(t.clone());
    }
    run.finish("iter", a, &as_paths(&written))
}

fn format_report(report: &MetricReport, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        Format::Csv => format!("{}\n{}", MetricReport::csv_header(), report.csv_row()),
    }
}

fn cmd_metrics(run: &mut Run, a: &MetricsArgs) -> Outcome<()> {
    let reference = io::read_volume(&a.reference)?;
    let test = io::read_volume(&a.test)?;
    if !reference.grid.same_layout(&test.grid) {
        return Err(Error::Mismatch {
            first: describe_volume(&a.reference, &reference),
            second: describe_volume(&a.test, &test),
            detail: "volumes are sampled on different grids".into(),
        }
        .into());
    }
    let mut report = MetricReport::compute(&reference, &test)?;
    report.reference = Some(a.reference.display().to_string());
    report.test = Some(a.test.display().to_string());
    let text = format_report(&report, a.format);
    println!("{text}");
    eprintln!("cosine {:.2} %", 100.0 * report.cosine);
    if let Some(out) = &a.out {
        write_text(out, &text)?;
        return run.finish("metrics", a, &[out]);
    }
    run.finish("metrics", a, &[])
}

fn write_text(path: &Path, text: &str) -> Outcome<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_owned(),
            source: e,
        })?;
    }
    fs::write(path, format!("{text}\n")).map_err(|e| {
        Failure::Data(Error::Io {
            path: path.to_owned(),
            source: e,
        })
    })
}

fn report_checks(outcomes: &[CheckOutcome]) -> Outcome<()> {
    for o in outcomes {
        println!("{o}");
    }
    match outcomes.iter().filter(|o| !o.passed).count() {
        0 => Ok(()),
        n => Err(Failure::Checks(n)),
    }
}

fn cmd_disco_check(run: &mut Run, a: &DiscoCheckArgs) -> Outcome<()> {
    let sensors = match &a.geom {
        Some(g) => io::read_geometry(g)?,
        None => build_hemisphere_grid(run.cfg.n_theta, run.cfg.n_phi, run.cfg.radius_m).map_err(usage)?,
    };
    let basis = KernelBasis::new(a.basis, a.size, a.r).map_err(usage)?;
    let check = DiscoCheckConfig {
        cap_tol: a.cap_tol,
        seed: run.cfg.seed,
        ..DiscoCheckConfig::default()
    };
    let outcomes = disco_checks(&sensors, &basis, &check)?;
    run.finish("disco-check", a, &[])?;
    report_checks(&outcomes)
}

fn cmd_fno_check(run: &mut Run, a: &FnoCheckArgs) -> Outcome<()> {
    let modes = FnoModes {
        theta: a.modes_theta,
        phi: a.modes_phi,
        k: a.modes_k,
    };
    let shape = [a.n_theta, a.n_phi, a.n_freq];
    // reject bad configurations as usage errors before running anything
    pact_core::neuralop::FnoLayer::identity(a.channels, shape, modes, pact_core::neuralop::Activation::Identity)
        .map_err(usage)?;
    let outcomes = fno_checks(a.channels, shape, modes, run.cfg.seed)?;
    run.finish("fno-check", a, &[])?;
    report_checks(&outcomes)
}

fn cmd_pipeline(run: &mut Run, a: &PipelineArgs) -> Outcome<()> {
    let cfg = &mut run.cfg;
    apply_grid_flags(cfg, a.grid, a.pitch);
    if let Some(v) = a.pattern {
        cfg.pattern = v;
    }
    if let Some(v) = a.recon {
        cfg.recon = v;
    }
    if a.noiseless {
        cfg.snr_db = None;
    } else if let Some(v) = a.snr {
        cfg.snr_db = Some(v);
    }
    if let Some(v) = a.n_theta {
        cfg.n_theta = v;
    }
    if let Some(v) = a.n_phi {
        cfg.n_phi = v;
    }
    if let Some(v) = a.iters {
        cfg.iter.max_iters = v;
    }
    recon_grid(cfg)?;
    cfg.pattern.validate().map_err(usage)?;
    cfg.iter.validate().map_err(usage)?;
    let out = pipeline::run_pipeline(cfg)?;
    let dir = &a.out_dir;
    let phantom = dir.join("phantom.f32");
    let recon = dir.join("recon.f32");
    let report_path = dir.join("report.json");
    io::write_volume(&phantom, &out.simulation.phantom)?;
    io::write_volume(&recon, &out.reconstruction.volume)?;
    let mut report = out.report.clone();
    report.reference = Some("phantom.f32".into());
    report.test = Some("recon.f32".into());
    io::write_report(&report_path, &report)?;
    let mut written = vec![phantom, recon, report_path];
    if let Some(f) = &out.reconstruction.fista {
        let trace = dir.join("trace.csv");
        io::write_objective_csv(&trace, &f.objective)?;
        written.push(trace);
    }
    if let Some(m) = &a.mip {
        io::write_mip(m, &out.reconstruction.volume)?;
        written.push(m.clone());
    }
    println!("{}", format_report(&report, Format::Json));
    eprintln!("cosine {:.2} %", 100.0 * report.cosine);
    if run.meta.is_none() {
        run.meta = Some(dir.join("meta.json"));
    }
    run.finish("pipeline", a, &as_paths(&written))
}

fn cmd_validate(a: &ValidateArgs) -> Outcome<()> {
    let mut failed = 0;
    for f in &a.files {
        match io::validate(f) {
            Ok(desc) => println!("OK {}: {desc}", f.display()),
            Err(e) => {
                println!("FAIL {}: {e}", f.display());
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Checks(failed));
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Outcome<PipelineConfig> {
    match path {
        Some(p) => Ok(io::read_json(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn execute(cli: Cli) -> Outcome<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let mut run = Run {
        cfg,
        meta: cli.meta,
        start: Instant::now(),
    };
    match &cli.command {
        Command::Phantom(a) => cmd_phantom(&mut run, a),
        Command::Geometry(a) => cmd_geometry(&mut run, a),
        Command::Forward(a) => cmd_forward(&mut run, a),
        Command::Subsample(a) => cmd_subsample(&mut run, a),
        Command::Ubp(a) => cmd_ubp(&mut run, a),
        Command::Iter(a) => cmd_iter(&mut run, a),
        Command::Metrics(a) => cmd_metrics(&mut run, a),
        Command::DiscoCheck(a) => cmd_disco_check(&mut run, a),
        Command::FnoCheck(a) => cmd_fno_check(&mut run, a),
        Command::Pipeline(a) => cmd_pipeline(&mut run, a),
        Command::Validate(a) => cmd_validate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Checks(n)) => {
            eprintln!("{n} check(s) failed");
            ExitCode::from(1)
        }
    }
}

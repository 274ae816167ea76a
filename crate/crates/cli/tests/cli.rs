use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pact_core::io::{self, RunMetadata};
use pact_core::MetricReport;
use tempfile::TempDir;

fn pact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pact")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = pact(args);
    assert!(
        out.status.success(),
        "pact {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small phantom, geometry and spectra on a 16^3 grid.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture { dir: tempfile::tempdir().unwrap() };
        ok(&["--seed", "3", "phantom", "--leaves", "6", "--grid", "16x16x16", "--pitch", "0.001", "--out", s(&f.path("vol.f32"))]);
        ok(&["geometry", "--n-theta", "6", "--n-phi", "24", "--radius", "0.03", "--out", s(&f.path("g.json"))]);
        ok(&["forward", "--vol", s(&f.path("vol.f32")), "--geom", s(&f.path("g.json")), "--snr", "30", "--out", s(&f.path("psi.c64"))]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

#[test]
fn self_comparison_is_perfect() {
    let f = Fixture::new();
    let v = f.path("vol.f32");
    let out = ok(&["metrics", "--ref", s(&v), "--test", s(&v)]);
    let report: MetricReport = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report.cosine, 1.0);
    assert_eq!(report.nmse, 0.0);
    assert_eq!(report.psnr_db, f64::INFINITY);
    assert!(stderr(&out).contains("cosine 100.00 %"));

    let out = ok(&["metrics", "--ref", s(&v), "--test", s(&v), "--format", "csv"]);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cosine,psnr_db,nmse"));
    assert_eq!(lines.next(), Some("1,inf,0"));
}

#[test]
fn usage_errors_exit_2() {
    let out = pact(&["phantom", "--bogus", "1", "--out", "x.f32"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
    assert_eq!(pact(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(pact(&["geometry", "--pattern", "uniform:0", "--out", "g.json"]).status.code(), Some(2));
    assert_eq!(pact(&["phantom", "--grid", "16x16", "--out", "v.f32"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = pact(&["phantom", "--pitch=-1", "--out", s(&dir.path().join("v.f32"))]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.f32");
    let out = pact(&["metrics", "--ref", s(&missing), "--test", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nowhere.f32"), "{}", stderr(&out));
}

#[test]
fn mismatched_files_name_both_headers() {
    let f = Fixture::new();
    let other = f.path("other.f32");
    ok(&["phantom", "--leaves", "4", "--grid", "12x12x12", "--pitch", "0.001", "--out", s(&other)]);
    let out = pact(&["metrics", "--ref", s(&f.path("vol.f32")), "--test", s(&other)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("vol.f32 (volume: [16, 16, 16]") && err.contains("other.f32 (volume: [12, 12, 12]"), "{err}");

    let small = f.path("small.json");
    ok(&["geometry", "--n-theta", "2", "--n-phi", "4", "--radius", "0.03", "--out", s(&small)]);
    let out = pact(&["ubp", "--rf", s(&f.path("psi.c64")), "--geom", s(&small), "--grid", "16x16x16", "--pitch", "0.001", "--out", s(&f.path("r.f32"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("psi.c64 (spectra: 144 detectors") && err.contains("small.json (geometry: 2x4"), "{err}");
}

#[test]
fn file_chain_produces_valid_outputs_and_metadata() {
    let f = Fixture::new();
    let (rf, g) = (f.path("psi.c64"), f.path("g.json"));
    let sub = f.path("sub.c64");
    ok(&["subsample", "--rf", s(&rf), "--geom", s(&g), "--pattern", "uniform:2", "--out", s(&sub), "--geom-out", s(&f.path("g2.json"))]);
    let (psi, ctx) = io::read_spectra(&sub).unwrap();
    assert_eq!(psi.n_det(), 72);
    assert!(ctx.noise_variance.unwrap() > 0.0);

    let grid = ["--grid", "16x16x16", "--pitch", "0.001"];
    let (ubp, mip) = (f.path("ubp.f32"), f.path("ubp.pgm"));
    let mut args = vec!["ubp", "--rf", s(&sub), "--geom", s(&g), "--interp", "cubic", "--out", s(&ubp), "--mip", s(&mip)];
    args.extend(grid);
    ok(&args);
    let iter = f.path("iter.f32");
    let trace = f.path("obj.csv");
    let mut args = vec!["iter", "--rf", s(&sub), "--geom", s(&g), "--iters", "5", "--warm", "ubp", "--out", s(&iter), "--trace", s(&trace)];
    args.extend(grid);
    ok(&args);
    let obj = io::read_objective_csv(&trace).unwrap();
    assert!(obj.len() >= 2 && obj.windows(2).all(|w| w[1] <= w[0]));

    let files = ["vol.f32", "g.json", "psi.c64", "sub.c64", "g2.json", "ubp.f32", "ubp.pgm", "iter.f32", "obj.csv", "iter.f32.meta.json"];
    let paths: Vec<PathBuf> = files.iter().map(|n| f.path(n)).collect();
    let mut args = vec!["validate"];
    args.extend(paths.iter().map(|p| s(p)));
    let out = ok(&args);
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("OK ")).count(), files.len());

    for (out, command) in [("vol.f32", "phantom"), ("psi.c64", "forward"), ("ubp.f32", "ubp"), ("iter.f32", "iter")] {
        let meta: RunMetadata = io::read_json(&f.path(&format!("{out}.meta.json"))).unwrap();
        assert_eq!(meta.command, command);
        assert_eq!(meta.version, pact_core::VERSION);
        assert!(meta.config.get("resolved").is_some());
    }
    let meta: RunMetadata = io::read_json(&f.path("vol.f32.meta.json")).unwrap();
    assert_eq!(meta.seed, 3);
}

#[test]
fn validate_rejects_corrupt_files() {
    let f = Fixture::new();
    let v = f.path("vol.f32");
    let bytes = std::fs::read(&v).unwrap();
    std::fs::write(&v, &bytes[..bytes.len() - 4]).unwrap();
    let out = pact(&["validate", s(&v), s(&f.path("g.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("FAIL") && text.contains("OK"), "{text}");
}

fn pipeline(dir: &Path, extra: &[&str]) -> MetricReport {
    let mut args = vec!["pipeline", "--grid", "16x16x16", "--pitch", "0.001", "--n-theta", "8", "--n-phi", "32", "--pattern", "uniform:4", "--out-dir", s(dir)];
    args.extend(extra);
    ok(&args);
    io::read_report(&dir.join("report.json")).unwrap()
}

#[test]
fn pipeline_is_deterministic_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = pipeline(&a, &["--seed", "5", "--threads", "1"]);
    let rb = pipeline(&b, &["--seed", "5", "--threads", "3"]);
    assert_eq!(ra, rb);
    for name in ["recon.f32", "phantom.f32", "report.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let meta: RunMetadata = io::read_json(&a.join("meta.json")).unwrap();
    assert_eq!((meta.command.as_str(), meta.seed, meta.threads), ("pipeline", 5, 1));
    let out = ok(&["validate", s(&a.join("recon.f32")), s(&a.join("phantom.f32")), s(&a.join("report.json")), s(&a.join("meta.json"))]);
    assert_eq!(stdout(&out).matches("OK ").count(), 4);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 11, "phantom": {"leaves": 5}}"#).unwrap();
    let from_file = dir.path().join("a.f32");
    ok(&["--config", s(&cfg), "phantom", "--grid", "12x12x12", "--pitch", "0.001", "--out", s(&from_file)]);
    let meta: RunMetadata = io::read_json(&dir.path().join("a.f32.meta.json")).unwrap();
    assert_eq!(meta.seed, 11);
    assert_eq!(meta.config["resolved"]["phantom"]["leaves"], 5);

    let flagged = dir.path().join("b.f32");
    ok(&["--config", s(&cfg), "--seed", "12", "phantom", "--leaves", "7", "--grid", "12x12x12", "--pitch", "0.001", "--out", s(&flagged)]);
    let meta: RunMetadata = io::read_json(&dir.path().join("b.f32.meta.json")).unwrap();
    assert_eq!(meta.seed, 12);
    assert_eq!(meta.config["resolved"]["phantom"]["leaves"], 7);
    assert_ne!(std::fs::read(&from_file).unwrap(), std::fs::read(&flagged).unwrap());

    std::fs::write(&cfg, r#"{"sead": 11}"#).unwrap();
    let out = pact(&["--config", s(&cfg), "phantom", "--out", s(&flagged)]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn check_suites_report_each_property() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    ok(&["geometry", "--n-theta", "32", "--n-phi", "64", "--radius", "0.05", "--out", s(&g)]);
    let out = ok(&["disco-check", "--geom", s(&g), "--basis", "zernike", "--L", "4", "--r", "0.314"]);
    let text = stdout(&out);
    for name in ["neighbourhoods", "cap_area", "support", "linearity", "rotation", "quadrature_total"] {
        assert!(text.contains(&format!("PASS {name}")), "{text}");
    }
    let out = pact(&["disco-check", "--geom", s(&g), "--basis", "haar", "--L", "4", "--r", "0.001"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL cap_area"));
    assert_eq!(pact(&["disco-check", "--basis", "haar", "--L", "3"]).status.code(), Some(2));

    let out = ok(&["fno-check"]);
    let text = stdout(&out);
    for name in ["identity", "low_pass", "projection", "linearity"] {
        assert!(text.contains(&format!("PASS {name}")), "{text}");
    }
    assert_eq!(pact(&["fno-check", "--modes-theta", "20"]).status.code(), Some(2));
}

#[test]
fn fista_beats_ubp_on_the_desk_phantom() {
    let dir = tempfile::tempdir().unwrap();
    let run = |recon: &str| -> f64 {
        let out = dir.path().join(recon);
        ok(&["pipeline", "--seed", "7", "--grid", "48x48x48", "--pattern", "uniform:6", "--recon", recon, "--iters", "20", "--out-dir", s(&out)]);
        io::read_report(&out.join("report.json")).unwrap().cosine
    };
    let (ubp, iter) = (run("ubp"), run("iter"));
    assert!(iter >= ubp, "iter {iter} vs ubp {ubp}");
    assert!(dir.path().join("iter/trace.csv").exists());
}

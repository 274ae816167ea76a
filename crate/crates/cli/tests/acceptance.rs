//! Acceptance suite. Prints one PASS/FAIL line per criterion with its
//! measurement, wall time and time budget; exits nonzero if any fails.
//! Pass criterion numbers as arguments to run a subset.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pact_core::checks::cap_area_error;
use pact_core::forward::{
    forward_operator, physics_residual, pressure_traces, sample_physics_mask, AcousticMedium, ForwardModel, PhysicsMask,
    ReceiveChain,
};
use pact_core::geometry::{build_hemisphere_grid, Point3};
use pact_core::iterative::{fista_solve, tv_huber_slice, IterConfig, LinearOperator};
use pact_core::metrics::{cosine_similarity, nmse, psnr};
use pact_core::neuralop::{
    build_disco_matrices, disco_apply, fno_layer_apply, fno_preactivation, Activation, BasisKind, DiscoLayer, FnoLayer,
    FnoModes, KernelBasis,
};
use pact_core::pipeline::{self, PipelineConfig, Recon};
use pact_core::ubp::{ubp_reconstruct, UbpConfig};
use pact_core::{GridSpec, SamplingPattern, Volume};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

/// Objective traces of every FISTA run in the suite.
#[derive(Default)]
struct Shared {
    traces: Vec<(String, Vec<f64>)>,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn criterion_1(_: &mut Shared) -> Verdict {
    let grid = GridSpec::centered([8, 8, 8], 0.5e-3).unwrap();
    let bowl = build_hemisphere_grid(8, 16, 0.02).unwrap();
    let chain = ReceiveChain::flat(20e6, 40e-6, 16).unwrap();
    let medium = AcousticMedium::default();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = rng(seed);
        let mut ids: Vec<usize> = (0..bowl.len()).collect();
        for i in 0..10 {
            let j = r.random_range(i..ids.len());
            ids.swap(i, j);
        }
        ids.truncate(10);
        ids.sort_unstable();
        let model = ForwardModel::with_detectors(&ids, &bowl, &medium, &chain, &grid).unwrap();
        let x: Vec<f64> = (0..grid.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<Complex64> = (0..model.n_det() * model.n_freq())
            .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        let lhs: Complex64 = model.apply(&x).iter().zip(&y).map(|(a, b)| a * b.conj()).sum();
        let rhs: f64 = x.iter().zip(model.adjoint(&y)).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs.re - rhs).abs() / lhs.norm().max(rhs.abs()));
    }
    verdict(worst < 1e-6, format!("worst relative gap {worst:.2e} over 20 instances, bound 1e-6"))
}

fn criterion_2(_: &mut Shared) -> Verdict {
    let h = 0.5e-3;
    let grid = GridSpec::centered([1, 1, 1], h).unwrap();
    let mut vol = Volume::zeros(grid);
    vol.data[0] = 1.0;
    let sensors = build_hemisphere_grid(4, 8, 0.03).unwrap();
    let chain = ReceiveChain::flat(20e6, 40e-6, 64).unwrap();
    let medium = AcousticMedium::default();
    let psi = forward_operator(&vol, &sensors, &medium, &chain).unwrap();
    let mut worst = 0.0f64;
    for m in 0..psi.n_det() {
        let p = sensors.position(psi.detector_ids[m]);
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        for (b, v) in psi.row(m).iter().enumerate() {
            let exact = Complex64::cis(chain.omega(b) * r / medium.c0) * (h.powi(3) / (4.0 * PI * r));
            worst = worst.max((v - exact).norm() / exact.norm());
        }
    }
    verdict(worst < 1e-10, format!("worst relative error {worst:.2e} over {} entries, bound 1e-10", psi.values.len()))
}

fn criterion_3(_: &mut Shared) -> Verdict {
    let sensors = build_hemisphere_grid(32, 128, 0.05).unwrap();
    let grid = GridSpec::centered([64, 64, 64], 0.5e-3).unwrap();
    let medium = AcousticMedium::default();
    let chain = ReceiveChain::for_setup(&grid, &sensors, &medium, 20e6).unwrap();
    let image = |sources: &[([usize; 3], f32)]| -> Volume {
        let mut vol = Volume::zeros(grid);
        for &([x, y, z], a) in sources {
            vol.set(x, y, z, a);
        }
        let psi = forward_operator(&vol, &sensors, &medium, &chain).unwrap();
        let traces = pressure_traces(&psi, &chain, &medium).unwrap();
        ubp_reconstruct(&traces, &sensors, &grid, &UbpConfig::default()).unwrap()
    };
    let truth = [21, 40, 35];
    let rec = image(&[(truth, 1.0)]);
    let peak = rec.argmax_abs();
    let offset = (0..3).map(|a| peak[a].abs_diff(truth[a])).max().unwrap();
    let positive = rec.get(peak[0], peak[1], peak[2]) > 0.0;

    let (a, b) = ([18, 20, 32], [44, 42, 30]);
    let rec = image(&[(a, 2.0), (b, 1.0)]);
    let local_max = |c: [usize; 3]| {
        let mut best = f32::NEG_INFINITY;
        for x in c[0] - 1..=c[0] + 1 {
            for y in c[1] - 1..=c[1] + 1 {
                for z in c[2] - 1..=c[2] + 1 {
                    best = best.max(rec.get(x, y, z));
                }
            }
        }
        best as f64
    };
    let ratio = local_max(a) / local_max(b);
    let ratio_err = (ratio / 2.0 - 1.0).abs();
    verdict(
        offset <= 1 && positive && ratio_err < 0.15,
        format!("peak {peak:?} vs {truth:?} (offset {offset}), amplitude ratio {ratio:.3} vs 2 ({:.1}% off, bound 15%)", 100.0 * ratio_err),
    )
}

/// Mean cosine per UBP rate and for FISTA at 6x, over the phantom batch.
struct Batch {
    ubp: Vec<(usize, f64)>,
    iter: f64,
    ubp6: f64,
}

fn desk_batch(shared: &mut Shared) -> Batch {
    let rates = [1usize, 6, 10, 20];
    let mut ubp_sum = vec![0.0; rates.len()];
    let mut iter_sum = 0.0;
    let mut op_norm = None;
    let n = 10;
    for seed in 1..=n {
        let mut cfg = PipelineConfig { seed, ..PipelineConfig::default() };
        let grid = cfg.grid_spec().unwrap();
        let sim = pipeline::simulate(&cfg).unwrap();
        for (k, &rate) in rates.iter().enumerate() {
            let pattern: SamplingPattern = format!("uniform:{rate}").parse().unwrap();
            let acq = pipeline::subsample(&sim, &pattern).unwrap();
            let rec = pipeline::reconstruct(&acq, &sim, &grid, Recon::Ubp, &cfg).unwrap();
            ubp_sum[k] += cosine_similarity(&sim.phantom, &rec.volume).unwrap();
        }
        // the operator depends only on geometry, grid and receive chain, shared by the batch
        cfg.iter.op_norm = op_norm;
        let acq = pipeline::subsample(&sim, &"uniform:6".parse().unwrap()).unwrap();
        let rec = pipeline::reconstruct(&acq, &sim, &grid, Recon::Iter, &cfg).unwrap();
        let fista = rec.fista.unwrap();
        op_norm = Some(fista.op_norm);
        iter_sum += cosine_similarity(&sim.phantom, &rec.volume).unwrap();
        shared.traces.push((format!("desk phantom {seed}"), fista.objective));
    }
    let ubp: Vec<(usize, f64)> = rates.iter().zip(&ubp_sum).map(|(&r, s)| (r, s / n as f64)).collect();
    Batch {
        ubp6: ubp[1].1,
        ubp,
        iter: iter_sum / n as f64,
    }
}

fn criteria_4_and_5(shared: &mut Shared) -> (Verdict, Verdict) {
    let b = desk_batch(shared);
    let gap = 100.0 * (b.iter - b.ubp6);
    let v4 = verdict(
        gap >= 3.0,
        format!("mean cosine FISTA {:.2}% vs UBP {:.2}% at 6x over 10 phantoms, gap {gap:.2} points (bound 3)", 100.0 * b.iter, 100.0 * b.ubp6),
    );
    let monotone = b.ubp.windows(2).all(|w| w[1].1 <= w[0].1);
    let listing: Vec<String> = b.ubp.iter().map(|(r, c)| format!("{r}x {:.2}%", 100.0 * c)).collect();
    let v5 = verdict(monotone, format!("UBP mean cosine {}", listing.join(", ")));
    (v4, v5)
}

fn monotone_violation(trace: &[f64]) -> Option<(usize, f64, f64)> {
    trace
        .windows(2)
        .enumerate()
        .find(|(_, w)| w[1] > w[0] + 1e-9 * w[0].abs())
        .map(|(i, w)| (i + 1, w[0], w[1]))
}

fn materialize(op: &dyn LinearOperator) -> DMatrix<f64> {
    let (n, m) = (op.domain_len(), op.range_len());
    let mut a = DMatrix::<f64>::zeros(2 * m, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        for (i, v) in op.apply(&e).iter().enumerate() {
            a[(i, j)] = v.re;
            a[(m + i, j)] = v.im;
        }
    }
    a
}

fn criterion_6(shared: &mut Shared) -> Verdict {
    let sensors = build_hemisphere_grid(4, 16, 0.05).unwrap();
    let grid = GridSpec::centered([8, 8, 8], 2e-3).unwrap();
    let chain = ReceiveChain::flat(20e6, 20e-6, 24).unwrap();
    let model = ForwardModel::new(&sensors, &AcousticMedium::default(), &chain, &grid).unwrap();
    let a = materialize(&model);
    let mut r = rng(8);
    let x_true: Vec<f64> = (0..grid.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut psi = model.apply(&x_true);
    for v in psi.iter_mut() {
        *v += Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)) * 1e-9;
    }
    let m = psi.len();
    let b = DVector::from_iterator(2 * m, psi.iter().map(|v| v.re).chain(psi.iter().map(|v| v.im)));
    let x_ne = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * b));
    let cfg = IterConfig {
        lambda_tv: Some(0.0),
        mu_tik: 0.0,
        nonnegative: false,
        rel_obj_tol: 0.0,
        max_iters: 3000,
        ..IterConfig::default()
    };
    let res = fista_solve(&model, grid.shape, &psi, &cfg, None).unwrap();
    let err = res.x.iter().zip(x_ne.iter()).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt() / x_ne.norm();
    shared.traces.push(("normal equations".into(), res.objective));

    if !shared.traces.iter().any(|(name, _)| name.starts_with("desk")) {
        let cfg = PipelineConfig {
            grid: [24, 24, 24],
            pattern: "uniform:6".parse().unwrap(),
            recon: Recon::Iter,
            ..PipelineConfig::default()
        };
        let out = pipeline::run_pipeline(&cfg).unwrap();
        shared.traces.push(("small desk run".into(), out.reconstruction.fista.unwrap().objective));
    }
    let violations: Vec<String> = shared
        .traces
        .iter()
        .filter_map(|(name, t)| monotone_violation(t).map(|(i, a, b)| format!("{name} rose at {i}: {a:e} -> {b:e}")))
        .collect();
    verdict(
        err < 1e-4 && violations.is_empty(),
        format!(
            "normal-equation distance {err:.2e} (bound 1e-4); {} of {} objective traces monotone{}",
            shared.traces.len() - violations.len(),
            shared.traces.len(),
            if violations.is_empty() { String::new() } else { format!(" [{}]", violations.join("; ")) }
        ),
    )
}

fn criterion_7(_: &mut Shared) -> Verdict {
    let shape = [6, 6, 6];
    let (delta, h) = (0.05, 1e-4);
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut r = rng(seed);
        let x: Vec<f64> = (0..216).map(|_| r.random_range(0.0..1.0)).collect();
        let (_, g) = tv_huber_slice(&x, shape, delta).unwrap();
        for _ in 0..20 {
            let i = r.random_range(0..216);
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (tv_huber_slice(&xp, shape, delta).unwrap().0 - tv_huber_slice(&xm, shape, delta).unwrap().0) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / fd.abs().max(1e-3));
        }
    }
    verdict(worst < 1e-3, format!("worst relative error {worst:.2e} at 200 voxels, bound 1e-3"))
}

fn criterion_8(_: &mut Shared) -> Verdict {
    let radius = 0.1 * PI;
    let levels = [(16, 32), (32, 64), (64, 128)];
    let errs: Vec<(f64, f64)> = levels
        .iter()
        .map(|&(nt, np)| {
            let s = build_hemisphere_grid(nt, np, 1.0).unwrap();
            let (mean, max, _) = cap_area_error(&s, radius).unwrap();
            (mean, max)
        })
        .collect();
    let rates: Vec<f64> = errs.windows(2).map(|w| (w[0].0 / w[1].0).log2()).collect();
    let (mean, max) = errs[2];
    let min_rate = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(
        mean < 0.02 && min_rate >= 0.9,
        format!(
            "64x128 mean error {:.2}% (max {:.2}%), bound 2%; mean errors {:.2}% / {:.2}% / {:.2}%, rates {:.2} and {:.2} (bound 0.9)",
            100.0 * mean,
            100.0 * max,
            100.0 * errs[0].0,
            100.0 * errs[1].0,
            100.0 * errs[2].0,
            rates[0],
            rates[1]
        ),
    )
}

fn criterion_9(_: &mut Shared) -> Verdict {
    let (nt, np) = (16, 64);
    let s = build_hemisphere_grid(nt, np, 0.05).unwrap();
    let outs: Vec<Point3> = (0..s.len()).map(|i| s.unit_position(i)).collect();
    let radius = 0.3;
    let rotate = |g: &[f64], shift: usize| -> Vec<f64> {
        let mut out = vec![0.0; g.len()];
        for (c, chunk) in g.chunks(nt * np).enumerate() {
            for i in 0..nt {
                for j in 0..np {
                    out[c * nt * np + i * np + (j + shift) % np] = chunk[i * np + j];
                }
            }
        }
        out
    };
    let mut worst = 0.0f64;
    for kind in [BasisKind::PiecewiseLinear, BasisKind::HaarWavelet, BasisKind::Zernike] {
        let basis = KernelBasis::new(kind, 4, radius).unwrap();
        let m = Arc::new(build_disco_matrices(&s, &outs, &basis).unwrap());
        let layer = DiscoLayer::random(basis, m, 2, 3, 5).unwrap();
        let mut r = rng(6);
        let f: Vec<f64> = (0..2 * s.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        for shift in [1, 5, 21] {
            let lhs = disco_apply(&layer, &rotate(&f, shift)).unwrap();
            let rhs = rotate(&disco_apply(&layer, &f).unwrap(), shift);
            let err = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
            worst = worst.max(err / norm);
        }
    }
    verdict(worst <= 1e-6, format!("worst relative error {worst:.2e} over three bases and shifts 1, 5, 21; bound 1e-6"))
}

fn max_abs(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn criterion_10(_: &mut Shared) -> Verdict {
    let shape = [16, 32, 8];
    let [nt, np, nk] = shape;
    let mut r = rng(10);
    let mut random = |n: usize| -> Vec<Complex64> {
        (0..n).map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect()
    };
    let full = FnoLayer::identity(3, shape, FnoModes::full(shape), Activation::Identity).unwrap();
    let f = random(full.len());
    let out = fno_layer_apply(&full, &f).unwrap();
    let id_err = out.iter().zip(&f).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);

    let modes = FnoModes { theta: 4, phi: 6, k: 5 };
    let mut layer = FnoLayer::random(3, shape, modes, 4).unwrap();
    layer.bias.iter_mut().for_each(|b| *b = 0.0);
    let mut g = vec![Complex64::new(0.0, 0.0); layer.len()];
    for c in 0..3 {
        for t in 0..nt {
            for p in 0..np {
                for k in 0..nk {
                    // theta mode 6 and phi mode 9 in every bin, plus all content above bin 5
                    let band = 2.0 * PI * (6.0 * t as f64 / nt as f64 + 9.0 * p as f64 / np as f64);
                    let v = Complex64::cis(band) + if k >= 5 { Complex64::new(0.3, -0.2) } else { Complex64::new(0.0, 0.0) };
                    g[((c * nt + t) * np + p) * nk + k] = v;
                }
            }
        }
    }
    let leak = max_abs(&fno_preactivation(&layer, &g).unwrap());

    let proj = FnoLayer::identity(3, shape, modes, Activation::Identity).unwrap();
    let once = fno_layer_apply(&proj, &f).unwrap();
    let twice = fno_layer_apply(&proj, &once).unwrap();
    let idem = once.iter().zip(&twice).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    verdict(
        id_err < 1e-10 && leak < 1e-10 && idem < 1e-10,
        format!("identity error {id_err:.2e}, out-of-band response {leak:.2e}, idempotence error {idem:.2e}; bound 1e-10"),
    )
}

fn median_time(mut f: impl FnMut(), runs: usize) -> Duration {
    let mut times: Vec<Duration> = (0..runs)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed()
        })
        .collect();
    times.sort();
    times[runs / 2]
}

fn criterion_11(_: &mut Shared) -> Verdict {
    // self-consistency and the identity mask on a small problem
    let sensors = build_hemisphere_grid(2, 5, 0.02).unwrap();
    let grid = GridSpec::centered([8, 8, 8], 0.5e-3).unwrap();
    let chain = ReceiveChain::flat(20e6, 40e-6, 16).unwrap();
    let medium = AcousticMedium::default();
    let mut r = rng(11);
    let mut worst_self = 0.0f64;
    for seed in 0..5 {
        let p = Volume::from_f64(grid, &(0..grid.len()).map(|_| r.random_range(0.0..1.0)).collect::<Vec<_>>()).unwrap();
        let psi = forward_operator(&p, &sensors, &medium, &chain).unwrap();
        let mask = sample_physics_mask(5, 4, &chain, &sensors, seed).unwrap();
        let res = physics_residual(&p, &psi, &mask, &sensors, &medium, &chain).unwrap();
        worst_self = worst_self.max(res / psi.energy());
    }
    let p = Volume::from_f64(grid, &(0..grid.len()).map(|_| r.random_range(0.0..1.0)).collect::<Vec<_>>()).unwrap();
    let q = Volume::from_f64(grid, &(0..grid.len()).map(|_| r.random_range(0.0..1.0)).collect::<Vec<_>>()).unwrap();
    let psi = forward_operator(&p, &sensors, &medium, &chain).unwrap();
    let full = forward_operator(&q, &sensors, &medium, &chain).unwrap();
    let brute: f64 = full.values.iter().zip(&psi.values).map(|(a, b)| (a - b).norm_sqr()).sum();
    let id = physics_residual(&q, &psi, &PhysicsMask::identity(&chain, &sensors), &sensors, &medium, &chain).unwrap();
    let id_err = (id - brute).abs() / brute;

    // cost at desk scale
    let cfg = PipelineConfig::default();
    let sim = pipeline::simulate(&cfg).unwrap();
    let grid = cfg.grid_spec().unwrap();
    let mut r = rng(12);
    let p_hat = Volume::from_f64(grid, &(0..grid.len()).map(|_| r.random_range(0.0..1.0)).collect::<Vec<_>>()).unwrap();
    let mask = sample_physics_mask(15, 40, &sim.chain, &sim.sensors, 1).unwrap();
    let t_mask = median_time(
        || {
            physics_residual(&p_hat, &sim.spectra, &mask, &sim.sensors, &sim.medium, &sim.chain).unwrap();
        },
        3,
    );
    let t_full = median_time(
        || {
            let a = forward_operator(&p_hat, &sim.sensors, &sim.medium, &sim.chain).unwrap();
            let _: f64 = a.values.iter().zip(&sim.spectra.values).map(|(x, y)| (x - y).norm_sqr()).sum();
        },
        3,
    );
    let share = t_mask.as_secs_f64() / t_full.as_secs_f64();
    verdict(
        worst_self < 1e-10 && id_err < 1e-9 && share < 0.05,
        format!(
            "self-consistent residual {worst_self:.2e} of data energy (bound 1e-10); identity mask vs full {id_err:.2e} (bound 1e-9); \
             15 modes x 40 sensors {:.3} s vs full {:.3} s at 48^3 = {:.2}% (bound 5%)",
            t_mask.as_secs_f64(),
            t_full.as_secs_f64(),
            100.0 * share
        ),
    )
}

fn line(values: &[f32]) -> Volume {
    Volume::from_data(GridSpec::centered([values.len(), 1, 1], 1.0).unwrap(), values.to_vec()).unwrap()
}

fn criterion_12(_: &mut Shared) -> Verdict {
    let mut worst_hand = 0.0f64;
    let mut check = |got: f64, want: f64| worst_hand = worst_hand.max((got - want).abs());
    check(cosine_similarity(&line(&[0.3, -1.0, 2.0, 0.5]), &line(&[0.3, -1.0, 2.0, 0.5])).unwrap(), 1.0);
    check(cosine_similarity(&line(&[1.0, 1.0, 0.0, 0.0]), &line(&[0.0, 0.0, 2.0, 1.0])).unwrap(), 0.0);
    check(cosine_similarity(&line(&[1.0, 0.0, 0.0]), &line(&[1.0, 1.0, 0.0])).unwrap(), std::f64::consts::FRAC_1_SQRT_2);
    check(psnr(&line(&[1.0, 0.0]), &line(&[0.0, 0.0])).unwrap(), 10.0 * 2f64.log10());
    check(nmse(&line(&[1.0, 1.0]), &line(&[1.0, 0.0])).unwrap(), 0.5);
    check(nmse(&line(&[1.0, 1.0]), &line(&[0.0, 0.0])).unwrap(), 1.0);
    check(nmse(&line(&[1.0, 0.0]), &line(&[1.0, 1.0])).unwrap(), 1.0);
    let inf_ok = psnr(&line(&[1.0, 0.0]), &line(&[1.0, 0.0])).unwrap() == f64::INFINITY;

    let grid = GridSpec::centered([4, 4, 4], 1.0).unwrap();
    let mut worst_brute = 0.0f64;
    for seed in 0..200 {
        let mut r = rng(seed);
        let p: Vec<f32> = (0..64).map(|_| r.random_range(0.01..1.0)).collect();
        let q: Vec<f32> = (0..64).map(|_| r.random_range(-1.0..1.0)).collect();
        let (mut pq, mut pp, mut qq, mut ee, mut peak) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, f64::NEG_INFINITY);
        for i in 0..64 {
            let (a, b) = (p[i] as f64, q[i] as f64);
            pq += a * b;
            pp += a * a;
            qq += b * b;
            ee += (a - b) * (a - b);
            peak = peak.max(a);
        }
        let (vp, vq) = (Volume::from_data(grid, p).unwrap(), Volume::from_data(grid, q).unwrap());
        let c = pq / (pp.sqrt() * qq.sqrt());
        let s = 10.0 * (peak * peak / (ee / 64.0)).log10();
        let e = ee / pp;
        worst_brute = worst_brute
            .max((cosine_similarity(&vp, &vq).unwrap() - c).abs())
            .max((psnr(&vp, &vq).unwrap() - s).abs() / s.abs().max(1.0))
            .max((nmse(&vp, &vq).unwrap() - e).abs() / e.max(1.0));
    }
    verdict(
        worst_hand < 1e-9 && inf_ok && worst_brute < 1e-12,
        format!("hand examples within {worst_hand:.1e} (bound 1e-9); brute-force agreement {worst_brute:.1e} on 200 volumes (bound 1e-12)"),
    )
}

fn run_pact(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_pact"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn criterion_13(_: &mut Shared) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (tag, threads) in [("a", "1"), ("b", "8"), ("c", "1"), ("d", "8")] {
        let out = dir.path().join(tag);
        let ok = run_pact(&[
            "--threads", threads, "pipeline", "--seed", "7", "--grid", "48x48x48", "--pattern", "uniform:6", "--recon", "ubp",
            "--out-dir", out.to_str().unwrap(),
        ]);
        if !ok {
            return verdict(false, format!("pipeline run with {threads} threads failed"));
        }
        runs.push(out);
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    let mut differing = Vec::new();
    for f in ["recon.f32", "recon.f32.json", "phantom.f32", "report.json"] {
        if runs.iter().any(|d| read(d, f) != read(&runs[0], f)) {
            differing.push(f);
        }
    }
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            "recon, phantom and report bitwise identical over 2 runs each at 1 and 8 threads".into()
        } else {
            format!("outputs differ: {differing:?}")
        },
    )
}

struct Criterion {
    id: usize,
    name: &'static str,
    budget_s: f64,
}

const CRITERIA: [Criterion; 13] = [
    Criterion { id: 1, name: "adjoint dot-product test", budget_s: 10.0 },
    Criterion { id: 2, name: "single-voxel forward oracle", budget_s: 1.0 },
    Criterion { id: 3, name: "UBP localization", budget_s: 60.0 },
    Criterion { id: 4, name: "solver ordering", budget_s: 1200.0 },
    Criterion { id: 5, name: "subsampling monotonicity", budget_s: 1200.0 },
    Criterion { id: 6, name: "FISTA sanity", budget_s: 60.0 },
    Criterion { id: 7, name: "TV gradient", budget_s: 5.0 },
    Criterion { id: 8, name: "DISCO quadrature", budget_s: 30.0 },
    Criterion { id: 9, name: "DISCO azimuthal consistency", budget_s: 10.0 },
    Criterion { id: 10, name: "FNO identity and low-pass", budget_s: 10.0 },
    Criterion { id: 11, name: "physics residual", budget_s: 60.0 },
    Criterion { id: 12, name: "metric oracles", budget_s: 5.0 },
    Criterion { id: 13, name: "determinism", budget_s: 300.0 },
];

fn report(c: &Criterion, v: &Verdict, elapsed: f64) -> bool {
    let in_time = elapsed <= c.budget_s;
    let passed = v.passed && in_time;
    println!(
        "{} [{:>2}] {}: {} ({:.2} s, budget {} s{})",
        if passed { "PASS" } else { "FAIL" },
        c.id,
        c.name,
        v.detail,
        elapsed,
        c.budget_s,
        if in_time { "" } else { ", over budget" }
    );
    passed
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |id: usize| selected.is_empty() || selected.contains(&id);
    let mut shared = Shared::default();
    let mut failures = 0;
    let mut count = |c: &Criterion, v: &Verdict, t: f64| {
        if !report(c, v, t) {
            failures += 1;
        }
    };
    let single: [(usize, fn(&mut Shared) -> Verdict); 3] = [(1, criterion_1), (2, criterion_2), (3, criterion_3)];
    for (id, f) in single {
        if want(id) {
            let t = Instant::now();
            let v = f(&mut shared);
            count(&CRITERIA[id - 1], &v, t.elapsed().as_secs_f64());
        }
    }
    if want(4) || want(5) {
        let t = Instant::now();
        let (v4, v5) = criteria_4_and_5(&mut shared);
        let elapsed = t.elapsed().as_secs_f64();
        if want(4) {
            count(&CRITERIA[3], &v4, elapsed);
        }
        if want(5) {
            count(&CRITERIA[4], &v5, elapsed);
        }
    }
    let rest: [(usize, fn(&mut Shared) -> Verdict); 8] = [
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
        (12, criterion_12),
        (13, criterion_13),
    ];
    for (id, f) in rest {
        if want(id) {
            let t = Instant::now();
            let v = f(&mut shared);
            count(&CRITERIA[id - 1], &v, t.elapsed().as_secs_f64());
        }
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all selected criteria passed");
}


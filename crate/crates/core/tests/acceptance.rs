//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,5,8` restricts the run to the listed criteria.
//! Stochastic criteria run seeds 1, 2, 3 and accept on the median; the third
//! seed is skipped when the first two already decide the outcome, in which
//! case the reported "median" is the midpoint of the two values.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gradflow::continuum::{Functionals, OuProcess, Resolution};
use gradflow::eval::{self, weighted_grad_error};
use gradflow::experiment::{self, ExperimentConfig, Resolved};
use gradflow::kde::{density, grad_log_density, KernelConfig};
use gradflow::loss::{Eval, LossContext, LossKind, LossSpec};
use gradflow::ot::{self, assignment_cost, sinkhorn, squared_cost, SinkhornOptions};
use gradflow::potentials::{AnalyticPotential, NeuralPotential};
use gradflow::sde::{self, simulate, ParticleDataset, SimConfig};
use gradflow::train::train_with;
use gradflow::velocity::{ot_velocity, with_force_balance, VelocitySource};
use gradflow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 3] = [1, 2, 3];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn log(msg: impl AsRef<str>) {
    eprintln!("  · {}", msg.as_ref());
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bundled(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs().join(name)).expect("bundled config")
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

/// Range the median of three can still take given the values seen so far.
fn median_range(v: &[f64]) -> (f64, f64) {
    match v.len() {
        0 | 1 => (f64::NEG_INFINITY, f64::INFINITY),
        2 => (v[0].min(v[1]), v[0].max(v[1])),
        _ => {
            let m = median(v);
            (m, m)
        }
    }
}

/// Runs `one` per seed until the median-based `check` is decided. `check`
/// is monotone in each metric, so testing the corners of the feasible
/// median box suffices.
fn over_seeds<F, C>(n_metrics: usize, mut one: F, check: C) -> Result<(bool, Vec<Vec<f64>>)>
where
    F: FnMut(u64) -> Result<Vec<f64>>,
    C: Fn(&[f64]) -> bool,
{
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); n_metrics];
    for &seed in &SEEDS {
        let t = Instant::now();
        let vals = one(seed)?;
        log(format!("seed {seed}: {vals:?} ({:.0}s)", t.elapsed().as_secs_f64()));
        for (s, v) in samples.iter_mut().zip(vals) {
            s.push(v);
        }
        let ranges: Vec<(f64, f64)> = samples.iter().map(|s| median_range(s)).collect();
        let mut any = false;
        let mut all = true;
        for corner in 0..(1usize << n_metrics) {
            let point: Vec<f64> = ranges
                .iter()
                .enumerate()
                .map(|(k, r)| if corner >> k & 1 == 0 { r.0 } else { r.1 })
                .collect();
            let ok = check(&point);
            any |= ok;
            all &= ok;
        }
        if all || !any {
            return Ok((all, samples));
        }
    }
    let med: Vec<f64> = samples.iter().map(|s| median(s)).collect();
    Ok((check(&med), samples))
}

/// Median of each metric; with two seeds the midpoint of the feasible range.
fn medians(samples: &[Vec<f64>]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| if s.len() == 2 { 0.5 * (s[0] + s[1]) } else { median(s) })
        .collect()
}

/// Small datasets with the shape of each benchmark.
fn shaped_datasets() -> Vec<(ParticleDataset, KernelConfig, &'static str)> {
    let mut out = Vec::new();
    for (name, pot, q) in [
        ("dw1d", AnalyticPotential::double_well_1d(), 5),
        ("qw2d", AnalyticPotential::quadruple_well_2d(), 5),
        ("gm2d", AnalyticPotential::gaussian_mixture_2d(), 5),
        ("mm3d", AnalyticPotential::multimodal_3d(), 10),
    ] {
        let d = pot.dim;
        let cfg = SimConfig {
            dim: d,
            kbt: 0.125,
            gamma: 1.0,
            dt: 1e-3,
            snapshot_times: vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
            n_particles: 150,
            init_means: sde::sample_initial_means(q, &vec![-2.0; d], &vec![2.0; d], 9).unwrap(),
            init_std: 0.5,
            seed: 4,
        };
        let kc = KernelConfig::new(0.05, d).unwrap();
        let ds = simulate(&pot, &cfg).unwrap();
        let ds = with_force_balance(&ds, &pot, &kc, 0.125).unwrap();
        out.push((ds, kc, name));
    }
    out
}

fn c1_gauge() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for (ds, kc, name) in shaped_datasets() {
        for alpha in [0.0, 0.5, 1.0] {
            let ctx = LossContext::new(&ds, &kc, &LossSpec::new(alpha, 0.125, [0.3, 0.8]))?;
            for trial in 0..3 {
                let nn = NeuralPotential::init(ds.dim, 64, rng.random());
                let mut shifted = nn.clone();
                let c: f64 = rng.random_range(-1e3..1e3);
                shifted.set_b2(nn.b2() + c);
                let a = ctx.energy_dissipation(Eval::Neural(&nn))?;
                let b = ctx.energy_dissipation(Eval::Neural(&shifted))?;
                if a.total.to_bits() != b.total.to_bits() || a.per_ensemble_residuals != b.per_ensemble_residuals {
                    return Ok(verdict(false, format!("{name} α={alpha} trial {trial}: {} vs {}", a.total, b.total)));
                }
                checked += 1;
            }
        }
    }
    Ok(verdict(true, format!("{checked} (dataset, α, ψ, c) cases bit-identical")))
}

fn c2_affinity() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for (ds, kc, _) in shaped_datasets() {
        let ctx0 = LossContext::new(&ds, &kc, &LossSpec::new(0.0, 0.125, [0.3, 0.8]))?;
        let ctx1 = ctx0.with_alpha(1.0)?;
        for _ in 0..3 {
            let nn = NeuralPotential::init(ds.dim, 64, rng.random());
            let alpha: f64 = rng.random_range(0.0..1.0);
            let r0 = ctx0.energy_dissipation(Eval::Neural(&nn))?.per_ensemble_residuals;
            let r1 = ctx1.energy_dissipation(Eval::Neural(&nn))?.per_ensemble_residuals;
            let ra = ctx0.with_alpha(alpha)?.energy_dissipation(Eval::Neural(&nn))?.per_ensemble_residuals;
            for q in 0..ra.len() {
                let lin = (1.0 - alpha) * r0[q] + alpha * r1[q];
                let scale = r0[q].abs().max(r1[q].abs()).max(1e-300);
                worst = worst.max((ra[q] - lin).abs() / scale);
            }
        }
    }
    Ok(verdict(worst <= 1e-12, format!("max relative deviation {worst:.2e}")))
}

fn c3_gradients() -> Result<Verdict> {
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (ds, kc, name) in shaped_datasets() {
        let ctx = LossContext::new(&ds, &kc, &LossSpec::new(0.5, 0.125, [0.3, 0.8]))?;
        for kind in [LossKind::EnergyAlpha, LossKind::PdeVelocity, LossKind::DifferentialForm] {
            let nn = NeuralPotential::init(ds.dim, 16, rng.random());
            let lv = ctx.evaluate(kind, Eval::Neural(&nn))?;
            for _ in 0..20 {
                let dir: Vec<f64> = (0..nn.params().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let at = |t: f64| -> Result<f64> {
                    let mut p = nn.clone();
                    for (w, dv) in p.params_mut().iter_mut().zip(&dir) {
                        *w += t * dv;
                    }
                    Ok(ctx.evaluate(kind, Eval::Neural(&p))?.total)
                };
                let h = 1e-5;
                let fd = (at(h)? - at(-h)?) / (2.0 * h);
                let an: f64 = lv.grad_theta.iter().zip(&dir).map(|(g, v)| g * v).sum();
                let rel = (fd - an).abs() / an.abs().max(1e-8);
                if rel > worst {
                    worst = rel;
                    if rel > 1e-4 {
                        log(format!("{name} {kind:?}: analytic {an} vs fd {fd}"));
                    }
                }
                count += 1;
            }
        }
    }
    Ok(verdict(worst <= 1e-4, format!("{count} directions over 3 losses × 4 shapes, max rel. err {worst:.2e}")))
}

fn c4_kde() -> Result<Verdict> {
    let kc = KernelConfig::new(0.05, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<f64> = (0..50).map(|_| 0.4 * rng.sample::<f64, _>(StandardNormal)).collect();
    let (lo, hi, n) = (-4.0, 4.0, 80_000);
    let step = (hi - lo) / n as f64;
    let f = |x: f64| density(&pts, &kc, &[x]).unwrap_or(0.0);
    let mut s = 0.5 * (f(lo) + f(hi));
    for k in 1..n {
        s += f(lo + k as f64 * step);
    }
    let mass = s * step;

    let kc2 = KernelConfig::new(0.1, 2)?;
    let cloud: Vec<f64> = (0..400).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let x = [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
        let g = grad_log_density(&cloud, &kc2, &x)?;
        for k in 0..2 {
            let h = 1e-5;
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let fd = (gradflow::kde::log_density(&cloud, &kc2, &xp)? - gradflow::kde::log_density(&cloud, &kc2, &xm)?) / (2.0 * h);
            worst = worst.max((g[k] - fd).abs() / g[k].abs().max(1e-3));
        }
    }
    let sym = grad_log_density(&[-0.07, 0.07], &kc, &[0.0])?[0];
    let pass = (mass - 1.0).abs() <= 1e-6 && worst <= 1e-6 && sym == 0.0;
    Ok(verdict(pass, format!("mass {mass:.9}, score FD rel. err {worst:.1e}, symmetric score {sym}")))
}

fn c5_de_giorgi() -> Result<Verdict> {
    let mut worst = 0.0f64;
    let cases = [
        (OuProcess { k: 1.0, kbt: 0.125, m0: 0.8, s0: 0.05 }, vec![0.8], 0.1, 0.6),
        (OuProcess { k: 2.0, kbt: 0.125, m0: -1.2, s0: 0.3 }, vec![0.3], 0.0, 0.5),
        (OuProcess { k: 0.5, kbt: 0.125, m0: 0.2, s0: 0.01 }, vec![1.5], 0.3, 0.8),
    ];
    for (p, c, tb, te) in cases {
        let trial = AnalyticPotential::quadratic(c);
        let f = Functionals::new(p, &trial, Resolution::default())?;
        let a = f.alpha_half_residual(tb, te);
        let b = f.completed_square(tb, te);
        worst = worst.max((a - b).abs() / b.abs());
    }
    Ok(verdict(worst <= 1e-3, format!("max relative gap {worst:.2e} over 3 OU cases")))
}

fn c6_simulator() -> Result<Verdict> {
    let base = |times: Vec<f64>, std: f64, seed: u64| SimConfig {
        dim: 1,
        kbt: 0.125,
        gamma: 1.0,
        dt: 1e-3,
        snapshot_times: times,
        n_particles: 100_000,
        init_means: vec![vec![0.0]],
        init_std: std,
        seed,
    };
    let var = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
    };
    let ou = simulate(&AnalyticPotential::quadratic(vec![0.5]), &base(vec![4.0], 1.0, 61))?;
    let v_ou = var(&ou.snapshot(0, 0).positions);
    let free = simulate(&AnalyticPotential::quadratic(vec![0.0]), &base(vec![1.0], 0.0, 62))?;
    let v_free = var(&free.snapshot(0, 0).positions);
    let e1 = (v_ou - 0.125).abs() / 0.125;
    let e2 = (v_free - 0.25).abs() / 0.25;
    Ok(verdict(
        e1 <= 0.05 && e2 <= 0.05,
        format!("OU variance {v_ou:.5} (rel. err {e1:.3}), free variance at t=1 {v_free:.5} (rel. err {e2:.3})"),
    ))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn c7_ot() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cloud = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    // translation
    let a = cloud(40, &mut rng);
    let t = [0.3, -0.2];
    let b: Vec<f64> = a.chunks(2).flat_map(|p| [p[0] + t[0], p[1] + t[1]]).collect();
    let v = ot_velocity(&a, &b, 2, 0.1, &VelocitySource::optimal_transport())?;
    let trans_err = v
        .chunks(2)
        .map(|r| (r[0] - 3.0).abs().max((r[1] + 2.0).abs()))
        .fold(0.0, f64::max);
    // Sinkhorn against brute force
    let (mut worst_cost, mut worst_marg) = (0.0f64, 0.0f64);
    for n in 2..=6 {
        for _ in 0..5 {
            let a = cloud(n, &mut rng);
            let b = cloud(n, &mut rng);
            let c = squared_cost(&a, &b, 2)?;
            let best = permutations(n).iter().map(|p| assignment_cost(&c, n, p)).fold(f64::INFINITY, f64::min);
            let eps = 1e-3 * ot::median_cost(&c);
            let plan = sinkhorn(&c, n, n, &SinkhornOptions::new(eps, 50_000))?;
            worst_cost = worst_cost.max((plan.cost(&c) - best).abs() / best);
            for m in plan.row_sums().into_iter().chain(plan.col_sums()) {
                worst_marg = worst_marg.max((m - 1.0 / n as f64).abs());
            }
        }
    }
    Ok(verdict(
        trans_err <= 1e-9 && worst_cost <= 0.02 && worst_marg <= 1e-6,
        format!("translation err {trans_err:.1e}, Sinkhorn cost gap {:.3}%, marginal err {worst_marg:.1e}", 100.0 * worst_cost),
    ))
}

/// Builds the benchmark data for `cfg` under `seed` and its loss context.
fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<(Resolved, LossContext)> {
    let mut c = cfg.clone();
    c.seed = seed;
    let r = c.resolve()?;
    let ds = r.build_dataset()?;
    let ctx = LossContext::new(&ds, &r.kernel, &r.train.loss)?;
    Ok((r, ctx))
}

/// Trains with the resolved settings on `ctx` and returns the gradient error.
fn train_error(r: &Resolved, ctx: &LossContext, kind: LossKind) -> Result<(NeuralPotential, f64)> {
    let mut tc = r.train.clone();
    tc.kind = kind;
    let init = NeuralPotential::init(r.sim.dim, tc.hidden, tc.seed);
    let out = train_with(ctx, init, &tc, |_, _| Ok(()))?;
    let e = weighted_grad_error(&out.model, &r.truth, r.sim.kbt, &r.eval)?;
    Ok((out.model, e))
}

fn c8_dw1d() -> Result<Verdict> {
    let cfg = bundled("dw1d.toml");
    let (pass, s) = over_seeds(
        3,
        |seed| {
            let (r, ctx) = prepare(&cfg, seed)?;
            let mut errs = Vec::new();
            for alpha in [0.5, 1.0, 0.0] {
                errs.push(train_error(&r, &ctx.with_alpha(alpha)?, LossKind::EnergyAlpha)?.1);
            }
            Ok(errs)
        },
        |m| m[0] <= 0.25 && m[1] <= 0.25 && m[2] >= 2.0 * m[0],
    )?;
    let m = medians(&s);
    Ok(verdict(
        pass,
        format!(
            "median errors α=½ {:.3}, α=1 {:.3}, α=0 {:.3} (need ≤ 0.25, ≤ 0.25, ≥ 2×α=½); per seed {s:?}",
            m[0], m[1], m[2]
        ),
    ))
}

fn c9_qw2d_window() -> Result<Verdict> {
    let mut cfg = bundled("qw2d.toml");
    cfg.sim.snapshot_times = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    cfg.loss.window = [0.1, 0.6];
    let (pass, s) = over_seeds(
        2,
        |seed| {
            let (r, ctx) = prepare(&cfg, seed)?;
            let half = train_error(&r, &ctx.with_alpha(0.5)?, LossKind::EnergyAlpha)?.1;
            let one = train_error(&r, &ctx.with_alpha(1.0)?, LossKind::EnergyAlpha)?.1;
            Ok(vec![half, one])
        },
        |m| m[0] <= m[1],
    )?;
    let m = medians(&s);
    Ok(verdict(pass, format!("window [0.1, 0.6]: median α=½ {:.3} vs α=1 {:.3}; per seed {s:?}", m[0], m[1])))
}

fn c10_qw2d_noise() -> Result<Verdict> {
    let cfg = bundled("qw2d_noise.toml");
    let (pass, s) = over_seeds(
        2,
        |seed| {
            let mut errs = Vec::new();
            for sigma in [0.1, 0.4] {
                let mut c = cfg.clone();
                c.noise_sigma = sigma;
                let (r, ctx) = prepare(&c, seed)?;
                errs.push(train_error(&r, &ctx, LossKind::EnergyAlpha)?.1);
            }
            Ok(errs)
        },
        |m| m[1] <= 1.5 * m[0],
    )?;
    let m = medians(&s);
    Ok(verdict(
        pass,
        format!("median α=½ error σ=0.1 {:.3}, σ=0.4 {:.3} (ratio {:.2}, need ≤ 1.5); per seed {s:?}", m[0], m[1], m[1] / m[0]),
    ))
}

fn c11_mm3d() -> Result<Verdict> {
    let cfg = bundled("mm3d.toml");
    log(format!("3D run at N = {} per ensemble, gradient-error threshold 0.35", cfg.sim.n_particles));
    let (pass, s) = over_seeds(
        2,
        |seed| {
            let (r, ctx) = prepare(&cfg, seed)?;
            let (model, e) = train_error(&r, &ctx, LossKind::EnergyAlpha)?;
            let resim = r.eval.resim_config(&r.sim);
            let truth = eval::energy_rate_curve(&r.truth, &resim, &r.kernel)?;
            let learned = eval::energy_rate_curve(&model, &resim, &r.kernel)?;
            let disc = eval::curve_discrepancy(&truth, &learned)?;
            log(format!("seed {seed}: true dE/dt {:?}, learned {:?}", truth.rate, learned.rate));
            Ok(vec![e, disc])
        },
        |m| m[0] <= 0.35 && m[1] <= 0.20,
    )?;
    let m = medians(&s);
    Ok(verdict(
        pass,
        format!("median gradient error {:.3} (≤ 0.35), energy-rate discrepancy {:.3} (≤ 0.20); per seed {s:?}", m[0], m[1]),
    ))
}

fn c12_perturbed() -> Result<Verdict> {
    let cfg = bundled("perturbed1d.toml");
    let (pass, s) = over_seeds(
        2,
        |seed| {
            let (r, ctx) = prepare(&cfg, seed)?;
            let energy = train_error(&r, &ctx, LossKind::EnergyAlpha)?.1;
            let pde = train_error(&r, &ctx, LossKind::PdeVelocity)?.1;
            Ok(vec![energy, pde])
        },
        |m| m[0] < m[1],
    )?;
    let m = medians(&s);
    Ok(verdict(pass, format!("λ=0.8: median energy-loss error {:.3} vs PDE-loss error {:.3}; per seed {s:?}", m[0], m[1])))
}

fn c13_determinism() -> Result<Verdict> {
    let cfg = bundled("dw1d.toml");
    let tmp = tempfile::tempdir().expect("temp dir");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    experiment::run_pipeline(&cfg, Some(&a))?;
    experiment::run_pipeline(&cfg, Some(&b))?;
    let ma = std::fs::read(a.join("metrics.json")).expect("metrics");
    let mb = std::fs::read(b.join("metrics.json")).expect("metrics");
    let ca = std::fs::read(a.join("checkpoints/final.json")).expect("checkpoint");
    let cb = std::fs::read(b.join("checkpoints/final.json")).expect("checkpoint");
    Ok(verdict(ma == mb && ca == cb, format!("metrics.json {} bytes, identical: {}; final checkpoints identical: {}", ma.len(), ma == mb, ca == cb)))
}

type Criterion = (usize, &'static str, fn() -> Result<Verdict>);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "gauge invariance", c1_gauge),
        (2, "alpha affinity", c2_affinity),
        (3, "gradient oracle", c3_gradients),
        (4, "kde suite", c4_kde),
        (5, "de giorgi equivalence", c5_de_giorgi),
        (6, "simulator physics", c6_simulator),
        (7, "ot suite", c7_ot),
        (8, "1d double well alpha ranking", c8_dw1d),
        (9, "2d window robustness", c9_qw2d_window),
        (10, "2d noise robustness", c10_qw2d_noise),
        (11, "3d benchmark", c11_mm3d),
        (12, "perturbation: energy vs pde loss", c12_perturbed),
        (13, "pipeline determinism", c13_determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut results = Vec::new();
    for (id, name, run) in criteria {
        if let Some(o) = &only {
            if !o.contains(&id) {
                continue;
            }
        }
        eprintln!("criterion {id}: {name}");
        let t = Instant::now();
        let v = run().unwrap_or_else(|e| verdict(false, format!("error: {e}")));
        let line = format!(
            "criterion {id:>2} [{}] {name}: {} ({:.0}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        println!("{line}");
        results.push(v.pass);
    }
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
}

//! Metrics for a learned potential: equilibrium-weighted gradient error,
//! energy-rate curves and Wasserstein distances from re-simulation, and
//! lattice exports.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kde::{evaluate_at_particles, KernelConfig};
use crate::ot;
use crate::potentials::Potential;
use crate::sde::{simulate, ParticleDataset, SimConfig};

/// Largest cloud size solved by exact assignment in [`wasserstein2`].
pub const EXACT_W2_LIMIT: usize = 256;

/// Temperature of the equilibrium weight in the gradient error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqWeight {
    /// `e^{-ψ}`.
    #[default]
    Literal,
    /// `e^{-ψ/kBT}`.
    KbtScaled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Every axis of the evaluation box spans `[domain[0], domain[1]]`.
    #[serde(default = "default_domain")]
    pub domain: [f64; 2],
    /// Tensor-grid nodes per axis for d ≤ 2 (default 401 in 1D, 201 in 2D).
    #[serde(default)]
    pub grid_points: Option<usize>,
    /// Importance samples for d ≥ 3.
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub weight: EqWeight,
    #[serde(default)]
    pub seed: u64,
    /// Re-simulate both potentials and compare energy-rate curves.
    #[serde(default)]
    pub energy_rate: bool,
    /// Re-simulate both potentials and track W₂ between the clouds.
    #[serde(default)]
    pub wasserstein: bool,
    /// Particles per ensemble in re-simulations (default: the data's count,
    /// capped at 2000).
    #[serde(default)]
    pub resim_particles: Option<usize>,
    /// Use only the first few ensembles of the data config.
    #[serde(default)]
    pub resim_ensembles: Option<usize>,
    /// Output times of re-simulations (default: the data's).
    #[serde(default)]
    pub resim_times: Option<Vec<f64>>,
    #[serde(default = "default_w2_points")]
    pub wasserstein_points: usize,
    /// Lattice nodes per axis of the exported grid.
    #[serde(default)]
    pub export_resolution: Option<usize>,
}

fn default_domain() -> [f64; 2] {
    [-2.0, 2.0]
}
fn default_samples() -> usize {
    200_000
}
fn default_w2_points() -> usize {
    EXACT_W2_LIMIT
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            domain: default_domain(),
            grid_points: None,
            n_samples: default_samples(),
            weight: EqWeight::Literal,
            seed: 0,
            energy_rate: false,
            wasserstein: false,
            resim_particles: None,
            resim_ensembles: None,
            resim_times: None,
            wasserstein_points: default_w2_points(),
            export_resolution: None,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.domain[0] < self.domain[1] && self.domain.iter().all(|v| v.is_finite())) {
            return Err(Error::config("eval.domain", "need finite lo < hi"));
        }
        if matches!(self.grid_points, Some(n) if n < 2) {
            return Err(Error::config("eval.grid_points", "must be at least 2"));
        }
        if self.n_samples == 0 {
            return Err(Error::config("eval.n_samples", "must be at least 1"));
        }
        if matches!(self.resim_particles, Some(n) if n < 2) {
            return Err(Error::config("eval.resim_particles", "must be at least 2"));
        }
        if matches!(self.resim_ensembles, Some(0)) {
            return Err(Error::config("eval.resim_ensembles", "must be at least 1"));
        }
        if self.wasserstein_points < 2 {
            return Err(Error::config("eval.wasserstein_points", "must be at least 2"));
        }
        if matches!(self.export_resolution, Some(n) if n < 2) {
            return Err(Error::config("eval.export_resolution", "must be at least 2"));
        }
        Ok(())
    }

    fn grid_points_for(&self, d: usize) -> usize {
        self.grid_points.unwrap_or(if d == 1 { 401 } else { 201 })
    }

    fn export_resolution_for(&self, d: usize) -> usize {
        self.export_resolution.unwrap_or(match d {
            1 => 401,
            2 => 101,
            _ => 21,
        })
    }

    /// Simulation settings used for re-simulation, derived from the data's.
    pub fn resim_config(&self, data: &SimConfig) -> SimConfig {
        let mut c = data.clone();
        c.n_particles = self.resim_particles.unwrap_or(data.n_particles.min(2000));
        if let Some(q) = self.resim_ensembles {
            c.init_means.truncate(q);
        }
        if let Some(t) = &self.resim_times {
            c.snapshot_times = t.clone();
        }
        c.seed = self.seed;
        c
    }
}

/// Nodes of the tensor lattice `{lo + k·step}^d`, row-major.
fn lattice(d: usize, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    let total = n.pow(d as u32);
    let mut out = Vec::with_capacity(total * d);
    for idx in 0..total {
        let mut r = idx;
        let mut p = vec![0.0; d];
        for k in (0..d).rev() {
            p[k] = lo + (r % n) as f64 * step;
            r /= n;
        }
        out.extend(p);
    }
    out
}

/// Trapezoid weight (up to the cell volume) of lattice node `idx`.
fn trapezoid_log_weight(idx: usize, d: usize, n: usize) -> f64 {
    let mut r = idx;
    let mut lw = 0.0;
    for _ in 0..d {
        let k = r % n;
        if k == 0 || k == n - 1 {
            lw -= std::f64::consts::LN_2;
        }
        r /= n;
    }
    lw
}

/// `‖∇ψ_L − ∇ψ_T‖ / ‖∇ψ_T‖` in `L²(ρ_eq)`, `ρ_eq ∝ e^{−ψ_T}` (or
/// `e^{−ψ_T/kBT}`) restricted to the evaluation box.
///
/// Integrals are trapezoid sums on a tensor grid for d ≤ 2 and
/// self-normalized importance sampling from the uniform box for d ≥ 3.
pub fn weighted_grad_error<L, T>(learned: &L, truth: &T, kbt: f64, opts: &EvalOptions) -> Result<f64>
where
    L: Potential + ?Sized,
    T: Potential + ?Sized,
{
    opts.validate()?;
    let d = truth.dim();
    check_dim(d, learned.dim())?;
    let [lo, hi] = opts.domain;
    let temp = match opts.weight {
        EqWeight::Literal => 1.0,
        EqWeight::KbtScaled => kbt,
    };
    if !(temp > 0.0) {
        return Err(Error::config("sim.kbt", "must be positive for the scaled weight"));
    }
    let (points, log_q): (Vec<f64>, Vec<f64>) = if d <= 2 {
        let n = opts.grid_points_for(d);
        let pts = lattice(d, lo, hi, n);
        let lq = (0..pts.len() / d).map(|i| trapezoid_log_weight(i, d, n)).collect();
        (pts, lq)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let pts = (0..opts.n_samples * d).map(|_| rng.random_range(lo..hi)).collect();
        (pts, vec![0.0; opts.n_samples])
    };

    // (log weight, |∇ψ_L − ∇ψ_T|², |∇ψ_T|²) per node
    let terms: Vec<(f64, f64, f64)> = points
        .par_chunks_exact(d)
        .zip(log_q.par_iter())
        .map(|(x, lq)| {
            let mut gt = vec![0.0; d];
            let mut gl = vec![0.0; d];
            truth.gradient_into(x, &mut gt);
            learned.gradient_into(x, &mut gl);
            let diff: f64 = gl.iter().zip(&gt).map(|(a, b)| (a - b) * (a - b)).sum();
            let norm: f64 = gt.iter().map(|v| v * v).sum();
            (lq - truth.shape_value(x) / temp, diff, norm)
        })
        .collect();
    let top = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::DegenerateNormalizer);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &(lw, diff, norm) in &terms {
        let w = (lw - top).exp();
        num += w * diff;
        den += w * norm;
    }
    if !(den > 0.0 && den.is_finite() && num.is_finite()) {
        return Err(Error::DegenerateNormalizer);
    }
    Ok((num / den).sqrt())
}

/// `dE/dt` at the interior output times of a re-simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRateCurve {
    pub times: Vec<f64>,
    /// Ensemble mean of the centered-difference rate.
    pub rate: Vec<f64>,
    /// Standard error of `rate` over particles.
    pub stderr: Vec<f64>,
}

/// Free-energy rate of change along a dataset's snapshots.
///
/// Per particle, `e_j = kBT ln ρ̂(x_j) + ψ(x_j)`; the rate at `t_i` is the
/// centered difference `(e_j(t_{i+1}) − e_j(t_{i−1})) / (t_{i+1} − t_{i−1})`
/// averaged over particles, and its spread gives the standard error.
pub fn energy_rate_from_dataset<P: Potential + ?Sized>(
    ds: &ParticleDataset,
    pot: &P,
    kc: &KernelConfig,
    kbt: f64,
) -> Result<EnergyRateCurve> {
    check_dim(ds.dim, pot.dim())?;
    check_dim(ds.dim, kc.dim)?;
    let m = ds.n_times();
    if m < 3 {
        return Err(Error::config("eval.resim_times", "energy rates need at least three output times"));
    }
    let d = ds.dim;
    let n = ds.n_particles;
    let q_count = ds.n_ensembles;
    // per (q, i): per-particle energies
    let energies: Vec<Vec<f64>> = (0..q_count * m)
        .map(|qi| {
            let x = &ds.snapshots[qi].positions;
            let ev = evaluate_at_particles(x, kc)?;
            Ok(ev
                .log_density
                .iter()
                .zip(x.chunks_exact(d))
                .map(|(l, p)| kbt * l + pot.shape_value(p))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut curve = EnergyRateCurve {
        times: Vec::new(),
        rate: Vec::new(),
        stderr: Vec::new(),
    };
    for i in 1..m - 1 {
        let span = ds.times[i + 1] - ds.times[i - 1];
        let (mut mean, mut var) = (0.0, 0.0);
        for q in 0..q_count {
            let a = &energies[q * m + i - 1];
            let b = &energies[q * m + i + 1];
            let r: Vec<f64> = a.iter().zip(b).map(|(x, y)| (y - x) / span).collect();
            let mu = r.iter().sum::<f64>() / n as f64;
            let s2 = r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1) as f64;
            mean += mu;
            var += s2 / n as f64;
        }
        curve.times.push(ds.times[i]);
        curve.rate.push(mean / q_count as f64);
        curve.stderr.push(var.sqrt() / q_count as f64);
    }
    Ok(curve)
}

/// Simulates `pot` under `cfg` and returns its energy-rate curve.
pub fn energy_rate_curve<P: Potential + ?Sized>(pot: &P, cfg: &SimConfig, kc: &KernelConfig) -> Result<EnergyRateCurve> {
    let ds = simulate(pot, cfg)?;
    energy_rate_from_dataset(&ds, pot, kc, cfg.kbt)
}

/// `max_i |a_i − b_i| / max_i |a_i|` over all but the first output point.
pub fn curve_discrepancy(truth: &EnergyRateCurve, other: &EnergyRateCurve) -> Result<f64> {
    check_dim(truth.rate.len(), other.rate.len())?;
    if truth.rate.len() < 2 {
        return Err(Error::Empty("energy-rate curve after the first point"));
    }
    let scale = truth.rate[1..].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let diff = truth.rate[1..]
        .iter()
        .zip(&other.rate[1..])
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    if !(scale > 0.0) {
        return Err(Error::DegenerateNormalizer);
    }
    Ok(diff / scale)
}

fn subsample(cloud: &[f64], d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = cloud.len() / d;
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx.iter().flat_map(|&j| cloud[j * d..(j + 1) * d].iter().copied()).collect()
}

/// 2-Wasserstein distance between two uniform clouds.
///
/// The larger cloud is subsampled (seeded) to the smaller one's size. Exact
/// assignment is used up to [`EXACT_W2_LIMIT`] points and the debiased
/// Sinkhorn divergence at a small ε beyond.
pub fn wasserstein2(a: &[f64], b: &[f64], d: usize, seed: u64) -> Result<f64> {
    if d == 0 || a.is_empty() || b.is_empty() {
        return Err(Error::Empty("wasserstein clouds"));
    }
    check_dim(0, a.len() % d)?;
    check_dim(0, b.len() % d)?;
    let (na, nb) = (a.len() / d, b.len() / d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = match na.cmp(&nb) {
        std::cmp::Ordering::Greater => (subsample(a, d, nb, &mut rng), b.to_vec()),
        std::cmp::Ordering::Less => (a.to_vec(), subsample(b, d, na, &mut rng)),
        std::cmp::Ordering::Equal => (a.to_vec(), b.to_vec()),
    };
    let n = na.min(nb);
    if n <= EXACT_W2_LIMIT {
        let cost = ot::squared_cost(&a, &b, d)?;
        let perm = ot::assignment(&cost, n)?;
        return Ok(ot::assignment_cost(&cost, n, &perm).max(0.0).sqrt());
    }
    let scale = ot::median_cost(&ot::squared_cost(&a, &b, d)?);
    let opts = ot::SinkhornOptions::new((1e-3 * scale).max(1e-12), 20_000);
    Ok(ot::sinkhorn_divergence(&a, &b, d, &opts)?.max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WassersteinSeries {
    pub times: Vec<f64>,
    /// Ensemble mean of W₂ at each time.
    pub distances: Vec<f64>,
}

/// W₂ between matched snapshots of two datasets of the same shape, on
/// `points` particles per ensemble (the same indices in both).
pub fn wasserstein_between(a: &ParticleDataset, b: &ParticleDataset, points: usize, seed: u64) -> Result<WassersteinSeries> {
    check_dim(a.dim, b.dim)?;
    check_dim(a.n_ensembles, b.n_ensembles)?;
    check_dim(a.n_times(), b.n_times())?;
    check_dim(a.n_particles, b.n_particles)?;
    let d = a.dim;
    let k = points.min(a.n_particles);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, a.n_particles, k).into_vec();
    idx.sort_unstable();
    let pick = |x: &[f64]| -> Vec<f64> { idx.iter().flat_map(|&j| x[j * d..(j + 1) * d].iter().copied()).collect() };
    let m = a.n_times();
    let per: Vec<f64> = (0..a.n_ensembles * m)
        .into_par_iter()
        .map(|qi| {
            let xa = pick(&a.snapshots[qi].positions);
            let xb = pick(&b.snapshots[qi].positions);
            wasserstein2(&xa, &xb, d, seed)
        })
        .collect::<Result<_>>()?;
    let distances = (0..m)
        .map(|i| (0..a.n_ensembles).map(|q| per[q * m + i]).sum::<f64>() / a.n_ensembles as f64)
        .collect();
    Ok(WassersteinSeries {
        times: a.times.clone(),
        distances,
    })
}

/// Simulates both potentials from identical initial draws and noise and
/// tracks W₂ between the clouds.
pub fn wasserstein_series<A, B>(learned: &A, truth: &B, cfg: &SimConfig, points: usize) -> Result<WassersteinSeries>
where
    A: Potential + ?Sized,
    B: Potential + ?Sized,
{
    let a = simulate(learned, cfg)?;
    let b = simulate(truth, cfg)?;
    wasserstein_between(&a, &b, points, cfg.seed)
}

/// Values of both potentials on a lattice, the learned one shifted by the
/// mean difference so both share a gauge.
#[derive(Clone, Debug, PartialEq)]
pub struct GridExport {
    pub dim: usize,
    /// Row-major `n × d`.
    pub points: Vec<f64>,
    pub truth: Vec<f64>,
    pub learned: Vec<f64>,
}

impl GridExport {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.dim).map(|k| format!("x_{k}")).collect();
        header.push("psi_true".into());
        header.push("psi_learned".into());
        w.write_record(&header)?;
        for (i, x) in self.points.chunks_exact(self.dim).enumerate() {
            let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            row.push(self.truth[i].to_string());
            row.push(self.learned[i].to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn export_grid<L, T>(learned: &L, truth: &T, domain: [f64; 2], resolution: usize) -> Result<GridExport>
where
    L: Potential + ?Sized,
    T: Potential + ?Sized,
{
    let d = truth.dim();
    check_dim(d, learned.dim())?;
    if d > 3 {
        return Err(Error::Unsupported {
            field: "eval.export_grid",
            dim: d,
        });
    }
    if resolution < 2 {
        return Err(Error::config("eval.export_resolution", "must be at least 2"));
    }
    let points = lattice(d, domain[0], domain[1], resolution);
    let st: Vec<f64> = points.par_chunks_exact(d).map(|x| truth.shape_value(x)).collect();
    let sl: Vec<f64> = points.par_chunks_exact(d).map(|x| learned.shape_value(x)).collect();
    let shift = st.iter().zip(&sl).map(|(a, b)| a - b).sum::<f64>() / st.len() as f64;
    let off = truth.offset();
    Ok(GridExport {
        dim: d,
        truth: st.iter().map(|v| v + off).collect(),
        learned: sl.iter().map(|v| v + shift + off).collect(),
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRateComparison {
    pub truth: EnergyRateCurve,
    pub learned: EnergyRateCurve,
    pub discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub grad_error: f64,
    pub energy_rate: Option<EnergyRateComparison>,
    pub wasserstein: Option<WassersteinSeries>,
    pub grid: GridExport,
}

/// Scalar summary written to `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub grad_error: f64,
    #[serde(default)]
    pub energy_rate_discrepancy: Option<f64>,
    #[serde(default)]
    pub wasserstein_final: Option<f64>,
    #[serde(default)]
    pub final_loss: Option<f64>,
    #[serde(default)]
    pub per_ensemble_residuals: Option<Vec<f64>>,
}

impl EvalReport {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            grad_error: self.grad_error,
            energy_rate_discrepancy: self.energy_rate.as_ref().map(|c| c.discrepancy),
            wasserstein_final: self.wasserstein.as_ref().and_then(|w| w.distances.last().copied()),
            final_loss: None,
            per_ensemble_residuals: None,
        }
    }

    /// Writes the CSV exports (`grid_export.csv`, and `energy_rate.csv` /
    /// `wasserstein.csv` when computed) into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.grid.write_csv(&dir.join("grid_export.csv"))?;
        if let Some(c) = &self.energy_rate {
            let p = dir.join("energy_rate.csv");
            let mut w = csv::Writer::from_path(&p)?;
            w.write_record(["t", "rate_true", "stderr_true", "rate_learned", "stderr_learned"])?;
            for i in 0..c.truth.times.len() {
                w.write_record([
                    c.truth.times[i].to_string(),
                    c.truth.rate[i].to_string(),
                    c.truth.stderr[i].to_string(),
                    c.learned.rate[i].to_string(),
                    c.learned.stderr[i].to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(&p, e))?;
        }
        if let Some(s) = &self.wasserstein {
            let p = dir.join("wasserstein.csv");
            let mut w = csv::Writer::from_path(&p)?;
            w.write_record(["t", "w2"])?;
            for (t, v) in s.times.iter().zip(&s.distances) {
                w.write_record([t.to_string(), v.to_string()])?;
            }
            w.flush().map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Runs every enabled evaluation of `learned` against `truth`. `data` is the
/// simulation config of the training data, the template for re-simulation.
pub fn evaluate<L, T>(learned: &L, truth: &T, data: &SimConfig, kc: &KernelConfig, opts: &EvalOptions) -> Result<EvalReport>
where
    L: Potential + ?Sized,
    T: Potential + ?Sized,
{
    opts.validate()?;
    let grad_error = weighted_grad_error(learned, truth, data.kbt, opts)?;
    let resim = opts.resim_config(data);
    let (mut energy_rate, mut wasserstein) = (None, None);
    if opts.energy_rate || opts.wasserstein {
        let a = simulate(learned, &resim)?;
        let b = simulate(truth, &resim)?;
        if opts.energy_rate {
            let t = energy_rate_from_dataset(&b, truth, kc, resim.kbt)?;
            let l = energy_rate_from_dataset(&a, learned, kc, resim.kbt)?;
            let discrepancy = curve_discrepancy(&t, &l)?;
            energy_rate = Some(EnergyRateComparison {
                truth: t,
                learned: l,
                discrepancy,
            });
        }
        if opts.wasserstein {
            wasserstein = Some(wasserstein_between(&a, &b, opts.wasserstein_points, resim.seed)?);
        }
    }
    let grid = export_grid(learned, truth, opts.domain, opts.export_resolution_for(truth.dim().min(3)))?;
    Ok(EvalReport {
        grad_error,
        energy_rate,
        wasserstein,
        grid,
    })
}

//! Discretized free energy, dissipation and the residual losses built from
//! them.
//!
//! Everything that depends only on the data (log-densities and scores of the
//! smoothed empirical measures, velocity energies) is computed once in a
//! [`LossContext`]; evaluating a loss then only touches the potential.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kde::{evaluate_at_particles, KernelConfig};
use crate::potentials::{NeuralPotential, Potential, PotentialModel};
use crate::sde::ParticleDataset;

/// How the time integral of the dissipation is approximated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// `Δs` times the sum over every snapshot in the window.
    PaperLiteral,
    /// Trapezoidal rule (endpoint weights halved).
    Trapezoid,
    /// Left Riemann sum (the last snapshot gets weight zero).
    LeftRiemann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    EnergyAlpha,
    PdeVelocity,
    DifferentialForm,
}

/// Summation strategy for the per-particle terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Fixed chunking and ordered accumulation: bit-reproducible for any
    /// thread count.
    #[default]
    Deterministic,
    /// Thread-local accumulation; the last bits depend on scheduling.
    Fast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub alpha: f64,
    #[serde(default = "default_kbt")]
    pub kbt: f64,
    /// `[T_b, T_e]`; both must be snapshot times.
    pub window: [f64; 2],
    #[serde(default = "default_quadrature")]
    pub quadrature: Quadrature,
    /// Snapshot spacing; inferred from the window when absent.
    #[serde(default)]
    pub delta_s: Option<f64>,
}

fn default_kbt() -> f64 {
    crate::sde::DEFAULT_KBT
}

fn default_quadrature() -> Quadrature {
    Quadrature::PaperLiteral
}

impl LossSpec {
    pub fn new(alpha: f64, kbt: f64, window: [f64; 2]) -> Self {
        Self {
            alpha,
            kbt,
            window,
            quadrature: Quadrature::PaperLiteral,
            delta_s: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("loss.alpha", format!("{} is outside [0, 1]", self.alpha)));
        }
        if !(self.kbt >= 0.0 && self.kbt.is_finite()) {
            return Err(Error::config("loss.kbt", "must be finite and non-negative"));
        }
        if !(self.window[0] < self.window[1]) {
            return Err(Error::config("loss.window", "T_b must be smaller than T_e"));
        }
        if let Some(ds) = self.delta_s {
            if !(ds > 0.0 && ds.is_finite()) {
                return Err(Error::config("loss.delta_s", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Loss total with its decomposition and parameter gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    /// One entry per ensemble, with `total = Σ_q r_q²`.
    pub per_ensemble_residuals: Vec<f64>,
    /// Empty unless the potential is a neural network.
    pub grad_theta: Vec<f64>,
}

/// Data-only quantities of one snapshot.
#[derive(Clone, Debug)]
struct Features {
    positions: Vec<f64>,
    /// `(1/N) Σ_j ln ρ̂(x_j)`.
    mean_log_density: f64,
    /// `kBT ∇ln ρ̂(x_j)`, `N × d`.
    score: Vec<f64>,
    /// `(1/N) Σ_j |v_j|²`.
    mean_speed_sq: Option<f64>,
    /// `v_j + kBT ∇ln ρ̂(x_j)`.
    velocity_target: Option<Vec<f64>>,
}

/// Rows per work item. Fixed so that deterministic sums do not depend on the
/// thread count.
const CHUNK: usize = 512;

#[derive(Clone, Copy, Debug)]
enum Term {
    /// `Σ ψ_shape(x_j)`
    Shape,
    /// `Σ |kBT ∇ln ρ̂ + ∇ψ|²`
    Score,
    /// `Σ |v + kBT ∇ln ρ̂ + ∇ψ|²`
    Velocity,
}

#[derive(Clone, Copy, Debug)]
struct Job {
    group: usize,
    feature: usize,
    term: Term,
    scale: f64,
    rows: (usize, usize),
}

/// How group sums combine into the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Combine {
    /// `Σ_g r_g²`
    Squares,
    /// `Σ_g r_g`
    Sum,
}

/// Precomputed data for evaluating losses on one dataset.
#[derive(Clone, Debug)]
pub struct LossContext {
    spec: LossSpec,
    dim: usize,
    n_ensembles: usize,
    n_particles: usize,
    times: Vec<f64>,
    delta_s: f64,
    weights: Vec<f64>,
    /// Indexed `q * times.len() + i` over the window.
    features: Vec<Features>,
    pub reduction: Reduction,
}

fn window_indices(ds: &ParticleDataset, window: [f64; 2]) -> Result<(usize, usize)> {
    let ib = ds
        .time_index(window[0])
        .ok_or_else(|| Error::config("loss.window", format!("T_b = {} is not a snapshot time", window[0])))?;
    let ie = ds
        .time_index(window[1])
        .ok_or_else(|| Error::config("loss.window", format!("T_e = {} is not a snapshot time", window[1])))?;
    if ib >= ie {
        return Err(Error::config("loss.window", "T_b must precede T_e"));
    }
    Ok((ib, ie))
}

fn quadrature_weights(rule: Quadrature, count: usize, ds: f64) -> Vec<f64> {
    let mut w = vec![ds; count];
    match rule {
        Quadrature::PaperLiteral => {}
        Quadrature::Trapezoid => {
            w[0] *= 0.5;
            w[count - 1] *= 0.5;
        }
        Quadrature::LeftRiemann => w[count - 1] = 0.0,
    }
    w
}

impl LossContext {
    /// Same data and features under a different α.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.alpha = alpha;
        spec.validate()?;
        Ok(Self { spec, ..self.clone() })
    }

    pub fn new(ds: &ParticleDataset, kc: &KernelConfig, spec: &LossSpec) -> Result<Self> {
        spec.validate()?;
        kc.validate()?;
        check_dim(ds.dim, kc.dim)?;
        ds.validate()?;
        if ds.n_particles == 0 || ds.n_ensembles == 0 {
            return Err(Error::Empty("loss needs particles"));
        }
        let (ib, ie) = window_indices(ds, spec.window)?;
        let times = ds.times[ib..=ie].to_vec();
        let delta_s = match spec.delta_s {
            Some(v) => v,
            None => {
                let h = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
                let uniform = times.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9);
                if !uniform {
                    return Err(Error::config(
                        "loss.delta_s",
                        "snapshots in the window are not evenly spaced; set delta_s",
                    ));
                }
                h
            }
        };
        let weights = quadrature_weights(spec.quadrature, times.len(), delta_s);
        let n = ds.n_particles;
        let mut features = Vec::with_capacity(ds.n_ensembles * times.len());
        for q in 0..ds.n_ensembles {
            for i in ib..=ie {
                let s = ds.snapshot(q, i);
                let ev = evaluate_at_particles(&s.positions, kc)?;
                let mean_log_density = ev.log_density.iter().sum::<f64>() / n as f64;
                let score: Vec<f64> = ev.grad_log_density.iter().map(|g| spec.kbt * g).collect();
                let (mean_speed_sq, velocity_target) = match &s.velocities {
                    Some(v) => (
                        Some(v.iter().map(|x| x * x).sum::<f64>() / n as f64),
                        Some(v.iter().zip(&score).map(|(a, b)| a + b).collect()),
                    ),
                    None => (None, None),
                };
                features.push(Features {
                    positions: s.positions.clone(),
                    mean_log_density,
                    score,
                    mean_speed_sq,
                    velocity_target,
                });
            }
        }
        Ok(Self {
            spec: spec.clone(),
            dim: ds.dim,
            n_ensembles: ds.n_ensembles,
            n_particles: n,
            times,
            delta_s,
            weights,
            features,
            reduction: Reduction::Deterministic,
        })
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_ensembles(&self) -> usize {
        self.n_ensembles
    }

    /// Snapshot times inside the window.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn delta_s(&self) -> f64 {
        self.delta_s
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn feature(&self, q: usize, i: usize) -> &Features {
        &self.features[q * self.times.len() + i]
    }

    fn feature_index(&self, q: usize, i: usize) -> usize {
        q * self.times.len() + i
    }

    fn has_velocities(&self) -> bool {
        self.features.iter().all(|f| f.mean_speed_sq.is_some())
    }

    fn push_jobs(&self, jobs: &mut Vec<Job>, group: usize, feature: usize, term: Term, scale: f64) {
        let n = self.n_particles;
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            jobs.push(Job {
                group,
                feature,
                term,
                scale,
                rows: (start, end),
            });
            start = end;
        }
    }

    /// Runs the jobs and returns per-group sums and (for neural potentials)
    /// per-group gradients.
    fn run(&self, jobs: &[Job], groups: usize, pot: Eval<'_>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.dim;
        let p = pot.param_count();
        let work = |job: &Job, grad: &mut [f64], scratch: &mut Option<crate::potentials::Scratch>| -> f64 {
            let f = &self.features[job.feature];
            let (a, b) = (job.rows.0 * d, job.rows.1 * d);
            let xs = &f.positions[a..b];
            let target = match job.term {
                Term::Shape => None,
                Term::Score => Some(&f.score[a..b]),
                Term::Velocity => Some(&f.velocity_target.as_ref().expect("checked by caller")[a..b]),
            };
            match (pot, target) {
                (Eval::Neural(nn), None) => {
                    let s = scratch.get_or_insert_with(|| nn.scratch());
                    job.scale * nn.shape_batch(xs, job.scale, grad, s)
                }
                (Eval::Neural(nn), Some(gs)) => {
                    let s = scratch.get_or_insert_with(|| nn.scratch());
                    job.scale * nn.score_batch(xs, gs, job.scale, grad, s)
                }
                (Eval::Generic(pt), None) => {
                    job.scale * xs.chunks_exact(d).map(|x| pt.shape_value(x)).sum::<f64>()
                }
                (Eval::Generic(pt), Some(gs)) => {
                    let mut g = vec![0.0; d];
                    let mut total = 0.0;
                    for (x, t) in xs.chunks_exact(d).zip(gs.chunks_exact(d)) {
                        pt.gradient_into(x, &mut g);
                        total += g.iter().zip(t).map(|(a, b)| (a + b) * (a + b)).sum::<f64>();
                    }
                    job.scale * total
                }
            }
        };
        let mut values = vec![0.0; groups];
        let mut grads = vec![vec![0.0; p]; groups];
        match self.reduction {
            Reduction::Deterministic => {
                let partial: Vec<(f64, Vec<f64>)> = jobs
                    .par_iter()
                    .map_init(
                        || None,
                        |scratch, job| {
                            let mut g = vec![0.0; p];
                            let v = work(job, &mut g, scratch);
                            (v, g)
                        },
                    )
                    .collect();
                for (job, (v, g)) in jobs.iter().zip(partial) {
                    values[job.group] += v;
                    for (a, b) in grads[job.group].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
            }
            Reduction::Fast => {
                let (v, g) = jobs
                    .par_iter()
                    .fold(
                        || (vec![0.0; groups], vec![vec![0.0; p]; groups], None),
                        |(mut vs, mut gs, mut scratch), job| {
                            vs[job.group] += work(job, &mut gs[job.group], &mut scratch);
                            (vs, gs, scratch)
                        },
                    )
                    .map(|(v, g, _)| (v, g))
                    .reduce(
                        || (vec![0.0; groups], vec![vec![0.0; p]; groups]),
                        |(mut va, mut ga), (vb, gb)| {
                            for (a, b) in va.iter_mut().zip(&vb) {
                                *a += b;
                            }
                            for (ra, rb) in ga.iter_mut().zip(&gb) {
                                for (a, b) in ra.iter_mut().zip(rb) {
                                    *a += b;
                                }
                            }
                            (va, ga)
                        },
                    );
                values = v;
                grads = g;
            }
        }
        (values, grads)
    }

    fn combine(&self, offsets: &[f64], values: Vec<f64>, grads: Vec<Vec<f64>>, how: Combine) -> (f64, Vec<f64>, Vec<f64>) {
        let p = grads.first().map_or(0, |g| g.len());
        let mut grad = vec![0.0; p];
        let mut total = 0.0;
        let mut residuals = Vec::with_capacity(values.len());
        for ((v, off), g) in values.iter().zip(offsets).zip(&grads) {
            let r = off + v;
            residuals.push(r);
            let c = match how {
                Combine::Squares => {
                    total += r * r;
                    2.0 * r
                }
                Combine::Sum => {
                    total += r;
                    1.0
                }
            };
            for (a, b) in grad.iter_mut().zip(g) {
                *a += c * b;
            }
        }
        (total, residuals, grad)
    }

    /// Data-only part of the energy at window snapshot `i` of ensemble `q`:
    /// `kBT (1/N) Σ ln ρ̂`.
    fn entropy_term(&self, q: usize, i: usize) -> f64 {
        self.spec.kbt * self.feature(q, i).mean_log_density
    }

    /// `E_q(s_i) = (1/N) Σ_j [kBT ln ρ̂(x_j) + ψ(x_j)]` at window snapshot `i`.
    pub fn energy<P: Potential + ?Sized>(&self, pot: &P, q: usize, i: usize) -> f64 {
        let f = self.feature(q, i);
        let d = self.dim;
        let shape: f64 = f.positions.chunks_exact(d).map(|x| pot.shape_value(x)).sum::<f64>()
            / self.n_particles as f64;
        self.entropy_term(q, i) + shape + pot.offset()
    }

    /// Per-ensemble dissipation `Σ_i w_i [(1-α)(1/N)Σ|v|² + α(1/N)Σ|kBT∇ln ρ̂ + ∇ψ|²]`.
    pub fn dissipation(&self, pot: &dyn Potential) -> Result<Vec<f64>> {
        let alpha = self.spec.alpha;
        if alpha < 1.0 && !self.has_velocities() {
            return Err(Error::MissingVelocities);
        }
        let mw = self.times.len();
        let inv_n = 1.0 / self.n_particles as f64;
        let mut jobs = Vec::new();
        if alpha > 0.0 {
            for q in 0..self.n_ensembles {
                for i in 0..mw {
                    self.push_jobs(&mut jobs, q, self.feature_index(q, i), Term::Score, alpha * self.weights[i] * inv_n);
                }
            }
        }
        let (values, _) = self.run(&jobs, self.n_ensembles, Eval::Generic(pot));
        Ok((0..self.n_ensembles)
            .map(|q| self.velocity_part(q) + values[q])
            .collect())
    }

    fn velocity_part(&self, q: usize) -> f64 {
        let alpha = self.spec.alpha;
        if alpha == 1.0 {
            return 0.0;
        }
        (0..self.times.len())
            .map(|i| self.weights[i] * self.feature(q, i).mean_speed_sq.unwrap_or(0.0))
            .sum::<f64>()
            * (1.0 - alpha)
    }

    /// `Σ_q r_q²` with `r_q = E_q(T_e) - E_q(T_b) + dissipation_q`.
    ///
    /// The potential's additive offset never enters: energy differences use
    /// only the shape part, which makes the loss exactly gauge invariant.
    pub fn energy_dissipation(&self, pot: Eval<'_>) -> Result<LossValue> {
        let alpha = self.spec.alpha;
        if alpha < 1.0 && !self.has_velocities() {
            return Err(Error::MissingVelocities);
        }
        let mw = self.times.len();
        let inv_n = 1.0 / self.n_particles as f64;
        let mut jobs = Vec::new();
        for q in 0..self.n_ensembles {
            self.push_jobs(&mut jobs, q, self.feature_index(q, mw - 1), Term::Shape, inv_n);
            self.push_jobs(&mut jobs, q, self.feature_index(q, 0), Term::Shape, -inv_n);
            if alpha > 0.0 {
                for i in 0..mw {
                    if self.weights[i] != 0.0 {
                        self.push_jobs(&mut jobs, q, self.feature_index(q, i), Term::Score, alpha * self.weights[i] * inv_n);
                    }
                }
            }
        }
        let offsets: Vec<f64> = (0..self.n_ensembles)
            .map(|q| (self.entropy_term(q, mw - 1) - self.entropy_term(q, 0)) + self.velocity_part(q))
            .collect();
        let (values, grads) = self.run(&jobs, self.n_ensembles, pot);
        let (total, residuals, grad) = self.combine(&offsets, values, grads, Combine::Squares);
        Ok(LossValue {
            total,
            per_ensemble_residuals: residuals,
            grad_theta: grad,
        })
    }

    /// Mean over all in-window particles of `½|v + kBT∇ln ρ̂ + ∇ψ|²`.
    pub fn pde_velocity(&self, pot: Eval<'_>) -> Result<LossValue> {
        if !self.has_velocities() {
            return Err(Error::MissingVelocities);
        }
        let mw = self.times.len();
        let scale = 0.5 / (self.n_ensembles * mw * self.n_particles) as f64;
        let mut jobs = Vec::new();
        for q in 0..self.n_ensembles {
            for i in 0..mw {
                self.push_jobs(&mut jobs, q, self.feature_index(q, i), Term::Velocity, scale);
            }
        }
        let offsets = vec![0.0; self.n_ensembles];
        let (values, grads) = self.run(&jobs, self.n_ensembles, pot);
        let (total, parts, grad) = self.combine(&offsets, values, grads, Combine::Sum);
        Ok(LossValue {
            total,
            per_ensemble_residuals: parts.iter().map(|c| c.max(0.0).sqrt()).collect(),
            grad_theta: grad,
        })
    }

    /// `Σ_q |(E_q(s_{i+1}) - E_q(s_i))/Δs + (1/N)Σ_j|kBT∇ln ρ̂ + ∇ψ|²(x_j(s_i))|²`
    /// summed over the listed window indices `i`.
    fn differential_form_at(&self, pot: Eval<'_>, indices: &[usize]) -> Result<LossValue> {
        let mw = self.times.len();
        for &i in indices {
            if i + 1 >= mw {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    count: mw.saturating_sub(1),
                });
            }
        }
        let inv_n = 1.0 / self.n_particles as f64;
        let inv_ds = 1.0 / self.delta_s;
        let ni = indices.len();
        let mut jobs = Vec::new();
        let mut offsets = Vec::with_capacity(self.n_ensembles * ni);
        for q in 0..self.n_ensembles {
            for (k, &i) in indices.iter().enumerate() {
                let g = q * ni + k;
                self.push_jobs(&mut jobs, g, self.feature_index(q, i + 1), Term::Shape, inv_n * inv_ds);
                self.push_jobs(&mut jobs, g, self.feature_index(q, i), Term::Shape, -inv_n * inv_ds);
                self.push_jobs(&mut jobs, g, self.feature_index(q, i), Term::Score, inv_n);
                offsets.push((self.entropy_term(q, i + 1) - self.entropy_term(q, i)) * inv_ds);
            }
        }
        let (values, grads) = self.run(&jobs, self.n_ensembles * ni, pot);
        let (total, residuals, grad) = self.combine(&offsets, values, grads, Combine::Squares);
        let per_ensemble = if ni == 1 {
            residuals
        } else {
            residuals
                .chunks(ni)
                .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect()
        };
        Ok(LossValue {
            total,
            per_ensemble_residuals: per_ensemble,
            grad_theta: grad,
        })
    }

    /// Differential-form loss at window snapshot `i` (pairs `s_i`, `s_{i+1}`).
    pub fn differential_form(&self, pot: Eval<'_>, i: usize) -> Result<LossValue> {
        self.differential_form_at(pot, &[i])
    }

    /// Differential-form loss summed over every consecutive pair in the window.
    pub fn differential_form_all(&self, pot: Eval<'_>) -> Result<LossValue> {
        let idx: Vec<usize> = (0..self.times.len() - 1).collect();
        self.differential_form_at(pot, &idx)
    }

    pub fn evaluate(&self, kind: LossKind, pot: Eval<'_>) -> Result<LossValue> {
        match kind {
            LossKind::EnergyAlpha => self.energy_dissipation(pot),
            LossKind::PdeVelocity => self.pde_velocity(pot),
            LossKind::DifferentialForm => self.differential_form_all(pot),
        }
    }
}

/// A potential as seen by the loss engine: neural networks get parameter
/// gradients, anything else is evaluated for its value only.
#[derive(Clone, Copy)]
pub enum Eval<'a> {
    Neural(&'a NeuralPotential),
    Generic(&'a dyn Potential),
}

impl<'a> Eval<'a> {
    fn param_count(&self) -> usize {
        match self {
            Eval::Neural(nn) => nn.params().len(),
            Eval::Generic(_) => 0,
        }
    }
}

impl<'a> From<&'a PotentialModel> for Eval<'a> {
    fn from(m: &'a PotentialModel) -> Self {
        match m {
            PotentialModel::Neural(nn) => Eval::Neural(nn),
            PotentialModel::Analytic(a) => Eval::Generic(a),
        }
    }
}

impl<'a> From<&'a NeuralPotential> for Eval<'a> {
    fn from(nn: &'a NeuralPotential) -> Self {
        Eval::Neural(nn)
    }
}

/// `(1/N) Σ_j [kBT ln ρ̂(x_j) + ψ(x_j)]` for one snapshot.
pub fn discrete_energy<P: Potential + ?Sized>(snapshot: &[f64], pot: &P, kc: &KernelConfig, kbt: f64) -> Result<f64> {
    check_dim(kc.dim, pot.dim())?;
    let ev = evaluate_at_particles(snapshot, kc)?;
    let n = ev.log_density.len() as f64;
    let entropy = kbt * ev.log_density.iter().sum::<f64>() / n;
    let shape = snapshot.chunks_exact(kc.dim).map(|x| pot.shape_value(x)).sum::<f64>() / n;
    Ok(entropy + shape + pot.offset())
}

/// Per-ensemble dissipation integral over the window.
pub fn discrete_dissipation(
    ds: &ParticleDataset,
    pot: &PotentialModel,
    kc: &KernelConfig,
    spec: &LossSpec,
) -> Result<Vec<f64>> {
    LossContext::new(ds, kc, spec)?.dissipation(pot)
}

pub fn energy_dissipation_loss(
    ds: &ParticleDataset,
    pot: &PotentialModel,
    kc: &KernelConfig,
    spec: &LossSpec,
) -> Result<LossValue> {
    LossContext::new(ds, kc, spec)?.energy_dissipation(pot.into())
}

/// Velocity-level residual over the snapshots in `window`.
pub fn pde_velocity_loss(
    ds: &ParticleDataset,
    pot: &PotentialModel,
    kc: &KernelConfig,
    kbt: f64,
    window: [f64; 2],
) -> Result<LossValue> {
    let spec = LossSpec::new(1.0, kbt, window);
    LossContext::new(ds, kc, &spec)?.pde_velocity(pot.into())
}

/// Differential-form loss between snapshots `i` and `i + 1` of the dataset.
pub fn differential_form_loss(
    ds: &ParticleDataset,
    pot: &PotentialModel,
    kc: &KernelConfig,
    kbt: f64,
    i: usize,
) -> Result<LossValue> {
    let m = ds.n_times();
    if i + 1 >= m {
        return Err(Error::IndexOutOfRange {
            index: i,
            count: m.saturating_sub(1),
        });
    }
    let mut spec = LossSpec::new(1.0, kbt, [ds.times[i], ds.times[i + 1]]);
    spec.delta_s = Some(ds.times[i + 1] - ds.times[i]);
    LossContext::new(ds, kc, &spec)?.differential_form(pot.into(), 0)
}

//! Velocity observations attached to particle snapshots.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kde::{evaluate_at_particles, KernelConfig};
use crate::ot::{self, SinkhornOptions};
use crate::potentials::Potential;
use crate::sde::ParticleDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityMode {
    ForceBalance,
    OptimalTransport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocitySource {
    pub mode: VelocityMode,
    /// Entropic regularization. `None` means `ot_epsilon_rel` times the median
    /// squared pairwise cost of each snapshot pair.
    #[serde(default)]
    pub ot_epsilon: Option<f64>,
    #[serde(default = "default_eps_rel")]
    pub ot_epsilon_rel: f64,
    #[serde(default = "default_iters")]
    pub ot_iters: usize,
    #[serde(default = "default_tol")]
    pub ot_tol: f64,
    /// Clouds with at most this many particles are matched exactly.
    #[serde(default = "default_exact")]
    pub exact_threshold: usize,
}

fn default_eps_rel() -> f64 {
    1e-2
}
fn default_iters() -> usize {
    10_000
}
fn default_tol() -> f64 {
    1e-6
}
fn default_exact() -> usize {
    64
}

impl Default for VelocitySource {
    fn default() -> Self {
        Self {
            mode: VelocityMode::ForceBalance,
            ot_epsilon: None,
            ot_epsilon_rel: default_eps_rel(),
            ot_iters: default_iters(),
            ot_tol: default_tol(),
            exact_threshold: default_exact(),
        }
    }
}

impl VelocitySource {
    pub fn optimal_transport() -> Self {
        Self {
            mode: VelocityMode::OptimalTransport,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.ot_epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::config("velocity.ot_epsilon", "must be positive"));
            }
        }
        if !(self.ot_epsilon_rel > 0.0 && self.ot_epsilon_rel.is_finite()) {
            return Err(Error::config("velocity.ot_epsilon_rel", "must be positive"));
        }
        if self.ot_iters == 0 {
            return Err(Error::config("velocity.ot_iters", "must be at least 1"));
        }
        if !(self.ot_tol > 0.0) {
            return Err(Error::config("velocity.ot_tol", "must be positive"));
        }
        Ok(())
    }
}

/// `v = -kBT ∇ln ρ̂ - ∇ψ` at every particle, with `ρ̂` built from the
/// particle's own snapshot. Returns one `N × d` block per snapshot, in
/// dataset order.
pub fn force_balance_velocity<P: Potential + ?Sized>(
    ds: &ParticleDataset,
    pot: &P,
    kc: &KernelConfig,
    kbt: f64,
) -> Result<Vec<Vec<f64>>> {
    check_dim(ds.dim, pot.dim())?;
    check_dim(ds.dim, kc.dim)?;
    let d = ds.dim;
    ds.snapshots
        .iter()
        .map(|s| {
            let ev = evaluate_at_particles(&s.positions, kc)?;
            let mut v = ev.grad_log_density;
            v.par_chunks_exact_mut(d)
                .zip(s.positions.par_chunks_exact(d))
                .for_each(|(vj, x)| {
                    let mut g = vec![0.0; d];
                    pot.gradient_into(x, &mut g);
                    for k in 0..d {
                        vj[k] = -kbt * vj[k] - g[k];
                    }
                });
            Ok(v)
        })
        .collect()
}

/// Copy of `ds` with force-balance velocities attached.
pub fn with_force_balance<P: Potential + ?Sized>(
    ds: &ParticleDataset,
    pot: &P,
    kc: &KernelConfig,
    kbt: f64,
) -> Result<ParticleDataset> {
    let vels = force_balance_velocity(ds, pot, kc, kbt)?;
    let mut out = ds.clone();
    for (s, v) in out.snapshots.iter_mut().zip(vels) {
        s.velocities = Some(v);
    }
    Ok(out)
}

/// Transport map image of each row of `a` (n × d) onto `b`.
fn transport_images(a: &[f64], b: &[f64], d: usize, vs: &VelocitySource) -> Result<Vec<f64>> {
    let n = a.len() / d;
    let cost = ot::squared_cost(a, b, d)?;
    if n <= vs.exact_threshold {
        let perm = ot::assignment(&cost, n)?;
        let mut out = Vec::with_capacity(n * d);
        for &j in &perm {
            out.extend_from_slice(&b[j * d..(j + 1) * d]);
        }
        return Ok(out);
    }
    let eps = match vs.ot_epsilon {
        Some(e) => e,
        None => vs.ot_epsilon_rel * ot::median_cost(&cost),
    };
    if !(eps > 0.0) {
        // every pair coincides; the identity is optimal
        return Ok(a.to_vec());
    }
    let opts = SinkhornOptions {
        epsilon: eps,
        max_iters: vs.ot_iters,
        tol: vs.ot_tol,
    };
    let plan = ot::sinkhorn(&cost, n, n, &opts)?;
    plan.barycentric_map(b, d)
}

/// Velocities of the particles in `snap_a` inferred from a transport plan
/// onto `snap_b`, observed `dt` later: `v_j = (T(x_j) - x_j) / dt`.
pub fn ot_velocity(snap_a: &[f64], snap_b: &[f64], d: usize, dt: f64, vs: &VelocitySource) -> Result<Vec<f64>> {
    vs.validate()?;
    if d == 0 || snap_a.is_empty() {
        return Err(Error::Empty("transport needs non-empty snapshots"));
    }
    check_dim(snap_a.len(), snap_b.len())?;
    check_dim(0, snap_a.len() % d)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config("dt", "snapshot spacing must be positive"));
    }
    let t = transport_images(snap_a, snap_b, d, vs)?;
    Ok(t.iter().zip(snap_a).map(|(y, x)| (y - x) / dt).collect())
}

/// Replaces every snapshot's velocities with transport estimates. Snapshot
/// `s_i` is paired with `s_{i+1}`; the last one uses the backward pair.
pub fn estimate_ot_velocities(ds: &ParticleDataset, vs: &VelocitySource) -> Result<ParticleDataset> {
    vs.validate()?;
    let m = ds.n_times();
    if m < 2 {
        return Err(Error::config("sim.snapshot_times", "transport velocities need two snapshots"));
    }
    let d = ds.dim;
    let jobs: Vec<(usize, usize)> = (0..ds.n_ensembles)
        .flat_map(|q| (0..m).map(move |i| (q, i)))
        .collect();
    let vels = jobs
        .par_iter()
        .map(|&(q, i)| {
            let here = &ds.snapshot(q, i).positions;
            if i + 1 < m {
                let dt = ds.times[i + 1] - ds.times[i];
                ot_velocity(here, &ds.snapshot(q, i + 1).positions, d, dt, vs)
            } else {
                let dt = ds.times[i] - ds.times[i - 1];
                let back = ot_velocity(here, &ds.snapshot(q, i - 1).positions, d, dt, vs)?;
                Ok(back.into_iter().map(|v| -v).collect())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = ds.clone();
    for (s, v) in out.snapshots.iter_mut().zip(vels) {
        s.velocities = Some(v);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentField {
    /// `sin(x)`, one-dimensional.
    SinX,
}

/// Adds `λ · v_max · field(x)` to every velocity, where `v_max` is the largest
/// velocity magnitude over the whole dataset before the perturbation.
pub fn apply_environment(ds: &ParticleDataset, lambda: f64, field: EnvironmentField) -> Result<ParticleDataset> {
    if !lambda.is_finite() {
        return Err(Error::config("env_lambda", "must be finite"));
    }
    match field {
        EnvironmentField::SinX if ds.dim != 1 => {
            return Err(Error::Unsupported {
                field: "sin_x environment",
                dim: ds.dim,
            })
        }
        EnvironmentField::SinX => {}
    }
    if !ds.has_velocities() {
        return Err(Error::MissingVelocities);
    }
    let v_max = ds
        .snapshots
        .iter()
        .flat_map(|s| s.velocities.as_deref().unwrap_or(&[]))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = ds.clone();
    if lambda == 0.0 {
        return Ok(out);
    }
    for s in &mut out.snapshots {
        let v = s.velocities.as_mut().expect("checked above");
        for (vj, x) in v.iter_mut().zip(&s.positions) {
            *vj += lambda * v_max * x.sin();
        }
    }
    Ok(out)
}

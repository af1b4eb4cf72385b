//! Euler–Maruyama ensembles of overdamped Langevin dynamics,
//! `dX = -(1/γ)∇ψ(X) dt + √(2 k_BT/γ) dW`, with snapshot recording,
//! observational noise and an on-disk dataset layout.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::potentials::Potential;

pub const DEFAULT_KBT: f64 = 0.125;
pub const DEFAULT_DT: f64 = 1e-3;
const TIME_GRID_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dim: usize,
    #[serde(default = "default_kbt")]
    pub kbt: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub snapshot_times: Vec<f64>,
    pub n_particles: usize,
    pub init_means: Vec<Vec<f64>>,
    pub init_std: f64,
    pub seed: u64,
}

fn default_kbt() -> f64 {
    DEFAULT_KBT
}

fn default_gamma() -> f64 {
    1.0
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

impl SimConfig {
    pub fn n_ensembles(&self) -> usize {
        self.init_means.len()
    }

    /// Integrator step counts at which snapshots are taken.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        self.snapshot_times
            .iter()
            .map(|t| (t / self.dt).round() as usize)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("sim.dim", "must be at least 1"));
        }
        if !(self.kbt >= 0.0 && self.kbt.is_finite()) {
            return Err(Error::config("sim.kbt", "must be finite and non-negative"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("sim.gamma", "must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("sim.dt", "must be positive"));
        }
        if self.snapshot_times.is_empty() {
            return Err(Error::config("sim.snapshot_times", "at least one time is required"));
        }
        for w in self.snapshot_times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::config("sim.snapshot_times", "must be strictly increasing"));
            }
        }
        for &t in &self.snapshot_times {
            let k = (t / self.dt).round();
            if t < 0.0 || (t - k * self.dt).abs() > TIME_GRID_TOL {
                return Err(Error::config(
                    "sim.snapshot_times",
                    format!("time {t} is not a non-negative multiple of dt = {}", self.dt),
                ));
            }
        }
        if self.n_particles < 2 {
            return Err(Error::config("sim.n_particles", "must be at least 2"));
        }
        if self.init_means.is_empty() {
            return Err(Error::config("sim.init_means", "at least one ensemble is required"));
        }
        if self.init_means.iter().any(|m| m.len() != self.dim) {
            return Err(Error::config("sim.init_means", "every mean needs `dim` coordinates"));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::config("sim.init_std", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Particle positions (and optionally velocities) of one ensemble at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    /// `N × d`, row-major.
    pub positions: Vec<f64>,
    pub velocities: Option<Vec<f64>>,
}

/// `Q` ensembles × `M` snapshots × `N` particles in `d` dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleDataset {
    pub dim: usize,
    pub n_ensembles: usize,
    pub n_particles: usize,
    pub times: Vec<f64>,
    /// Indexed `q * M + i`.
    pub snapshots: Vec<Snapshot>,
    pub sim: Option<SimConfig>,
}

impl ParticleDataset {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn snapshot(&self, q: usize, i: usize) -> &Snapshot {
        &self.snapshots[q * self.times.len() + i]
    }

    pub fn snapshot_mut(&mut self, q: usize, i: usize) -> &mut Snapshot {
        let m = self.times.len();
        &mut self.snapshots[q * m + i]
    }

    pub fn has_velocities(&self) -> bool {
        !self.snapshots.is_empty() && self.snapshots.iter().all(|s| s.velocities.is_some())
    }

    /// Index of the snapshot recorded at time `t` (to within 1e-9).
    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9)
    }

    /// Checks shapes and finiteness.
    pub fn validate(&self) -> Result<()> {
        let expect = self.n_ensembles * self.times.len();
        check_dim(expect, self.snapshots.len())?;
        let len = self.n_particles * self.dim;
        for s in &self.snapshots {
            check_dim(len, s.positions.len())?;
            if let Some(v) = &s.velocities {
                check_dim(len, v.len())?;
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Dataset {
                        path: Default::default(),
                        reason: "non-finite velocity".into(),
                    });
                }
            }
            if s.positions.iter().any(|x| !x.is_finite()) {
                return Err(Error::Dataset {
                    path: Default::default(),
                    reason: "non-finite position".into(),
                });
            }
        }
        Ok(())
    }

    /// Writes `meta.json` plus one CSV per (ensemble, snapshot).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = DatasetMeta {
            dim: self.dim,
            n_ensembles: self.n_ensembles,
            n_particles: self.n_particles,
            times: self.times.clone(),
            has_velocities: self.has_velocities(),
            sim: self.sim.clone(),
        };
        let path = dir.join("meta.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
        for q in 0..self.n_ensembles {
            for i in 0..self.times.len() {
                let path = dir.join(snapshot_file(q, i));
                fs::write(&path, self.snapshot_csv(q, i, meta.has_velocities))
                    .map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }

    fn snapshot_csv(&self, q: usize, i: usize, with_vel: bool) -> String {
        let d = self.dim;
        let s = self.snapshot(q, i);
        let mut out = String::new();
        let mut cols: Vec<String> = (1..=d).map(|k| format!("x_{k}")).collect();
        if with_vel {
            cols.extend((1..=d).map(|k| format!("v_{k}")));
        }
        out.push_str(&cols.join(","));
        out.push('\n');
        for j in 0..self.n_particles {
            let row = &s.positions[j * d..(j + 1) * d];
            for (k, x) in row.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{x}");
            }
            if let (true, Some(v)) = (with_vel, &s.velocities) {
                for x in &v[j * d..(j + 1) * d] {
                    let _ = write!(out, ",{x}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text)?;
        let d = meta.dim;
        let width = if meta.has_velocities { 2 * d } else { d };
        let mut snapshots = Vec::with_capacity(meta.n_ensembles * meta.times.len());
        for q in 0..meta.n_ensembles {
            for i in 0..meta.times.len() {
                let path = dir.join(snapshot_file(q, i));
                let mut rdr = csv::Reader::from_path(&path)?;
                let headers = rdr.headers()?.len();
                if headers != width {
                    return Err(Error::Dataset {
                        path,
                        reason: format!("expected {width} columns, found {headers}"),
                    });
                }
                let mut positions = Vec::with_capacity(meta.n_particles * d);
                let mut velocities = Vec::new();
                for rec in rdr.records() {
                    let rec = rec?;
                    for (c, field) in rec.iter().enumerate() {
                        let v: f64 = field.trim().parse().map_err(|_| Error::Dataset {
                            path: path.clone(),
                            reason: format!("bad number `{field}`"),
                        })?;
                        if c < d {
                            positions.push(v);
                        } else {
                            velocities.push(v);
                        }
                    }
                }
                if positions.len() != meta.n_particles * d {
                    return Err(Error::Dataset {
                        path,
                        reason: format!(
                            "expected {} particles, found {}",
                            meta.n_particles,
                            positions.len() / d
                        ),
                    });
                }
                snapshots.push(Snapshot {
                    positions,
                    velocities: meta.has_velocities.then_some(velocities),
                });
            }
        }
        let ds = ParticleDataset {
            dim: d,
            n_ensembles: meta.n_ensembles,
            n_particles: meta.n_particles,
            times: meta.times,
            snapshots,
            sim: meta.sim,
        };
        ds.validate().map_err(|e| match e {
            Error::Dataset { reason, .. } => Error::Dataset {
                path: dir.to_path_buf(),
                reason,
            },
            other => other,
        })?;
        Ok(ds)
    }
}

fn snapshot_file(q: usize, i: usize) -> String {
    format!("q{q:03}_s{i:03}.csv")
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    dim: usize,
    n_ensembles: usize,
    n_particles: usize,
    times: Vec<f64>,
    has_velocities: bool,
    sim: Option<SimConfig>,
}

#[inline]
pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Random stream for particle `j` of ensemble `q`.
fn particle_rng(seed: u64, q: usize, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((q as u64) << 32) | j as u64);
    rng
}

/// Integrates every particle of every ensemble and records snapshots.
///
/// Each particle owns a counter-based random stream keyed by
/// `(seed, ensemble, particle)`, so results do not depend on the number of
/// worker threads.
pub fn simulate<P: Potential + ?Sized>(pot: &P, cfg: &SimConfig) -> Result<ParticleDataset> {
    cfg.validate()?;
    check_dim(cfg.dim, pot.dim())?;
    let d = cfg.dim;
    let n = cfg.n_particles;
    let steps = cfg.snapshot_steps();
    let m = steps.len();
    let drift = cfg.dt / cfg.gamma;
    let noise = (2.0 * cfg.kbt * cfg.dt / cfg.gamma).sqrt();
    let last = *steps.last().unwrap_or(&0);

    // one trajectory: m snapshots × d coordinates, or the divergence step
    let run = |q: usize, j: usize| -> std::result::Result<Vec<f64>, usize> {
        let mut rng = particle_rng(cfg.seed, q, j);
        let mean = &cfg.init_means[q];
        let mut x: Vec<f64> = (0..d)
            .map(|k| mean[k] + cfg.init_std * standard_normal(&mut rng))
            .collect();
        let mut g = vec![0.0; d];
        let mut out = Vec::with_capacity(m * d);
        let mut next = 0;
        for step in 0..=last {
            while next < m && steps[next] == step {
                out.extend_from_slice(&x);
                next += 1;
            }
            if step == last {
                break;
            }
            pot.gradient_into(&x, &mut g);
            for k in 0..d {
                let xi = standard_normal(&mut rng);
                x[k] += -drift * g[k] + noise * xi;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(step + 1);
            }
        }
        Ok(out)
    };

    let q_count = cfg.n_ensembles();
    let trajectories: Vec<std::result::Result<Vec<f64>, usize>> = (0..q_count * n)
        .into_par_iter()
        .map(|idx| run(idx / n, idx % n))
        .collect();

    let mut snapshots: Vec<Snapshot> = (0..q_count * m)
        .map(|_| Snapshot {
            positions: vec![0.0; n * d],
            velocities: None,
        })
        .collect();
    for (idx, traj) in trajectories.into_iter().enumerate() {
        let (q, j) = (idx / n, idx % n);
        let traj = traj.map_err(|step| Error::Divergence { ensemble: q, step })?;
        for i in 0..m {
            snapshots[q * m + i].positions[j * d..(j + 1) * d]
                .copy_from_slice(&traj[i * d..(i + 1) * d]);
        }
    }
    Ok(ParticleDataset {
        dim: d,
        n_ensembles: q_count,
        n_particles: n,
        times: cfg.snapshot_times.clone(),
        snapshots,
        sim: Some(cfg.clone()),
    })
}

/// Perturbs positions (and velocities, if present) with independent
/// `N(0, σ² I)` draws. Returns a new dataset.
pub fn add_observation_noise(ds: &ParticleDataset, sigma: f64, seed: u64) -> Result<ParticleDataset> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::config("noise_sigma", "must be finite and non-negative"));
    }
    let mut out = ds.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut pos_rng = ChaCha8Rng::seed_from_u64(seed);
    pos_rng.set_stream(0);
    let mut vel_rng = ChaCha8Rng::seed_from_u64(seed);
    vel_rng.set_stream(1);
    for s in &mut out.snapshots {
        for x in &mut s.positions {
            *x += sigma * standard_normal(&mut pos_rng);
        }
        if let Some(v) = &mut s.velocities {
            for x in v {
                *x += sigma * standard_normal(&mut vel_rng);
            }
        }
    }
    Ok(out)
}

/// `count` i.i.d. uniform points in the box `[lo, hi]`.
pub fn sample_initial_means(count: usize, lo: &[f64], hi: &[f64], seed: u64) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::config("init_means", "need at least one ensemble"));
    }
    check_dim(lo.len(), hi.len())?;
    if lo.is_empty() || lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
        return Err(Error::Empty("sampling box"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            lo.iter()
                .zip(hi)
                .map(|(&a, &b)| if a == b { a } else { rng.random_range(a..b) })
                .collect()
        })
        .collect())
}

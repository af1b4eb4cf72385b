//! Declarative experiment configs and the simulate → velocity → train →
//! evaluate pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, EvalOptions, Metrics};
use crate::kde::KernelConfig;
use crate::loss::{Eval, LossContext, LossKind, LossSpec, Quadrature};
use crate::potentials::{AnalyticPotential, NeuralPotential, PotentialModel};
use crate::sde::{self, ParticleDataset, SimConfig, DEFAULT_DT, DEFAULT_KBT};
use crate::train::{self, CheckpointWriter, TrainConfig};
use crate::velocity::{self, EnvironmentField, VelocityMode, VelocitySource};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Dw1d,
    Qw2d,
    Gm2dOt,
    Mm3d,
    Perturbed1d,
}

impl Benchmark {
    pub fn potential(self) -> AnalyticPotential {
        match self {
            Benchmark::Dw1d | Benchmark::Perturbed1d => AnalyticPotential::double_well_1d(),
            Benchmark::Qw2d => AnalyticPotential::quadruple_well_2d(),
            Benchmark::Gm2dOt => AnalyticPotential::gaussian_mixture_2d(),
            Benchmark::Mm3d => AnalyticPotential::multimodal_3d(),
        }
    }

    pub fn dim(self) -> usize {
        self.potential().dim
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_kbt")]
    pub kbt: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub snapshot_times: Vec<f64>,
    pub n_particles: usize,
    pub n_ensembles: usize,
    pub init_std: f64,
    /// Initial means are drawn uniformly from `[lo, hi]^d`.
    #[serde(default = "default_box")]
    pub means_box: [f64; 2],
    /// Explicit means; overrides the random draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_means: Option<Vec<Vec<f64>>>,
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
fn default_box() -> [f64; 2] {
    [-2.0, 2.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default = "default_h")]
    pub h: f64,
}

fn default_h() -> f64 {
    KernelConfig::DEFAULT_BANDWIDTH
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { h: default_h() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub alpha: f64,
    pub window: [f64; 2],
    #[serde(default = "default_quadrature")]
    pub quadrature: Quadrature,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_s: Option<f64>,
    #[serde(default = "default_kind")]
    pub kind: LossKind,
}

fn default_quadrature() -> Quadrature {
    Quadrature::PaperLiteral
}
fn default_kind() -> LossKind {
    LossKind::EnergyAlpha
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps_adam: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_epochs() -> usize {
    5000
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_hidden() -> usize {
    crate::potentials::DEFAULT_HIDDEN
}
fn default_log_every() -> usize {
    100
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps_adam: default_eps(),
            hidden: default_hidden(),
            log_every: default_log_every(),
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_out() -> PathBuf {
    PathBuf::from("runs/out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Amplitude of the `sin(x)` environmental velocity (1D only).
    #[serde(default)]
    pub env_lambda: f64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Bit-reproducible reductions; `false` allows faster unordered sums.
    #[serde(default = "default_true")]
    pub deterministic: bool,
    pub sim: SimSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub velocity: VelocitySource,
    pub loss: LossSection,
    #[serde(default)]
    pub train: TrainSection,
    /// `eval.seed` is replaced by a seed derived from `seed`.
    #[serde(default)]
    pub eval: EvalOptions,
}

/// Seeds of every random stage, derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub means: u64,
    pub sim: u64,
    pub noise: u64,
    pub init: u64,
    pub eval: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Seeds {
    pub fn derive(master: u64) -> Self {
        let s = |k: u64| splitmix(master ^ splitmix(k));
        Self {
            master,
            means: s(1),
            sim: s(2),
            noise: s(3),
            init: s(4),
            eval: s(5),
        }
    }
}

/// Everything a run needs, with defaults and seeds filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub truth: AnalyticPotential,
    pub sim: SimConfig,
    pub kernel: KernelConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn dim(&self) -> usize {
        self.benchmark.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let d = self.dim();
        let seeds = Seeds::derive(self.seed);
        let s = &self.sim;
        if s.n_ensembles == 0 {
            return Err(Error::config("sim.n_ensembles", "must be at least 1"));
        }
        let init_means = match &s.init_means {
            Some(m) => {
                if m.len() != s.n_ensembles {
                    return Err(Error::config("sim.init_means", "needs one mean per ensemble"));
                }
                m.clone()
            }
            None => {
                if !(s.means_box[0] <= s.means_box[1]) {
                    return Err(Error::config("sim.means_box", "need lo <= hi"));
                }
                sde::sample_initial_means(s.n_ensembles, &vec![s.means_box[0]; d], &vec![s.means_box[1]; d], seeds.means)?
            }
        };
        let sim = SimConfig {
            dim: d,
            kbt: s.kbt,
            gamma: s.gamma,
            dt: s.dt,
            snapshot_times: s.snapshot_times.clone(),
            n_particles: s.n_particles,
            init_means,
            init_std: s.init_std,
            seed: seeds.sim,
        };
        sim.validate()?;
        let kernel = KernelConfig::new(self.kernel.h, d).map_err(|_| Error::config("kernel.h", "bandwidth must be positive"))?;
        self.velocity.validate()?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma", "must be finite and non-negative"));
        }
        if !self.env_lambda.is_finite() {
            return Err(Error::config("env_lambda", "must be finite"));
        }
        if self.env_lambda != 0.0 && d != 1 {
            return Err(Error::config("env_lambda", "the environmental field is one-dimensional"));
        }
        let l = &self.loss;
        let spec = LossSpec {
            alpha: l.alpha,
            kbt: s.kbt,
            window: l.window,
            quadrature: l.quadrature,
            delta_s: l.delta_s,
        };
        let t = &self.train;
        let train = TrainConfig {
            epochs: t.epochs,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps_adam: t.eps_adam,
            seed: seeds.init,
            hidden: t.hidden,
            loss: spec,
            kind: l.kind,
            log_every: t.log_every,
            reduction: if self.deterministic {
                crate::loss::Reduction::Deterministic
            } else {
                crate::loss::Reduction::Fast
            },
        };
        train.validate()?;
        for (k, w) in l.window.iter().enumerate() {
            if !s.snapshot_times.iter().any(|t| (t - w).abs() <= 1e-9) {
                return Err(Error::config("loss.window", format!("T_{} = {w} is not a snapshot time", ["b", "e"][k])));
            }
        }
        let mut eval = self.eval.clone();
        eval.seed = seeds.eval;
        eval.validate()?;
        Ok(Resolved {
            config: self.clone(),
            seeds,
            truth: self.benchmark.potential(),
            sim,
            kernel,
            train,
            eval,
        })
    }
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub init_means: Vec<Vec<f64>>,
}

impl Resolved {
    pub fn meta(&self) -> RunMeta {
        RunMeta {
            version: VERSION.to_string(),
            config: self.config.clone(),
            seeds: self.seeds,
            init_means: self.sim.init_means.clone(),
        }
    }

    pub fn write_meta(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let p = out.join("meta.json");
        fs::write(&p, serde_json::to_string_pretty(&self.meta())?).map_err(|e| Error::io(&p, e))
    }

    /// Simulates the benchmark and prepares the learner's view of the data:
    /// force-balance velocities on clean positions, environmental
    /// perturbation, observation noise, then transport velocities on the
    /// noisy positions.
    pub fn build_dataset(&self) -> Result<ParticleDataset> {
        let c = &self.config;
        let mut ds = sde::simulate(&self.truth, &self.sim).map_err(|e| e.in_stage("simulate"))?;
        if c.velocity.mode == VelocityMode::ForceBalance {
            ds = velocity::with_force_balance(&ds, &self.truth, &self.kernel, self.sim.kbt)
                .map_err(|e| e.in_stage("velocity"))?;
        }
        if c.env_lambda != 0.0 {
            ds = velocity::apply_environment(&ds, c.env_lambda, EnvironmentField::SinX)
                .map_err(|e| e.in_stage("velocity"))?;
        }
        if c.noise_sigma > 0.0 {
            ds = sde::add_observation_noise(&ds, c.noise_sigma, self.seeds.noise).map_err(|e| e.in_stage("noise"))?;
        }
        if c.velocity.mode == VelocityMode::OptimalTransport {
            ds = velocity::estimate_ot_velocities(&ds, &c.velocity).map_err(|e| e.in_stage("velocity"))?;
        }
        Ok(ds)
    }

    /// Writes meta.json and the dataset directory.
    pub fn simulate_stage(&self, out: &Path) -> Result<ParticleDataset> {
        self.write_meta(out)?;
        let ds = self.build_dataset()?;
        ds.save(&out.join("dataset")).map_err(|e| e.in_stage("simulate"))?;
        Ok(ds)
    }

    /// Trains from the seeded initialization, writing checkpoints and logs.
    pub fn train_stage(&self, ds: &ParticleDataset, out: &Path) -> Result<NeuralPotential> {
        let run = || -> Result<NeuralPotential> {
            let init = NeuralPotential::init(ds.dim, self.train.hidden, self.train.seed);
            let mut ctx = LossContext::new(ds, &self.kernel, &self.train.loss)?;
            ctx.reduction = self.train.reduction;
            let mut writer = CheckpointWriter::create(out)?;
            let outcome = train::train_with(&ctx, init, &self.train, |rec, m| writer.record(rec, m));
            let model = match outcome {
                Ok(o) => o.model,
                Err(Error::LossDiverged { epoch, last_finite }) => {
                    writer.finish(&last_finite)?;
                    return Err(Error::LossDiverged { epoch, last_finite });
                }
                Err(e) => return Err(e),
            };
            writer.finish(&model)?;
            Ok(model)
        };
        run().map_err(|e| e.in_stage("train"))
    }

    /// Evaluates `model`, writing metrics.json and the CSV exports.
    pub fn evaluate_stage(&self, ds: &ParticleDataset, model: &NeuralPotential, out: &Path) -> Result<Metrics> {
        let run = || -> Result<Metrics> {
            let report = eval::evaluate(model, &self.truth, &self.sim, &self.kernel, &self.eval)?;
            let mut ctx = LossContext::new(ds, &self.kernel, &self.train.loss)?;
            ctx.reduction = self.train.reduction;
            let lv = ctx.evaluate(self.train.kind, Eval::Neural(model))?;
            let mut m = report.metrics();
            m.final_loss = Some(lv.total);
            m.per_ensemble_residuals = Some(lv.per_ensemble_residuals);
            report.write_csvs(out)?;
            let p = out.join("metrics.json");
            fs::write(&p, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&p, e))?;
            Ok(m)
        };
        run().map_err(|e| e.in_stage("evaluate"))
    }
}

/// Loads `checkpoints/final.json` of a run directory.
pub fn load_final_model(out: &Path) -> Result<NeuralPotential> {
    let p = out.join("checkpoints").join("final.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    match PotentialModel::from_json(&text)? {
        PotentialModel::Neural(n) => Ok(n),
        PotentialModel::Analytic(_) => Err(Error::Dataset {
            path: p,
            reason: "checkpoint holds an analytic potential".into(),
        }),
    }
}

/// Runs every stage into `out` (default: the config's `out_dir`).
pub fn run_pipeline(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Metrics> {
    let r = cfg.resolve()?;
    let out = out.unwrap_or(&cfg.out_dir);
    let ds = r.simulate_stage(out)?;
    let model = r.train_stage(&ds, out)?;
    r.evaluate_stage(&ds, &model, out)
}

/// One row of a run comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub run: String,
    pub alpha: f64,
    pub q: usize,
    pub sigma: f64,
    pub t_b: f64,
    pub t_e: f64,
    pub grad_error: f64,
    pub final_loss: Option<f64>,
}

/// Rows for each run directory, ordered by ascending gradient error.
pub fn compare_rows(run_dirs: &[PathBuf]) -> Result<Vec<CompareRow>> {
    if run_dirs.is_empty() {
        return Err(Error::config("run_dirs", "need at least one run directory"));
    }
    let mut rows = Vec::with_capacity(run_dirs.len());
    for dir in run_dirs {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let metrics: Metrics = serde_json::from_str(&read("metrics.json")?)?;
        let meta: RunMeta = serde_json::from_str(&read("meta.json")?)?;
        let c = &meta.config;
        rows.push(CompareRow {
            run: dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string()),
            alpha: c.loss.alpha,
            q: c.sim.n_ensembles,
            sigma: c.noise_sigma,
            t_b: c.loss.window[0],
            t_e: c.loss.window[1],
            grad_error: metrics.grad_error,
            final_loss: metrics.final_loss,
        });
    }
    rows.sort_by(|a, b| a.grad_error.total_cmp(&b.grad_error));
    Ok(rows)
}

/// Comparison table as CSV text.
pub fn compare(run_dirs: &[PathBuf]) -> Result<String> {
    let rows = compare_rows(run_dirs)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::ConfigParse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

//! Full-batch Adam training of a neural potential.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kde::KernelConfig;
use crate::loss::{Eval, LossContext, LossKind, LossSpec, LossValue, Reduction};
use crate::potentials::{NeuralPotential, PotentialModel};
use crate::sde::ParticleDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
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
    /// Seed of the parameter initialization.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    pub loss: LossSpec,
    #[serde(default = "default_kind")]
    pub kind: LossKind,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub reduction: Reduction,
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
fn default_kind() -> LossKind {
    LossKind::EnergyAlpha
}
fn default_log_every() -> usize {
    100
}

impl TrainConfig {
    pub fn new(loss: LossSpec, kind: LossKind) -> Self {
        Self {
            epochs: default_epochs(),
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps_adam: default_eps(),
            seed: 0,
            hidden: default_hidden(),
            loss,
            kind,
            log_every: default_log_every(),
            reduction: Reduction::Deterministic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("train.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("train.beta2", "must lie in [0, 1)"));
        }
        if !(self.eps_adam > 0.0) {
            return Err(Error::config("train.eps_adam", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("train.hidden", "must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(Error::config("train.log_every", "must be at least 1"));
        }
        self.loss.validate()
    }
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place. A non-finite gradient entry
/// leaves both `theta` and `state` untouched.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    check_dim(theta.len(), grad.len())?;
    check_dim(theta.len(), state.m.len())?;
    check_dim(theta.len(), state.v.len())?;
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((w, g), m), v) in theta.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *w -= cfg.lr * mh / (vh.sqrt() + cfg.eps_adam);
    }
    Ok(())
}

/// Loss snapshot taken every `log_every` epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub total: f64,
    pub residuals: Vec<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: NeuralPotential,
    /// Loss before each update, one entry per epoch.
    pub losses: Vec<f64>,
    pub records: Vec<LossRecord>,
    /// Loss of the returned model.
    pub final_loss: LossValue,
}

/// Trains on a prepared context. `on_log` sees every logged record together
/// with the parameters the record was computed at.
pub fn train_with<F>(ctx: &LossContext, init: NeuralPotential, cfg: &TrainConfig, mut on_log: F) -> Result<TrainOutcome>
where
    F: FnMut(&LossRecord, &NeuralPotential) -> Result<()>,
{
    cfg.validate()?;
    check_dim(ctx.dim(), crate::potentials::Potential::dim(&init))?;
    let start = Instant::now();
    let mut model = init;
    let mut state = AdamState::new(model.params().len());
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut records = Vec::new();
    for epoch in 0..cfg.epochs {
        let lv = ctx.evaluate(cfg.kind, Eval::Neural(&model))?;
        if !lv.total.is_finite() {
            return Err(Error::LossDiverged {
                epoch,
                last_finite: Box::new(model),
            });
        }
        losses.push(lv.total);
        if epoch % cfg.log_every == 0 {
            let rec = LossRecord {
                epoch,
                total: lv.total,
                residuals: lv.per_ensemble_residuals.clone(),
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            on_log(&rec, &model)?;
            records.push(rec);
        }
        let before = model.clone();
        if let Err(e) = adam_step(model.params_mut(), &lv.grad_theta, &mut state, cfg) {
            return Err(match e {
                Error::NonFiniteGradient { .. } => Error::LossDiverged {
                    epoch,
                    last_finite: Box::new(before),
                },
                e => e,
            });
        }
    }
    let final_loss = ctx.evaluate(cfg.kind, Eval::Neural(&model))?;
    if !final_loss.total.is_finite() {
        return Err(Error::LossDiverged {
            epoch: cfg.epochs,
            last_finite: Box::new(model),
        });
    }
    let rec = LossRecord {
        epoch: cfg.epochs,
        total: final_loss.total,
        residuals: final_loss.per_ensemble_residuals.clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    on_log(&rec, &model)?;
    records.push(rec);
    Ok(TrainOutcome {
        model,
        losses,
        records,
        final_loss,
    })
}

/// Builds the loss context for `ds` and trains from `init`.
pub fn train(ds: &ParticleDataset, kc: &KernelConfig, init: NeuralPotential, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut ctx = LossContext::new(ds, kc, &cfg.loss)?;
    ctx.reduction = cfg.reduction;
    train_with(&ctx, init, cfg, |_, _| Ok(()))
}

/// Writes JSON checkpoints and CSV logs as training progresses:
/// `checkpoints/epoch_XXXXX.json`, `train_log.csv` (epoch, loss, wall time)
/// and `loss_log.csv` (epoch, total, per-ensemble residuals).
pub struct CheckpointWriter {
    dir: PathBuf,
    train_log: fs::File,
    loss_log: fs::File,
    wrote_header: bool,
}

impl CheckpointWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        let ck = dir.join("checkpoints");
        fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
        let open = |name: &str| {
            let p = dir.join(name);
            fs::File::create(&p).map_err(|e| Error::io(&p, e))
        };
        let mut train_log = open("train_log.csv")?;
        writeln!(train_log, "epoch,loss,wall_seconds").map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            train_log,
            loss_log: open("loss_log.csv")?,
            wrote_header: false,
        })
    }

    pub fn record(&mut self, rec: &LossRecord, model: &NeuralPotential) -> Result<()> {
        let err = |e| Error::io(&self.dir, e);
        writeln!(self.train_log, "{},{},{:.3}", rec.epoch, rec.total, rec.wall_seconds).map_err(err)?;
        if !self.wrote_header {
            let cols: Vec<String> = (0..rec.residuals.len()).map(|q| format!("r_{q}")).collect();
            writeln!(self.loss_log, "epoch,total,{}", cols.join(",")).map_err(err)?;
            self.wrote_header = true;
        }
        let vals: Vec<String> = rec.residuals.iter().map(|r| r.to_string()).collect();
        writeln!(self.loss_log, "{},{},{}", rec.epoch, rec.total, vals.join(",")).map_err(err)?;
        let path = self.dir.join("checkpoints").join(format!("epoch_{:05}.json", rec.epoch));
        let json = PotentialModel::Neural(model.clone()).to_json()?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    /// Saves `model` as `checkpoints/final.json`.
    pub fn finish(&mut self, model: &NeuralPotential) -> Result<PathBuf> {
        let path = self.dir.join("checkpoints").join("final.json");
        let json = PotentialModel::Neural(model.clone()).to_json()?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

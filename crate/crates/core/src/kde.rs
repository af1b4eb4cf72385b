//! Gaussian-kernel smoothing of an empirical particle measure.
//!
//! `(K_h * ρ_N)(x) = (1/N) Σ_j C_h⁻¹ exp(-|x - x_j|² / 2h²)` with
//! `C_h = (2π)^{d/2} h^d`. Sums are brute force over all particles and are
//! stabilized by factoring out the largest kernel weight.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fastmath;

/// Sum of unnormalized weights below which a query is rejected.
pub const WEIGHT_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub h: f64,
    pub dim: usize,
}

impl KernelConfig {
    pub const DEFAULT_BANDWIDTH: f64 = 0.05;

    pub fn new(h: f64, dim: usize) -> Result<Self> {
        let kc = Self { h, dim };
        kc.validate()?;
        Ok(kc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::config("kernel.h", "bandwidth must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::config("kernel.dim", "dimension must be at least 1"));
        }
        Ok(())
    }

    /// `ln C_h = (d/2) ln 2π + d ln h`.
    pub fn log_normalizer(&self) -> f64 {
        let d = self.dim as f64;
        0.5 * d * (2.0 * std::f64::consts::PI).ln() + d * self.h.ln()
    }

    /// Single kernel evaluation `K_h(x, y)`.
    pub fn kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-r2 / (2.0 * self.h * self.h) - self.log_normalizer()).exp()
    }
}

/// Log-sum of the stabilized kernel weights at `x`, plus the weighted mean
/// displacement when `grad` is given. Returns `ln Σ_j exp(m_j)` with
/// `m_j = -|x - x_j|² / 2h²`.
fn weighted_sums(
    points: &[f64],
    kc: &KernelConfig,
    x: &[f64],
    buf: &mut Vec<f64>,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let d = kc.dim;
    check_dim(d, x.len())?;
    if points.is_empty() {
        return Err(Error::Empty("kernel density needs at least one particle"));
    }
    check_dim(0, points.len() % d)?;
    let inv = 1.0 / (2.0 * kc.h * kc.h);
    buf.clear();
    buf.extend(points.chunks_exact(d).map(|p| {
        let r2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        -r2 * inv
    }));
    let m_max = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for m in buf.iter_mut() {
        *m = fastmath::exp_nonpositive(*m - m_max);
    }
    let total: f64 = buf.iter().sum();
    let log_total = m_max + total.ln();
    if !(log_total >= WEIGHT_FLOOR.ln()) {
        return Err(Error::OutsideSupport);
    }
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v = 0.0);
        for (w, p) in buf.iter().zip(points.chunks_exact(d)) {
            for k in 0..d {
                g[k] += w * (p[k] - x[k]);
            }
        }
        let scale = 1.0 / (total * kc.h * kc.h);
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(log_total)
}

/// `ln (K_h * ρ_N)(x)`.
pub fn log_density(points: &[f64], kc: &KernelConfig, x: &[f64]) -> Result<f64> {
    let n = points.len() / kc.dim.max(1);
    let s = weighted_sums(points, kc, x, &mut Vec::with_capacity(n), None)?;
    Ok(s - (n as f64).ln() - kc.log_normalizer())
}

/// `(K_h * ρ_N)(x)`.
pub fn density(points: &[f64], kc: &KernelConfig, x: &[f64]) -> Result<f64> {
    log_density(points, kc, x).map(f64::exp)
}

/// `∇ ln (K_h * ρ_N)(x)`.
pub fn grad_log_density(points: &[f64], kc: &KernelConfig, x: &[f64]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; kc.dim];
    let n = points.len() / kc.dim.max(1);
    weighted_sums(points, kc, x, &mut Vec::with_capacity(n), Some(&mut g))?;
    Ok(g)
}

/// Log-density and its gradient evaluated at every particle of the cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfEvaluation {
    pub log_density: Vec<f64>,
    /// `N × d`, row-major.
    pub grad_log_density: Vec<f64>,
}

/// Evaluates the cloud's own smoothed density at each of its particles
/// (self-interaction included).
pub fn evaluate_at_particles(points: &[f64], kc: &KernelConfig) -> Result<SelfEvaluation> {
    let d = kc.dim;
    if points.is_empty() {
        return Err(Error::Empty("kernel density needs at least one particle"));
    }
    check_dim(0, points.len() % d)?;
    let n = points.len() / d;
    let shift = (n as f64).ln() + kc.log_normalizer();
    let rows: Vec<(f64, Vec<f64>)> = points
        .par_chunks_exact(d)
        .map_init(
            || Vec::with_capacity(n),
            |buf, x| {
                let mut g = vec![0.0; d];
                let s = weighted_sums(points, kc, x, buf, Some(&mut g))?;
                Ok((s - shift, g))
            },
        )
        .collect::<Result<_>>()?;
    let mut log_density = Vec::with_capacity(n);
    let mut grad_log_density = Vec::with_capacity(n * d);
    for (l, g) in rows {
        log_density.push(l);
        grad_log_density.extend(g);
    }
    Ok(SelfEvaluation {
        log_density,
        grad_log_density,
    })
}

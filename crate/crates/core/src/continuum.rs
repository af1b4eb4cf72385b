//! Closed-form Ornstein–Uhlenbeck densities and dense quadrature of the
//! continuous energy–dissipation functionals. No particles are involved;
//! this is a reference for the discrete losses.

use crate::error::{check_dim, Error, Result};
use crate::potentials::Potential;

/// Gaussian solution of `∂ρ/∂t = ∇·(ρ ∇(kBT ln ρ + k x²/2))` in 1D started
/// from `N(m0, s0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuProcess {
    pub k: f64,
    pub kbt: f64,
    pub m0: f64,
    /// Initial variance.
    pub s0: f64,
}

impl OuProcess {
    pub fn mean(&self, t: f64) -> f64 {
        self.m0 * (-self.k * t).exp()
    }

    pub fn variance(&self, t: f64) -> f64 {
        let eq = self.kbt / self.k;
        eq + (self.s0 - eq) * (-2.0 * self.k * t).exp()
    }

    pub fn density(&self, x: f64, t: f64) -> f64 {
        let m = self.mean(t);
        let s = self.variance(t);
        (-(x - m) * (x - m) / (2.0 * s)).exp() / (2.0 * std::f64::consts::PI * s).sqrt()
    }

    /// Velocity field of the true dynamics, `-∂ₓ(kBT ln ρ + ψ)`.
    pub fn velocity(&self, x: f64, t: f64) -> f64 {
        self.kbt * (x - self.mean(t)) / self.variance(t) - self.k * x
    }
}

/// Composite Simpson rule on `n` (even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 1 { n + 1 } else { n.max(2) };
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Quadrature resolution for [`Functionals`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolution {
    pub nx: usize,
    pub nt: usize,
    /// Half-width of the spatial window in standard deviations.
    pub width: f64,
}

impl Default for Resolution {
    fn default() -> Self {
        Self {
            nx: 2000,
            nt: 400,
            width: 12.0,
        }
    }
}

/// Continuous functionals of an OU trajectory for a trial potential that
/// enters the chemical potential `μ = kBT ln ρ + ψ_trial`.
pub struct Functionals<'a> {
    pub process: OuProcess,
    pub trial: &'a dyn Potential,
    pub res: Resolution,
}

impl<'a> Functionals<'a> {
    pub fn new(process: OuProcess, trial: &'a dyn Potential, res: Resolution) -> Result<Self> {
        check_dim(1, trial.dim())?;
        if !(process.k > 0.0 && process.kbt > 0.0 && process.s0 > 0.0) {
            return Err(Error::config("process", "k, kbt and s0 must be positive"));
        }
        Ok(Self { process, trial, res })
    }

    fn grad_mu(&self, x: f64, t: f64) -> f64 {
        let p = &self.process;
        let mut g = [0.0];
        self.trial.gradient_into(&[x], &mut g);
        -p.kbt * (x - p.mean(t)) / p.variance(t) + g[0]
    }

    fn space<F: Fn(f64) -> f64>(&self, t: f64, f: F) -> f64 {
        let m = self.process.mean(t);
        let sd = self.process.variance(t).sqrt();
        let w = self.res.width * sd;
        simpson(|x| self.process.density(x, t) * f(x), m - w, m + w, self.res.nx)
    }

    /// `E(t) = ∫ kBT ρ ln ρ + ρ ψ_trial`. The trial offset is dropped.
    pub fn energy(&self, t: f64) -> f64 {
        let p = &self.process;
        self.space(t, |x| {
            let lr = -(x - p.mean(t)).powi(2) / (2.0 * p.variance(t))
                - 0.5 * (2.0 * std::f64::consts::PI * p.variance(t)).ln();
            p.kbt * lr + self.trial.shape_value(&[x])
        })
    }

    /// `∫∫ ½ρ|v|² + ½ρ|∇μ|²` over `[tb, te]`.
    pub fn de_giorgi_dissipation(&self, tb: f64, te: f64) -> f64 {
        simpson(
            |t| {
                self.space(t, |x| {
                    let v = self.process.velocity(x, t);
                    let g = self.grad_mu(x, t);
                    0.5 * (v * v + g * g)
                })
            },
            tb,
            te,
            self.res.nt,
        )
    }

    /// `E(te) − E(tb) + ∫∫ ½ρ|v|² + ½ρ|∇μ|²`.
    pub fn alpha_half_residual(&self, tb: f64, te: f64) -> f64 {
        self.energy(te) - self.energy(tb) + self.de_giorgi_dissipation(tb, te)
    }

    /// `∫∫ ½ρ|v + ∇μ|²` over `[tb, te]`.
    pub fn completed_square(&self, tb: f64, te: f64) -> f64 {
        simpson(
            |t| {
                self.space(t, |x| {
                    let r = self.process.velocity(x, t) + self.grad_mu(x, t);
                    0.5 * r * r
                })
            },
            tb,
            te,
            self.res.nt,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::AnalyticPotential;

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 4);
        assert!((v - (15.0 / 4.0 - 3.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn density_solves_the_equation() {
        let p = OuProcess {
            k: 1.5,
            kbt: 0.125,
            m0: 0.7,
            s0: 0.3,
        };
        // ∂ρ/∂t + ∂(ρ v)/∂x = 0 at a few points
        let e = 1e-5;
        for &(x, t) in &[(0.1, 0.2), (0.6, 0.5), (-0.3, 1.0)] {
            let dt = (p.density(x, t + e) - p.density(x, t - e)) / (2.0 * e);
            let flux = |y: f64| p.density(y, t) * p.velocity(y, t);
            let dx = (flux(x + e) - flux(x - e)) / (2.0 * e);
            assert!((dt + dx).abs() < 1e-6, "{dt} {dx}");
        }
    }

    #[test]
    fn de_giorgi_equivalence() {
        let p = OuProcess {
            k: 1.0,
            kbt: 0.125,
            m0: 0.8,
            s0: 0.05,
        };
        let trial = AnalyticPotential::custom(vec![0.8], vec![]).unwrap();
        let f = Functionals::new(p, &trial, Resolution::default()).unwrap();
        let a = f.alpha_half_residual(0.1, 0.6);
        let b = f.completed_square(0.1, 0.6);
        assert!(b > 1e-3);
        assert!((a - b).abs() / b < 1e-3, "{a} vs {b}");
    }

    #[test]
    fn true_potential_has_zero_residual() {
        let p = OuProcess {
            k: 2.0,
            kbt: 0.125,
            m0: -0.5,
            s0: 0.2,
        };
        let truth = AnalyticPotential::quadratic(vec![1.0]);
        let f = Functionals::new(p, &truth, Resolution::default()).unwrap();
        assert!(f.completed_square(0.0, 0.5) < 1e-20);
        assert!(f.alpha_half_residual(0.0, 0.5).abs() < 1e-8);
    }
}

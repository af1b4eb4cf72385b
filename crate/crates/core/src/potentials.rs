//! Benchmark potentials and the trainable one-hidden-layer neural potential.
//!
//! Every potential splits its value into a position-dependent shape and a
//! constant offset, `ψ(x) = shape(x) + offset`. Energy differences are formed
//! on the shapes and the offsets are subtracted separately, so adding a
//! constant to a potential leaves every loss bit-for-bit unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fastmath;

/// Scalar potential with an analytic spatial gradient.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    /// Position-dependent part of the potential.
    fn shape_value(&self, x: &[f64]) -> f64;

    /// Constant part of the potential.
    fn offset(&self) -> f64 {
        0.0
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.shape_value(x) + self.offset()
    }

    /// Writes ∇ψ(x) into `out`.
    fn gradient_into(&self, x: &[f64], out: &mut [f64]);
}

/// Evaluates ψ(x), checking dimensions.
pub fn eval_potential<P: Potential + ?Sized>(p: &P, x: &[f64]) -> Result<f64> {
    check_dim(p.dim(), x.len())?;
    Ok(p.value(x))
}

/// Evaluates ∇ψ(x), checking dimensions.
pub fn grad_potential<P: Potential + ?Sized>(p: &P, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(p.dim(), x.len())?;
    let mut out = vec![0.0; x.len()];
    p.gradient_into(x, &mut out);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticKind {
    DoubleWell1D,
    QuadrupleWell2D,
    GaussianMixture2D,
    Multimodal3D,
    /// `Σ c_i x_i² + Σ_k A_k exp(-Σ_j a_kj (x_j - μ_kj)²)` with user parameters.
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianWell {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub shape: Vec<f64>,
}

/// Closed-form benchmark potential.
///
/// The double and quadruple wells are evaluated from `x⁴/4 - x²/2`; the
/// remaining kinds are a quadratic confinement plus Gaussian wells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPotential {
    pub kind: AnalyticKind,
    pub dim: usize,
    #[serde(default)]
    pub confinement: Vec<f64>,
    #[serde(default)]
    pub wells: Vec<GaussianWell>,
}

#[inline]
fn double_well(x: f64) -> f64 {
    let x2 = x * x;
    0.25 * x2 * x2 - 0.5 * x2
}

#[inline]
fn double_well_slope(x: f64) -> f64 {
    x * x * x - x
}

const MIXTURE_AMPLITUDES: [f64; 3] = [-2.0, -2.0, -1.5];
const MIXTURE_CONFINEMENT: [f64; 3] = [0.2, 0.3, 0.3];
const MIXTURE_CENTERS: [[f64; 3]; 3] = [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 1.0]];
const MIXTURE_SHAPES: [[f64; 3]; 3] = [[2.0, 1.0, 1.0], [2.0, 1.0, 1.0], [1.0, 2.0, 2.0]];

impl AnalyticPotential {
    pub fn double_well_1d() -> Self {
        Self {
            kind: AnalyticKind::DoubleWell1D,
            dim: 1,
            confinement: Vec::new(),
            wells: Vec::new(),
        }
    }

    pub fn quadruple_well_2d() -> Self {
        Self {
            kind: AnalyticKind::QuadrupleWell2D,
            dim: 2,
            confinement: Vec::new(),
            wells: Vec::new(),
        }
    }

    /// Planar restriction of the three-well mixture: the first two
    /// coordinates of every confinement coefficient, center and shape.
    pub fn gaussian_mixture_2d() -> Self {
        Self::mixture(AnalyticKind::GaussianMixture2D, 2)
    }

    pub fn multimodal_3d() -> Self {
        Self::mixture(AnalyticKind::Multimodal3D, 3)
    }

    fn mixture(kind: AnalyticKind, dim: usize) -> Self {
        let wells = (0..3)
            .map(|k| GaussianWell {
                amplitude: MIXTURE_AMPLITUDES[k],
                center: MIXTURE_CENTERS[k][..dim].to_vec(),
                shape: MIXTURE_SHAPES[k][..dim].to_vec(),
            })
            .collect();
        Self {
            kind,
            dim,
            confinement: MIXTURE_CONFINEMENT[..dim].to_vec(),
            wells,
        }
    }

    /// `ψ(x) = Σ c_i x_i²`. A harmonic well `½k|x|²` is `quadratic(vec![k / 2.0; d])`.
    pub fn quadratic(coefficients: Vec<f64>) -> Self {
        Self {
            kind: AnalyticKind::Custom,
            dim: coefficients.len(),
            confinement: coefficients,
            wells: Vec::new(),
        }
    }

    pub fn custom(confinement: Vec<f64>, wells: Vec<GaussianWell>) -> Result<Self> {
        let dim = confinement.len();
        if dim == 0 {
            return Err(Error::Empty("confinement coefficients"));
        }
        for w in &wells {
            check_dim(dim, w.center.len())?;
            check_dim(dim, w.shape.len())?;
        }
        Ok(Self {
            kind: AnalyticKind::Custom,
            dim,
            confinement,
            wells,
        })
    }
}

impl Potential for AnalyticPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn shape_value(&self, x: &[f64]) -> f64 {
        match self.kind {
            AnalyticKind::DoubleWell1D => double_well(x[0]),
            AnalyticKind::QuadrupleWell2D => double_well(x[0]) + double_well(x[1]),
            _ => {
                let mut v: f64 = self
                    .confinement
                    .iter()
                    .zip(x)
                    .map(|(c, xi)| c * xi * xi)
                    .sum();
                for w in &self.wells {
                    let e: f64 = w
                        .shape
                        .iter()
                        .zip(&w.center)
                        .zip(x)
                        .map(|((a, m), xi)| a * (xi - m) * (xi - m))
                        .sum();
                    v += w.amplitude * (-e).exp();
                }
                v
            }
        }
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            AnalyticKind::DoubleWell1D => out[0] = double_well_slope(x[0]),
            AnalyticKind::QuadrupleWell2D => {
                out[0] = double_well_slope(x[0]);
                out[1] = double_well_slope(x[1]);
            }
            _ => {
                for ((o, c), xi) in out.iter_mut().zip(&self.confinement).zip(x) {
                    *o = 2.0 * c * xi;
                }
                for w in &self.wells {
                    let e: f64 = w
                        .shape
                        .iter()
                        .zip(&w.center)
                        .zip(x)
                        .map(|((a, m), xi)| a * (xi - m) * (xi - m))
                        .sum();
                    let g = w.amplitude * (-e).exp();
                    for (((o, a), m), xi) in out.iter_mut().zip(&w.shape).zip(&w.center).zip(x) {
                        *o -= 2.0 * g * a * (xi - m);
                    }
                }
            }
        }
    }
}

/// `ψ(x) = W2·tanh(W1 x + b1) + b2`.
///
/// Parameters live in one flat vector laid out as
/// `[W1 (column-major, d × H) | b1 (H) | W2 (H) | b2]`, so `W1[h][k]` sits at
/// `k * H + h`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralPotential {
    dim: usize,
    hidden: usize,
    theta: Vec<f64>,
}

pub const DEFAULT_HIDDEN: usize = 64;

/// Per-thread buffers for the fused kernels.
#[derive(Clone, Debug)]
pub struct Scratch {
    act: Vec<f64>,
    dact: Vec<f64>,
    u: Vec<f64>,
    r: Vec<f64>,
}

impl Scratch {
    pub fn new(hidden: usize, dim: usize) -> Self {
        Self {
            act: vec![0.0; hidden],
            dact: vec![0.0; hidden],
            u: vec![0.0; hidden],
            r: vec![0.0; dim],
        }
    }
}

impl NeuralPotential {
    pub fn param_count(dim: usize, hidden: usize) -> usize {
        (dim + 2) * hidden + 1
    }

    /// Uniform initialization on `[-1/√fan_in, 1/√fan_in]` per layer.
    pub fn init(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s1 = 1.0 / (dim as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        let mut theta = Vec::with_capacity(Self::param_count(dim, hidden));
        for _ in 0..(dim + 1) * hidden {
            theta.push(rng.random_range(-s1..=s1));
        }
        for _ in 0..hidden + 1 {
            theta.push(rng.random_range(-s2..=s2));
        }
        Self { dim, hidden, theta }
    }

    pub fn from_parts(dim: usize, hidden: usize, theta: Vec<f64>) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::Empty("network shape"));
        }
        check_dim(Self::param_count(dim, hidden), theta.len())?;
        Ok(Self { dim, hidden, theta })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn scratch(&self) -> Scratch {
        Scratch::new(self.hidden, self.dim)
    }

    fn b1_offset(&self) -> usize {
        self.dim * self.hidden
    }

    fn w2_offset(&self) -> usize {
        (self.dim + 1) * self.hidden
    }

    pub fn b2_index(&self) -> usize {
        (self.dim + 2) * self.hidden
    }

    pub fn w1(&self, h: usize, k: usize) -> f64 {
        self.theta[k * self.hidden + h]
    }

    pub fn w1_index(&self, h: usize, k: usize) -> usize {
        k * self.hidden + h
    }

    pub fn b1(&self) -> &[f64] {
        &self.theta[self.b1_offset()..self.w2_offset()]
    }

    pub fn w2(&self) -> &[f64] {
        &self.theta[self.w2_offset()..self.b2_index()]
    }

    pub fn b2(&self) -> f64 {
        self.theta[self.b2_index()]
    }

    pub fn b1_index(&self, h: usize) -> usize {
        self.b1_offset() + h
    }

    pub fn w2_index(&self, h: usize) -> usize {
        self.w2_offset() + h
    }

    pub fn set_b2(&mut self, value: f64) {
        let i = self.b2_index();
        self.theta[i] = value;
    }

    /// Fills `act` with tanh(W1 x + b1).
    #[inline(always)]
    fn hidden_layer(&self, x: &[f64], act: &mut [f64]) {
        let h = self.hidden;
        act.copy_from_slice(self.b1());
        for (k, &xk) in x.iter().enumerate() {
            let col = &self.theta[k * h..(k + 1) * h];
            for (a, w) in act.iter_mut().zip(col) {
                *a += w * xk;
            }
        }
        fastmath::tanh_in_place(act);
    }

    /// Returns the shape value `W2·tanh(W1 x + b1)` and adds
    /// `scale · ∂ψ/∂θ` into `grad`.
    #[inline(always)]
    pub fn shape_value_accumulate(
        &self,
        x: &[f64],
        scale: f64,
        grad: &mut [f64],
        s: &mut Scratch,
    ) -> f64 {
        let h = self.hidden;
        self.hidden_layer(x, &mut s.act);
        let w2 = self.w2();
        let value = fastmath::dot(&s.act, w2);
        // back through tanh: scale * w2 * (1 - t²)
        for ((d, t), w) in s.dact.iter_mut().zip(&s.act).zip(w2) {
            *d = scale * w * (1.0 - t * t);
        }
        for (k, &xk) in x.iter().enumerate() {
            for (g, d) in grad[k * h..(k + 1) * h].iter_mut().zip(&s.dact) {
                *g += d * xk;
            }
        }
        let (b1o, w2o, b2i) = (self.b1_offset(), self.w2_offset(), self.b2_index());
        for (g, d) in grad[b1o..w2o].iter_mut().zip(&s.dact) {
            *g += d;
        }
        for (g, t) in grad[w2o..b2i].iter_mut().zip(&s.act) {
            *g += scale * t;
        }
        grad[b2i] += scale;
        value
    }

    /// With `r = g + ∇ψ(x)`, returns `|r|²` and adds `scale · ∂|r|²/∂θ`
    /// into `grad`.
    #[inline(always)]
    pub fn score_residual_accumulate(
        &self,
        x: &[f64],
        g: &[f64],
        scale: f64,
        grad: &mut [f64],
        s: &mut Scratch,
    ) -> f64 {
        let h = self.hidden;
        self.hidden_layer(x, &mut s.act);
        let w2o = self.w2_offset();
        let b1o = self.b1_offset();
        // a_h = w2_h (1 - t_h²)
        {
            let w2 = &self.theta[w2o..w2o + h];
            for ((a, t), w) in s.dact.iter_mut().zip(&s.act).zip(w2) {
                *a = w * (1.0 - t * t);
            }
        }
        let mut sq = 0.0;
        for k in 0..self.dim {
            let gk = fastmath::dot(&self.theta[k * h..(k + 1) * h], &s.dact);
            let rk = g[k] + gk;
            s.r[k] = rk;
            sq += rk * rk;
        }
        // u_h = Σ_k r_k W1[h][k]
        s.u.iter_mut().for_each(|u| *u = 0.0);
        for k in 0..self.dim {
            let rk = s.r[k];
            let col = &self.theta[k * h..(k + 1) * h];
            for (u, w) in s.u.iter_mut().zip(col) {
                *u += rk * w;
            }
        }
        let c = 2.0 * scale;
        // tanh'' = -2 t tanh'; reuse `act` for c·u·w2·tanh'' and `u` for c·u·tanh'
        for ((t, u), a) in s.act.iter_mut().zip(s.u.iter_mut()).zip(&s.dact) {
            let tp = 1.0 - *t * *t;
            let uu = *u;
            // a = w2 tanh', so u w2 tanh'' = -2 t u a
            *t = -2.0 * c * *t * uu * a;
            *u = c * uu * tp;
        }
        for k in 0..self.dim {
            let xk = x[k];
            let crk = c * s.r[k];
            for ((gw, a), m) in grad[k * h..(k + 1) * h].iter_mut().zip(&s.dact).zip(&s.act) {
                *gw += crk * a + m * xk;
            }
        }
        for (gb, m) in grad[b1o..w2o].iter_mut().zip(&s.act) {
            *gb += m;
        }
        for (gw, u) in grad[w2o..w2o + h].iter_mut().zip(&s.u) {
            *gw += u;
        }
        sq
    }

    #[inline(always)]
    fn shape_batch_generic(&self, xs: &[f64], scale: f64, grad: &mut [f64], s: &mut Scratch) -> f64 {
        let mut total = 0.0;
        for x in xs.chunks_exact(self.dim) {
            total += self.shape_value_accumulate(x, scale, grad, s);
        }
        total
    }

    #[inline(always)]
    fn score_batch_generic(
        &self,
        xs: &[f64],
        gs: &[f64],
        scale: f64,
        grad: &mut [f64],
        s: &mut Scratch,
    ) -> f64 {
        let d = self.dim;
        let mut total = 0.0;
        for (x, g) in xs.chunks_exact(d).zip(gs.chunks_exact(d)) {
            total += self.score_residual_accumulate(x, g, scale, grad, s);
        }
        total
    }

    /// Sums shape values over the rows of `xs` (`n × d`) and adds
    /// `scale · Σ ∂ψ/∂θ` into `grad`.
    pub fn shape_batch(&self, xs: &[f64], scale: f64, grad: &mut [f64], s: &mut Scratch) -> f64 {
        #[cfg(target_arch = "x86_64")]
        {
            if simd::has_avx512() {
                // SAFETY: the required CPU features were detected at runtime.
                return unsafe { simd::shape_batch_avx512(self, xs, scale, grad, s) };
            }
            if simd::has_avx2() {
                // SAFETY: as above.
                return unsafe { simd::shape_batch_avx2(self, xs, scale, grad, s) };
            }
        }
        self.shape_batch_generic(xs, scale, grad, s)
    }

    /// Sums `|g_j + ∇ψ(x_j)|²` over paired rows of `xs` and `gs` and adds
    /// `scale` times its parameter gradient into `grad`.
    pub fn score_batch(
        &self,
        xs: &[f64],
        gs: &[f64],
        scale: f64,
        grad: &mut [f64],
        s: &mut Scratch,
    ) -> f64 {
        #[cfg(target_arch = "x86_64")]
        {
            if simd::has_avx512() {
                // SAFETY: the required CPU features were detected at runtime.
                return unsafe { simd::score_batch_avx512(self, xs, gs, scale, grad, s) };
            }
            if simd::has_avx2() {
                // SAFETY: as above.
                return unsafe { simd::score_batch_avx2(self, xs, gs, scale, grad, s) };
            }
        }
        self.score_batch_generic(xs, gs, scale, grad, s)
    }

    /// Parameter sensitivities `(∂ψ/∂θ, ∂(∇ψ)/∂θ)`; the second is `d` rows of
    /// length `param_count`.
    pub fn param_grad(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        check_dim(self.dim, x.len())?;
        let (d, h) = (self.dim, self.hidden);
        let p = self.theta.len();
        let mut act = vec![0.0; h];
        self.hidden_layer(x, &mut act);
        let w2 = self.w2();
        let mut dpsi = vec![0.0; p];
        let mut dgrad = vec![vec![0.0; p]; d];
        for hh in 0..h {
            let t = act[hh];
            let tp = 1.0 - t * t;
            let tpp = -2.0 * t * tp;
            for k in 0..d {
                dpsi[self.w1_index(hh, k)] = w2[hh] * tp * x[k];
            }
            dpsi[self.b1_index(hh)] = w2[hh] * tp;
            dpsi[self.w2_index(hh)] = t;
            for i in 0..d {
                let row = &mut dgrad[i];
                // ∂ψ/∂x_i = Σ_h W1[h][i] w2_h tanh'(z_h)
                for k in 0..d {
                    let mut v = self.w1(hh, i) * w2[hh] * tpp * x[k];
                    if k == i {
                        v += w2[hh] * tp;
                    }
                    row[self.w1_index(hh, k)] = v;
                }
                row[self.b1_index(hh)] = self.w1(hh, i) * w2[hh] * tpp;
                row[self.w2_index(hh)] = self.w1(hh, i) * tp;
            }
        }
        dpsi[self.b2_index()] = 1.0;
        Ok((dpsi, dgrad))
    }
}

/// Copies of the batch kernels compiled with wider vector units. Rust never
/// contracts `a * b + c` into a fused multiply-add on its own, so every copy
/// produces bit-identical results.
#[cfg(target_arch = "x86_64")]
mod simd {
    use super::{NeuralPotential, Scratch};

    pub(super) fn has_avx512() -> bool {
        std::is_x86_feature_detected!("avx512f")
            && std::is_x86_feature_detected!("avx512dq")
            && std::is_x86_feature_detected!("avx512vl")
    }

    pub(super) fn has_avx2() -> bool {
        std::is_x86_feature_detected!("avx2")
    }

    #[target_feature(enable = "avx512f,avx512dq,avx512vl,avx2")]
    pub(super) unsafe fn shape_batch_avx512(
        nn: &NeuralPotential,
        xs: &[f64],
        scale: f64,
        grad: &mut [f64],
        s: &mut Scratch,
    ) -> f64 {
        nn.shape_batch_generic(xs, scale, grad, s)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn shape_batch_avx2(
        nn: &NeuralPotential,
        xs: &[f64],
        scale: f64,
        grad: &mut [f64],
        s: &mut Scratch,
    ) -> f64 {
        nn.shape_batch_generic(xs, scale, grad, s)
    }

    #[target_feature(enable = "avx512f,avx512dq,avx512vl,avx2")]
    pub(super) unsafe fn score_batch_avx512(
        nn: &NeuralPotential,
        xs: &[f64],
        gs: &[f64],
        scale: f64,
        grad: &mut [f64],
        s: &mut Scratch,
    ) -> f64 {
        nn.score_batch_generic(xs, gs, scale, grad, s)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn score_batch_avx2(
        nn: &NeuralPotential,
        xs: &[f64],
        gs: &[f64],
        scale: f64,
        grad: &mut [f64],
        s: &mut Scratch,
    ) -> f64 {
        nn.score_batch_generic(xs, gs, scale, grad, s)
    }
}

impl Potential for NeuralPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn shape_value(&self, x: &[f64]) -> f64 {
        let mut act = vec![0.0; self.hidden];
        self.hidden_layer(x, &mut act);
        fastmath::dot(&act, self.w2())
    }

    fn offset(&self) -> f64 {
        self.b2()
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let h = self.hidden;
        let mut act = vec![0.0; h];
        self.hidden_layer(x, &mut act);
        for (a, w) in act.iter_mut().zip(self.w2()) {
            *a = w * (1.0 - *a * *a);
        }
        for (k, o) in out.iter_mut().enumerate() {
            *o = fastmath::dot(&self.theta[k * h..(k + 1) * h], &act);
        }
    }
}

/// `ψ + c`, with `c` carried in the offset.
#[derive(Clone, Debug)]
pub struct Shifted<P> {
    pub inner: P,
    pub shift: f64,
}

impl<P: Potential> Potential for Shifted<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn shape_value(&self, x: &[f64]) -> f64 {
        self.inner.shape_value(x)
    }

    fn offset(&self) -> f64 {
        self.inner.offset() + self.shift
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.inner.gradient_into(x, out)
    }
}

/// Either a closed-form benchmark or a neural potential.
#[derive(Clone, Debug, PartialEq)]
pub enum PotentialModel {
    Analytic(AnalyticPotential),
    Neural(NeuralPotential),
}

impl PotentialModel {
    pub fn as_neural(&self) -> Option<&NeuralPotential> {
        match self {
            PotentialModel::Neural(n) => Some(n),
            PotentialModel::Analytic(_) => None,
        }
    }

    pub fn as_dyn(&self) -> &dyn Potential {
        match self {
            PotentialModel::Analytic(a) => a,
            PotentialModel::Neural(n) => n,
        }
    }
}

impl Potential for PotentialModel {
    fn dim(&self) -> usize {
        self.as_dyn().dim()
    }

    fn shape_value(&self, x: &[f64]) -> f64 {
        self.as_dyn().shape_value(x)
    }

    fn offset(&self) -> f64 {
        self.as_dyn().offset()
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.as_dyn().gradient_into(x, out)
    }
}

/// Flat JSON document for saving and reloading potentials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PotentialDoc {
    Neural {
        dim: usize,
        hidden: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
    },
    Analytic(AnalyticPotential),
}

impl From<&PotentialModel> for PotentialDoc {
    fn from(m: &PotentialModel) -> Self {
        match m {
            PotentialModel::Analytic(a) => PotentialDoc::Analytic(a.clone()),
            PotentialModel::Neural(n) => PotentialDoc::Neural {
                dim: n.dim,
                hidden: n.hidden,
                w1: n.theta[..n.b1_offset()].to_vec(),
                b1: n.b1().to_vec(),
                w2: n.w2().to_vec(),
                b2: n.b2(),
            },
        }
    }
}

impl TryFrom<PotentialDoc> for PotentialModel {
    type Error = Error;

    fn try_from(doc: PotentialDoc) -> Result<Self> {
        match doc {
            PotentialDoc::Analytic(a) => Ok(PotentialModel::Analytic(a)),
            PotentialDoc::Neural {
                dim,
                hidden,
                w1,
                b1,
                w2,
                b2,
            } => {
                check_dim(dim * hidden, w1.len())?;
                check_dim(hidden, b1.len())?;
                check_dim(hidden, w2.len())?;
                let mut theta = w1;
                theta.extend(b1);
                theta.extend(w2);
                theta.push(b2);
                Ok(PotentialModel::Neural(NeuralPotential::from_parts(
                    dim, hidden, theta,
                )?))
            }
        }
    }
}

impl PotentialModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PotentialDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: PotentialDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

//! Discrete optimal transport between uniform point clouds with squared
//! Euclidean cost: exact assignment for small problems and log-stabilized
//! Sinkhorn iterations for entropic plans.

use crate::error::{check_dim, Error, Result};
use crate::fastmath;

/// `C_ij = |a_i - b_j|²` for row-major clouds `a` (n × d) and `b` (m × d).
pub fn squared_cost(a: &[f64], b: &[f64], d: usize) -> Result<Vec<f64>> {
    if d == 0 || a.is_empty() || b.is_empty() {
        return Err(Error::Empty("transport needs non-empty clouds"));
    }
    check_dim(0, a.len() % d)?;
    check_dim(0, b.len() % d)?;
    let mut c = Vec::with_capacity((a.len() / d) * (b.len() / d));
    for x in a.chunks_exact(d) {
        for y in b.chunks_exact(d) {
            c.push(x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum());
        }
    }
    Ok(c)
}

/// Minimum-cost perfect matching on a square `n × n` cost matrix
/// (Hungarian method with potentials, O(n³)). Returns `perm` with row `i`
/// assigned to column `perm[i]`.
pub fn assignment(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Empty("assignment needs at least one row"));
    }
    check_dim(n * n, cost.len())?;
    // 1-based arrays; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            if j1 == 0 {
                return Err(Error::config("cost", "assignment costs must be finite"));
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    Ok(perm)
}

/// Mean cost of a matching, `(1/n) Σ_i C_{i,perm(i)}`.
pub fn assignment_cost(cost: &[f64], n: usize, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornOptions {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Largest tolerated absolute deviation of a row or column sum from its
    /// target mass.
    pub tol: f64,
}

impl SinkhornOptions {
    pub fn new(epsilon: f64, max_iters: usize) -> Self {
        Self {
            epsilon,
            max_iters,
            tol: 1e-6,
        }
    }
}

/// Entropic plan `P_ij = exp((f_i + g_j - C_ij)/ε)` between uniform
/// marginals.
#[derive(Clone, Debug)]
pub struct SinkhornPlan {
    pub n: usize,
    pub m: usize,
    pub epsilon: f64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// Row-major `n × m`.
    pub plan: Vec<f64>,
    pub iters: usize,
    pub violation: f64,
}

impl SinkhornPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.chunks_exact(self.m).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.m];
        for r in self.plan.chunks_exact(self.m) {
            for (a, p) in s.iter_mut().zip(r) {
                *a += p;
            }
        }
        s
    }

    /// Transport cost `Σ_ij P_ij C_ij`.
    pub fn cost(&self, cost: &[f64]) -> f64 {
        self.plan.iter().zip(cost).map(|(p, c)| p * c).sum()
    }

    /// Value of the entropic dual, `⟨a,f⟩ + ⟨b,g⟩` relative to the product
    /// reference measure `a ⊗ b`.
    pub fn dual_value(&self) -> f64 {
        let (n, m) = (self.n as f64, self.m as f64);
        let mf = self.f.iter().sum::<f64>() / n;
        let mg = self.g.iter().sum::<f64>() / m;
        mf + mg + self.epsilon * (n.ln() + m.ln())
    }

    /// Barycentric projection `T(x_i) = Σ_j P_ij y_j / Σ_j P_ij`.
    pub fn barycentric_map(&self, targets: &[f64], d: usize) -> Result<Vec<f64>> {
        check_dim(self.m * d, targets.len())?;
        let mut out = vec![0.0; self.n * d];
        for (row, o) in self.plan.chunks_exact(self.m).zip(out.chunks_exact_mut(d)) {
            let mass: f64 = row.iter().sum();
            if !(mass > 0.0) {
                return Err(Error::DegenerateNormalizer);
            }
            for (p, y) in row.iter().zip(targets.chunks_exact(d)) {
                for k in 0..d {
                    o[k] += p * y[k];
                }
            }
            o.iter_mut().for_each(|v| *v /= mass);
        }
        Ok(out)
    }
}

/// Soft-min update `f_i = -ε ln Σ_j exp((g_j - C_ij)/ε) + ε ln a_i` over
/// rows of `cost` (`n × m`), computed with max-shifting.
fn soft_c_transform(cost: &[f64], n: usize, m: usize, g: &[f64], eps: f64, log_a: f64, f: &mut [f64]) {
    let mut buf = vec![0.0; m];
    for i in 0..n {
        let row = &cost[i * m..(i + 1) * m];
        let mut mx = f64::NEG_INFINITY;
        for ((b, c), gj) in buf.iter_mut().zip(row).zip(g) {
            *b = (gj - c) / eps;
            mx = mx.max(*b);
        }
        let s: f64 = buf.iter().map(|b| fastmath::exp_nonpositive(b - mx)).sum();
        f[i] = eps * log_a - eps * (mx + s.ln());
    }
}

fn transpose(c: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            t[j * n + i] = c[i * m + j];
        }
    }
    t
}

/// Kernel `K_ij = exp((f_i + g_j - C_ij)/ε)`.
fn build_kernel(cost: &[f64], m: usize, f: &[f64], g: &[f64], eps: f64, k: &mut [f64]) {
    for ((krow, crow), fi) in k.chunks_exact_mut(m).zip(cost.chunks_exact(m)).zip(f) {
        for ((kv, c), gj) in krow.iter_mut().zip(crow).zip(g) {
            let e = (fi + gj - c) / eps;
            *kv = fastmath::exp_nonpositive(e.min(0.0));
        }
    }
}

/// Entropic transport between uniform measures on `n` rows and `m` columns
/// of `cost`. Scaling iterations run on a stabilized kernel; whenever the
/// scalings grow large they are absorbed into the dual potentials with exact
/// soft-min updates. The regularization is reached by geometric annealing
/// from the cost scale.
pub fn sinkhorn(cost: &[f64], n: usize, m: usize, opts: &SinkhornOptions) -> Result<SinkhornPlan> {
    if n == 0 || m == 0 {
        return Err(Error::Empty("sinkhorn needs non-empty marginals"));
    }
    check_dim(n * m, cost.len())?;
    if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
        return Err(Error::config("ot_epsilon", "must be positive"));
    }
    if opts.max_iters == 0 {
        return Err(Error::config("ot_iters", "must be at least 1"));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::config("cost", "transport costs must be finite"));
    }
    let (a, b) = (1.0 / n as f64, 1.0 / m as f64);
    let (log_a, log_b) = (a.ln(), b.ln());
    let cost_t = transpose(cost, n, m);
    let scale = cost.iter().copied().fold(0.0, f64::max);
    let mut eps = opts.epsilon.max(scale);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    soft_c_transform(cost, n, m, &g, eps, log_a, &mut f);
    soft_c_transform(&cost_t, m, n, &f, eps, log_b, &mut g);
    let mut kernel = vec![0.0; n * m];
    build_kernel(cost, m, &f, &g, eps, &mut kernel);
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut kv = vec![0.0; n];
    let mut ktu = vec![0.0; m];
    const ABSORB: f64 = 1e30;
    let mut violation = f64::INFINITY;
    let mut iters = 0;
    let absorb = |f: &mut Vec<f64>, g: &mut Vec<f64>, u: &mut Vec<f64>, v: &mut Vec<f64>, eps: f64, kernel: &mut Vec<f64>| {
        soft_c_transform(cost, n, m, g, eps, log_a, f);
        soft_c_transform(&cost_t, m, n, f, eps, log_b, g);
        build_kernel(cost, m, f, g, eps, kernel);
        u.iter_mut().for_each(|x| *x = 1.0);
        v.iter_mut().for_each(|x| *x = 1.0);
    };
    while iters < opts.max_iters {
        iters += 1;
        // K v, with the current u this also measures the row-sum violation.
        for (o, krow) in kv.iter_mut().zip(kernel.chunks_exact(m)) {
            *o = fastmath::dot(krow, &v);
        }
        violation = u
            .iter()
            .zip(&kv)
            .map(|(ui, s)| (ui * s - a).abs())
            .fold(0.0, f64::max);
        if violation <= opts.tol && eps <= opts.epsilon {
            break;
        }
        if violation <= opts.tol.max(1e-3 * a) && eps > opts.epsilon {
            // f is rebuilt from g by the absorption, so only g needs folding.
            for (gj, vj) in g.iter_mut().zip(&v) {
                *gj += eps * vj.ln();
            }
            eps = (eps * 0.5).max(opts.epsilon);
            absorb(&mut f, &mut g, &mut u, &mut v, eps, &mut kernel);
            continue;
        }
        for (ui, s) in u.iter_mut().zip(&kv) {
            *ui = a / s;
        }
        ktu.iter_mut().for_each(|x| *x = 0.0);
        for (ui, krow) in u.iter().zip(kernel.chunks_exact(m)) {
            for (o, kij) in ktu.iter_mut().zip(krow) {
                *o += ui * kij;
            }
        }
        for (vj, s) in v.iter_mut().zip(&ktu) {
            *vj = b / s;
        }
        let bad = u.iter().chain(&v).any(|x| !x.is_finite() || *x > ABSORB || *x < 1.0 / ABSORB);
        if bad {
            if v.iter().all(|x| x.is_finite() && *x > 0.0) {
                for (gj, vj) in g.iter_mut().zip(&v) {
                    *gj += eps * vj.ln();
                }
            }
            absorb(&mut f, &mut g, &mut u, &mut v, eps, &mut kernel);
        }
    }
    if !(violation <= opts.tol) || eps > opts.epsilon {
        return Err(Error::SinkhornNotConverged { iters, violation });
    }
    for (fi, ui) in f.iter_mut().zip(&u) {
        *fi += eps * ui.ln();
    }
    for (gj, vj) in g.iter_mut().zip(&v) {
        *gj += eps * vj.ln();
    }
    let mut plan = kernel;
    for (prow, ui) in plan.chunks_exact_mut(m).zip(&u) {
        for (p, vj) in prow.iter_mut().zip(&v) {
            *p *= ui * vj;
        }
    }
    Ok(SinkhornPlan {
        n,
        m,
        epsilon: eps,
        f,
        g,
        plan,
        iters,
        violation,
    })
}

/// Median of all entries of a cost matrix.
pub fn median_cost(cost: &[f64]) -> f64 {
    if cost.is_empty() {
        return f64::NAN;
    }
    let mut c = cost.to_vec();
    let mid = c.len() / 2;
    let (_, m, _) = c.select_nth_unstable_by(mid, |x, y| x.total_cmp(y));
    *m
}

/// Debiased entropic divergence
/// `S_ε(a,b) = OT_ε(a,b) - ½ OT_ε(a,a) - ½ OT_ε(b,b)` between two clouds.
pub fn sinkhorn_divergence(a: &[f64], b: &[f64], d: usize, opts: &SinkhornOptions) -> Result<f64> {
    let (n, m) = (a.len() / d.max(1), b.len() / d.max(1));
    let cab = squared_cost(a, b, d)?;
    let caa = squared_cost(a, a, d)?;
    let cbb = squared_cost(b, b, d)?;
    let ab = sinkhorn(&cab, n, m, opts)?.dual_value();
    let aa = sinkhorn(&caa, n, n, opts)?.dual_value();
    let bb = sinkhorn(&cbb, m, m, opts)?.dual_value();
    Ok(ab - 0.5 * (aa + bb))
}

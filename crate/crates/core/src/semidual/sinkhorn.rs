//! Sinkhorn's alternating scaling for entropic OT between discrete
//! measures `μ` (rows) and `ν` (columns).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SinkhornMode {
    /// Scaling vectors against `K = exp(−C/ε)`; fails on kernel underflow.
    Kernel,
    /// Log-domain potentials with max-shifted log-sum-exp.
    Log,
    /// Kernel domain unless `ε < 0.05·median(C)` or the kernel underflows.
    #[default]
    Auto,
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub log_a: Vector,
    pub log_b: Vector,
    /// `P = diag(a) K diag(b)`.
    pub plan: Matrix,
    /// `⟨P, C⟩ + ε KL(P ‖ μ⊗ν)`.
    pub primal: f64,
    /// `ε⟨μ, log(a/μ)⟩ + ε⟨ν, log(b/ν)⟩ − ε ΣP + ε`, a lower bound on the
    /// regularized cost that is tight at convergence.
    pub dual: f64,
    /// Largest `|a ⊙ (K b) / μ − 1|` right after each row update, over all
    /// iterations.
    pub max_row_residual: f64,
    /// Largest `|b ⊙ (Kᵀ a) / ν − 1|` right after each column update.
    pub max_col_residual: f64,
    pub used_log_domain: bool,
}

impl SinkhornResult {
    pub fn a(&self) -> Vector {
        self.log_a.map(f64::exp)
    }

    pub fn b(&self) -> Vector {
        self.log_b.map(f64::exp)
    }

    /// Row sums of the plan.
    pub fn row_marginal(&self) -> Vector {
        Vector::from_fn(self.plan.nrows(), |i, _| self.plan.row(i).sum())
    }

    pub fn col_marginal(&self) -> Vector {
        Vector::from_fn(self.plan.ncols(), |j, _| self.plan.column(j).sum())
    }
}

fn median(c: &Matrix) -> f64 {
    let mut xs: Vec<f64> = c.iter().copied().collect();
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Runs `iters` full iterations `a ← μ/(K b)`, `b ← ν/(Kᵀ a)` from `b₀ =
/// exp(warm_log_b)` (or ones). The row scaling needs no warm start since it
/// is recomputed from `b` first.
pub fn sinkhorn(
    cost: &Matrix,
    mu: &Vector,
    nu: &Vector,
    epsilon: f64,
    iters: usize,
    warm_log_b: Option<&Vector>,
    mode: SinkhornMode,
) -> Result<SinkhornResult> {
    let (m, n) = cost.shape();
    if mu.len() != m {
        return Err(Error::DimensionMismatch { context: "sinkhorn source weights", expected: m, actual: mu.len() });
    }
    if nu.len() != n {
        return Err(Error::DimensionMismatch { context: "sinkhorn target weights", expected: n, actual: nu.len() });
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    if iters == 0 {
        return Err(Error::invalid("iters", "must be at least 1"));
    }
    let log_b0 = match warm_log_b {
        Some(b) if b.len() != n => {
            return Err(Error::DimensionMismatch { context: "sinkhorn warm start", expected: n, actual: b.len() })
        }
        Some(b) => b.clone(),
        None => Vector::zeros(n),
    };
    let use_log = match mode {
        SinkhornMode::Log => true,
        SinkhornMode::Kernel => false,
        SinkhornMode::Auto => epsilon < 0.05 * median(cost),
    };
    if !use_log {
        match kernel_domain(cost, mu, nu, epsilon, iters, &log_b0) {
            Ok(r) => return Ok(r),
            Err(Error::KernelUnderflow { .. }) if mode == SinkhornMode::Auto => {
                log::debug!("kernel underflow at epsilon={epsilon:e}; switching to log domain");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(log_domain(cost, mu, nu, epsilon, iters, &log_b0))
}

fn kernel_domain(
    cost: &Matrix,
    mu: &Vector,
    nu: &Vector,
    epsilon: f64,
    iters: usize,
    log_b0: &Vector,
) -> Result<SinkhornResult> {
    let underflow = Error::KernelUnderflow { epsilon };
    let k = cost.map(|c| (-c / epsilon).exp());
    let mut b = log_b0.map(f64::exp);
    if b.iter().any(|x| !x.is_finite() || *x == 0.0) {
        return Err(underflow);
    }
    let mut a = Vector::zeros(mu.len());
    let (mut row_res, mut col_res) = (0.0f64, 0.0f64);
    for _ in 0..iters {
        let kb = &k * &b;
        if kb.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(underflow);
        }
        a = mu.component_div(&kb);
        row_res = row_res.max(a.component_mul(&kb).component_div(mu).add_scalar(-1.0).amax());
        let kta = k.tr_mul(&a);
        if kta.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(underflow);
        }
        b = nu.component_div(&kta);
        col_res = col_res.max(b.component_mul(&kta).component_div(nu).add_scalar(-1.0).amax());
    }
    if a.iter().chain(b.iter()).any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(underflow);
    }
    Ok(finish(cost, mu, nu, epsilon, a.map(f64::ln), b.map(f64::ln), row_res, col_res, false))
}

fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn log_domain(
    cost: &Matrix,
    mu: &Vector,
    nu: &Vector,
    epsilon: f64,
    iters: usize,
    log_b0: &Vector,
) -> SinkhornResult {
    let (m, n) = cost.shape();
    let mut f = Vector::zeros(m);
    let mut g = log_b0.clone();
    let (mut row_res, mut col_res) = (0.0f64, 0.0f64);
    for _ in 0..iters {
        for i in 0..m {
            let s = lse((0..n).map(|j| g[j] - cost[(i, j)] / epsilon));
            f[i] = mu[i].ln() - s;
            row_res = row_res.max((f[i] + s - mu[i].ln()).exp_m1().abs());
        }
        for j in 0..n {
            let s = lse((0..m).map(|i| f[i] - cost[(i, j)] / epsilon));
            g[j] = nu[j].ln() - s;
            col_res = col_res.max((g[j] + s - nu[j].ln()).exp_m1().abs());
        }
    }
    finish(cost, mu, nu, epsilon, f, g, row_res, col_res, true)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    cost: &Matrix,
    mu: &Vector,
    nu: &Vector,
    epsilon: f64,
    log_a: Vector,
    log_b: Vector,
    max_row_residual: f64,
    max_col_residual: f64,
    used_log_domain: bool,
) -> SinkhornResult {
    let (m, n) = cost.shape();
    let plan = Matrix::from_fn(m, n, |i, j| (log_a[i] + log_b[j] - cost[(i, j)] / epsilon).exp());
    let mut primal = 0.0;
    for i in 0..m {
        for j in 0..n {
            let p = plan[(i, j)];
            if p > 0.0 {
                primal += p * cost[(i, j)] + epsilon * p * (p.ln() - mu[i].ln() - nu[j].ln());
            }
        }
    }
    let dual = epsilon * (0..m).map(|i| mu[i] * (log_a[i] - mu[i].ln())).sum::<f64>()
        + epsilon * (0..n).map(|j| nu[j] * (log_b[j] - nu[j].ln())).sum::<f64>()
        - epsilon * plan.sum()
        + epsilon;
    SinkhornResult { log_a, log_b, plan, primal, dual, max_row_residual, max_col_residual, used_log_domain }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn uniform(n: usize) -> Vector {
        Vector::from_element(n, 1.0 / n as f64)
    }

    fn random_cost(m: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = stream(seed, "sinkhorn-test");
        Matrix::from_fn(m, n, |_, _| rng.random::<f64>())
    }

    #[test]
    fn scalar_fixed_point() {
        let c = Matrix::from_element(1, 1, 0.7);
        let one = Vector::from_element(1, 1.0);
        let r = sinkhorn(&c, &one, &one, 0.5, 1, None, SinkhornMode::Kernel).unwrap();
        assert!((r.a()[0] - (0.7f64 / 0.5).exp()).abs() < 1e-12);
        assert!((r.b()[0] - 1.0).abs() < 1e-15);
        assert!((r.plan[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_kernel_converges_at_once() {
        let c = Matrix::zeros(4, 3);
        let r = sinkhorn(&c, &uniform(4), &uniform(3), 0.2, 1, None, SinkhornMode::Kernel).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert!((r.plan[(i, j)] - 1.0 / 12.0).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn marginals_and_identities_on_random_instance() {
        let c = random_cost(8, 5, 1);
        let r = sinkhorn(&c, &uniform(8), &uniform(5), 0.1, 500, None, SinkhornMode::Kernel).unwrap();
        assert!((r.row_marginal() - uniform(8)).amax() < 1e-9);
        assert!((r.col_marginal() - uniform(5)).amax() < 1e-9);
        assert!(r.max_row_residual < 1e-12 && r.max_col_residual < 1e-12);
        assert!((r.primal - r.dual).abs() < 1e-9);
    }

    #[test]
    fn log_domain_agrees_and_survives_tiny_epsilon() {
        let c = random_cost(6, 4, 2);
        let k = sinkhorn(&c, &uniform(6), &uniform(4), 0.1, 300, None, SinkhornMode::Kernel).unwrap();
        let l = sinkhorn(&c, &uniform(6), &uniform(4), 0.1, 300, None, SinkhornMode::Log).unwrap();
        assert!((&k.plan - &l.plan).amax() < 1e-12);
        assert!((k.primal - l.primal).abs() < 1e-12);
        let big = c * 1e4;
        let err = sinkhorn(&big, &uniform(6), &uniform(4), 0.1, 10, None, SinkhornMode::Kernel);
        assert!(matches!(err, Err(Error::KernelUnderflow { .. })));
        let r = sinkhorn(&big, &uniform(6), &uniform(4), 0.1, 10, None, SinkhornMode::Auto).unwrap();
        assert!(r.used_log_domain && r.primal.is_finite());
    }

    #[test]
    fn warm_start_continues_the_iteration() {
        let c = random_cost(5, 3, 3);
        let (mu, nu) = (uniform(5), uniform(3));
        let full = sinkhorn(&c, &mu, &nu, 0.2, 7, None, SinkhornMode::Kernel).unwrap();
        let first = sinkhorn(&c, &mu, &nu, 0.2, 3, None, SinkhornMode::Kernel).unwrap();
        let rest = sinkhorn(&c, &mu, &nu, 0.2, 4, Some(&first.log_b), SinkhornMode::Kernel).unwrap();
        assert!((full.log_b - rest.log_b).amax() < 1e-12);
        let bad = sinkhorn(&c, &mu, &nu, 0.2, 1, Some(&Vector::zeros(4)), SinkhornMode::Kernel);
        assert!(matches!(bad, Err(Error::DimensionMismatch { .. })));
    }
}

//! Central finite-difference checks of analytic gradients.

use crate::error::{Error, Result};
use crate::oracle::{Capabilities, ProblemOracle};
use crate::Vector;

pub const DEFAULT_H_GRID: [f64; 3] = [1e-4, 1e-5, 1e-6];

/// `‖fd − g‖ / max(‖g‖, ‖fd‖, 1e-8)`.
pub fn relative_error(fd: &Vector, g: &Vector) -> f64 {
    (fd - g).norm() / g.norm().max(fd.norm()).max(1e-8)
}

/// Central-difference gradient of `f` at `x` with step `h·max(1, |x_k|)`.
pub fn central_difference<F>(f: &F, x: &Vector, h: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> Result<f64>,
{
    let mut fd = Vector::zeros(x.len());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let step = h * x[k].abs().max(1.0);
        probe[k] = x[k] + step;
        let up = f(&probe)?;
        probe[k] = x[k] - step;
        let down = f(&probe)?;
        probe[k] = x[k];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite { what: "finite-difference probe", iter: k });
        }
        fd[k] = (up - down) / (2.0 * step);
    }
    Ok(fd)
}

/// Smallest relative error over the step grid.
pub fn finite_diff_error<F>(f: F, x: &Vector, grad: &Vector, h_grid: &[f64]) -> Result<f64>
where
    F: Fn(&Vector) -> Result<f64>,
{
    if grad.len() != x.len() {
        return Err(Error::DimensionMismatch { context: "gradient check", expected: x.len(), actual: grad.len() });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "analytic gradient", iter: 0 });
    }
    if h_grid.is_empty() {
        return Err(Error::invalid("h_grid", "needs at least one step"));
    }
    let mut best = f64::INFINITY;
    for &h in h_grid {
        best = best.min(relative_error(&central_difference(&f, x, h)?, grad));
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(block name, best-step relative error)`.
    pub blocks: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    /// Fails with every offending block named.
    pub fn require(&self, tol: f64) -> Result<()> {
        let bad: Vec<String> = self
            .blocks
            .iter()
            .filter(|(_, e)| !(*e <= tol))
            .map(|(name, e)| format!("{name}: relative error {e:.3e} > {tol:.1e}"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::GradientCheck(bad.join("; ")))
        }
    }
}

/// Checks `∇_θF`, `∇_vF` against `F`, and `∇φ` against `φ`, for whichever
/// of these oracles the problem has. The problem must be deterministic at
/// the probe, which the exact oracles are by construction.
pub fn finite_diff_check(
    problem: &dyn ProblemOracle,
    theta: &Vector,
    v: &Vector,
    h_grid: &[f64],
) -> Result<GradCheckReport> {
    let caps = problem.capabilities();
    let mut blocks = Vec::new();
    if caps.contains(Capabilities::EXACT_GRAD) {
        let (gt, gv) = problem.exact_grads(theta, v)?;
        let et = finite_diff_error(|t| problem.value(t, v), theta, &gt, h_grid)?;
        let ev = finite_diff_error(|w| problem.value(theta, w), v, &gv, h_grid)?;
        blocks.push((format!("{} grad_theta", problem.name()), et));
        blocks.push((format!("{} grad_v", problem.name()), ev));
    }
    if caps.contains(Capabilities::EXACT_PHI) {
        let g = problem.grad_phi(theta)?;
        let e = finite_diff_error(|t| problem.phi(t), theta, &g, h_grid)?;
        blocks.push((format!("{} grad_phi", problem.name()), e));
    }
    if blocks.is_empty() {
        return Err(problem.missing(Capabilities::EXACT_GRAD));
    }
    Ok(GradCheckReport { blocks })
}

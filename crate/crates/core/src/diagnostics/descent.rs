//! Monte-Carlo certification of the one-step Lyapunov descent inequality
//!
//! `pα‖∇φ(θ_k)‖² + 2E_k[𝓔_{k+1}] ≤ 2𝓔_k + 4ηpακLσ̃²
//!   + 2σ²(pα²κL + p²(2p + (1−p)ημ)α³κ⁴/((1−p)²η²))`.
//!
//! The coin is integrated out exactly; only the sample `z` is simulated.

use crate::error::{Error, Result};
use crate::oracle::{Capabilities, ProblemOracle};
use crate::rng::RngStreams;
use crate::schedules::{check_descent_preconditions, StepSchedule};
use crate::solvers::lyapunov_weight;
use crate::state::IterateState;
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovSample {
    pub d_k: f64,
    pub r_k: f64,
    pub e_k: f64,
}

/// `𝓓 = φ(θ) − min φ`, `r = ‖v*(θ) − v‖²`, `𝓔 = 𝓓 + κL·pα/((1−p)η)·r`.
pub fn lyapunov_sample(
    problem: &dyn ProblemOracle,
    theta: &Vector,
    v: &Vector,
    p: f64,
    alpha: f64,
    eta: f64,
) -> Result<LyapunovSample> {
    problem.require(Capabilities::EXACT_PHI | Capabilities::EXACT_VSTAR)?;
    let min_phi = problem
        .min_phi()
        .ok_or_else(|| Error::invalid("problem", "min φ is unknown; the Lyapunov potential is undefined"))?;
    let d_k = problem.phi(theta)? - min_phi;
    let r_k = (problem.v_star(theta)? - v).norm_squared();
    let spec = problem.smoothness();
    let e_k = d_k + lyapunov_weight(spec.kappa(), spec.l(), p, alpha, eta) * r_k;
    Ok(LyapunovSample { d_k, r_k, e_k })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentVerdict {
    pub pass: bool,
    /// `pα‖∇φ‖² + 2·(estimated E_k[𝓔_{k+1}])`.
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`.
    pub slack: f64,
    /// Standard error of `lhs`.
    pub std_error: f64,
    pub expected_next: f64,
}

/// Right-hand side of the inequality.
pub fn descent_rhs(problem: &dyn ProblemOracle, e_k: f64, p: f64, alpha: f64, eta: f64) -> f64 {
    let s = problem.smoothness();
    let (kappa, l, mu) = (s.kappa(), s.l(), s.mu());
    2.0 * e_k
        + 4.0 * eta * p * alpha * kappa * l * s.sigma_tilde_sq
        + 2.0
            * s.sigma_sq
            * (p * alpha * alpha * kappa * l
                + p * p * (2.0 * p + (1.0 - p) * eta * mu) * alpha.powi(3) * kappa.powi(4)
                    / ((1.0 - p).powi(2) * eta * eta))
}

/// Checks the inequality at iteration `k` from the frozen `state`.
/// `𝓔_{k+1}` is weighted with the step sizes of iteration `k + 1`. Refuses
/// with [`Error::Precondition`] when `(α_k, η_k)` violate the step bounds,
/// since nothing is claimed there.
pub fn verify_descent_step(
    problem: &dyn ProblemOracle,
    state: &IterateState,
    schedule: &StepSchedule,
    k: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<DescentVerdict> {
    problem.require(
        Capabilities::EXACT_PHI | Capabilities::EXACT_VSTAR | Capabilities::STOCH_GRAD_THETA | Capabilities::STOCH_GRAD_V,
    )?;
    if mc_samples == 0 {
        return Err(Error::invalid("mc_samples", "must be at least 1"));
    }
    let p = schedule.p;
    let (alpha, eta) = schedule.at(k);
    let (alpha_next, eta_next) = schedule.at(k + 1);
    let check = check_descent_preconditions(problem.smoothness(), p, alpha, eta);
    if !check.holds {
        return Err(Error::Precondition(format!(
            "alpha={alpha:e} (bound {:e}), eta={eta:e} (bound {:e}), p={p}",
            check.alpha_bound,
            1.0 / (2.0 * problem.smoothness().l())
        )));
    }
    let (theta, v) = (&state.theta, &state.v);
    let now = lyapunov_sample(problem, theta, v, p, alpha, eta)?;
    let grad_sq = problem.grad_phi(theta)?.norm_squared();
    let mut streams = RngStreams::new(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    // Compensation terms keep the mean independent of summation order.
    let (mut c1, mut c2) = (0.0, 0.0);
    for _ in 0..mc_samples {
        let z = problem.draw_sample(&mut streams, 1);
        let theta_plus = theta - problem.stoch_grad_theta(theta, v, &z)? * alpha;
        let mut v_plus = v + problem.stoch_grad_v(theta, v, &z)? * eta;
        problem.project(&mut v_plus);
        let after_descent = lyapunov_sample(problem, &theta_plus, v, p, alpha_next, eta_next)?.e_k;
        let after_ascent = lyapunov_sample(problem, theta, &v_plus, p, alpha_next, eta_next)?.e_k;
        let y = p * after_descent + (1.0 - p) * after_ascent;
        if !y.is_finite() {
            return Err(Error::NonFinite { what: "Lyapunov potential", iter: k });
        }
        kahan_add(&mut sum, &mut c1, y);
        kahan_add(&mut sum_sq, &mut c2, y * y);
    }
    let n = mc_samples as f64;
    let mean = sum / n;
    let var = if mc_samples > 1 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    let std_error = 2.0 * (var / n).sqrt();
    let lhs = p * alpha * grad_sq + 2.0 * mean;
    let rhs = descent_rhs(problem, now.e_k, p, alpha, eta);
    let slack = rhs - lhs;
    Ok(DescentVerdict { pass: slack + 3.0 * std_error >= 0.0, lhs, rhs, slack, std_error, expected_next: mean })
}

fn kahan_add(sum: &mut f64, comp: &mut f64, x: f64) {
    let y = x - *comp;
    let t = *sum + y;
    *comp = (t - *sum) - y;
    *sum = t;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{QuadraticConfig, QuadraticSaddle};
    use crate::schedules::Regime;

    fn constant(q: &QuadraticSaddle, p: f64, alpha_fraction: f64) -> StepSchedule {
        let spec = *q.smoothness();
        let eta = 1.0 / (2.0 * spec.l());
        let alpha = alpha_fraction * crate::schedules::descent_alpha_bound(&spec, p, eta);
        StepSchedule::new(spec, p, Regime::Custom { alpha0: alpha, eta0: eta, alpha_decay: 0.0, eta_decay: 0.0 }, false)
            .unwrap()
    }

    #[test]
    fn lyapunov_identity_on_quadratic() {
        let q = QuadraticSaddle::generate(&QuadraticConfig::default()).unwrap();
        let (t, _) = q.initial_point();
        let v = q.core().v_star(&t) * 0.3 + Vector::from_element(q.dim_v(), 0.1);
        let s = lyapunov_sample(&q, &t, &v, 0.5, 1e-3, 1e-2).unwrap();
        assert_eq!(s.d_k, q.core().phi(&t));
        let from_gap = 2.0 / q.core().mu * (q.core().phi(&t) - q.core().value(&t, &v));
        assert!((s.r_k - from_gap).abs() <= 1e-10 * s.r_k.max(1.0));
        assert!(s.e_k >= s.d_k);
    }

    #[test]
    fn deterministic_step_has_positive_slack() {
        let q = QuadraticSaddle::generate(&QuadraticConfig::default()).unwrap();
        let sched = constant(&q, 0.5, 1.0);
        let (t, v) = q.initial_point();
        let verdict = verify_descent_step(&q, &IterateState::new(t, v), &sched, 0, 1, 0).unwrap();
        assert!(verdict.pass && verdict.slack > 0.0 && verdict.std_error == 0.0);
    }

    #[test]
    fn refuses_outside_the_step_bounds() {
        let q = QuadraticSaddle::generate(&QuadraticConfig::default()).unwrap();
        let sched = constant(&q, 0.5, 100.0);
        let (t, v) = q.initial_point();
        let r = verify_descent_step(&q, &IterateState::new(t, v), &sched, 0, 10, 0);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}

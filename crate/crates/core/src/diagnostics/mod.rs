//! Gradient checks, the one-step Lyapunov inequality, rate fits and noise
//! estimates.

mod descent;
mod gradcheck;
mod rate;

pub use descent::{descent_rhs, lyapunov_sample, verify_descent_step, DescentVerdict, LyapunovSample};
pub use gradcheck::{
    central_difference, finite_diff_check, finite_diff_error, relative_error, GradCheckReport, DEFAULT_H_GRID,
};
pub use rate::{average_series, fit_rate, log_grid, running_min_points, RateFit, MIN_FIT_POINTS};

use crate::error::{Error, Result};
use crate::oracle::{Capabilities, ProblemOracle};
use crate::rng::RngStreams;
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    /// Sample variance `E‖∇_θf(θ, v; z) − ∇_θF(θ, v)‖²`.
    pub sigma_sq: f64,
    /// Second moment `E‖∇_vf(θ, v*(θ); z)‖²`, when `v*` is available.
    pub sigma_tilde_sq: Option<f64>,
}

/// Monte-Carlo estimates of the two noise levels from `samples` draws.
pub fn noise_estimate(
    problem: &dyn ProblemOracle,
    theta: &Vector,
    v: &Vector,
    samples: usize,
    batch: usize,
    seed: u64,
) -> Result<NoiseEstimate> {
    problem.require(Capabilities::STOCH_GRAD_THETA | Capabilities::STOCH_GRAD_V)?;
    if samples < 2 {
        return Err(Error::invalid("samples", "need at least 2"));
    }
    let mut streams = RngStreams::new(seed);
    let v_star = if problem.capabilities().contains(Capabilities::EXACT_VSTAR) {
        Some(problem.v_star(theta)?)
    } else {
        None
    };
    let mut mean = Vector::zeros(problem.dim_theta());
    let mut m2 = 0.0;
    let mut second = 0.0;
    for i in 0..samples {
        let z = problem.draw_sample(&mut streams, batch);
        let g = problem.stoch_grad_theta(theta, v, &z)?;
        // Welford update of the mean vector and the summed squared deviation.
        let delta = &g - &mean;
        mean += &delta / (i + 1) as f64;
        m2 += delta.dot(&(&g - &mean));
        if let Some(vs) = &v_star {
            second += problem.stoch_grad_v(theta, vs, &z)?.norm_squared();
        }
    }
    let n = samples as f64;
    Ok(NoiseEstimate { sigma_sq: m2 / (n - 1.0), sigma_tilde_sq: v_star.map(|_| second / n) })
}

//! Single iterations of each algorithm.
//!
//! Every step draws its samples from `streams.sample`/`streams.noise`
//! before touching `streams.coin`, so runs that share a master seed see the
//! same data whenever their sequences of ascent and descent events agree.

use rand::Rng;

use crate::error::{Error, Result};
use crate::oracle::ProblemOracle;
use crate::rng::RngStreams;
use crate::state::IterateState;
use crate::Vector;

/// What an iteration changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// A single descent step on θ.
    Theta,
    /// A single projected ascent step on v.
    V,
    /// Ascent steps followed by one descent step (epoch-style algorithms).
    Epoch,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Theta => "theta",
            StepKind::V => "v",
            StepKind::Epoch => "epoch",
        }
    }
}

fn finite(g: Vector, what: &'static str, iter: usize) -> Result<Vector> {
    if g.iter().all(|x| x.is_finite()) {
        Ok(g)
    } else {
        Err(Error::NonFinite { what, iter })
    }
}

fn descend(state: &IterateState, g: &Vector, alpha: f64) -> Vector {
    &state.theta - g * alpha
}

fn ascend(problem: &dyn ProblemOracle, state: &IterateState, g: &Vector, eta: f64) -> Vector {
    let mut v = &state.v + g * eta;
    problem.project(&mut v);
    v
}

/// One RSGDA iteration: draw `z`, then with probability `p` take
/// `θ ← θ − α∇_θf(θ, v; z)`, otherwise `v ← Π(v + η∇_vf(θ, v; z))`.
///
/// With `fast` the coin decides which gradient is computed; otherwise both
/// candidate updates are formed and one is committed. Both modes consume
/// the streams identically and produce the same trajectory.
#[allow(clippy::too_many_arguments)]
pub fn rsgda_step(
    state: &mut IterateState,
    problem: &dyn ProblemOracle,
    alpha: f64,
    eta: f64,
    p: f64,
    streams: &mut RngStreams,
    batch: usize,
    fast: bool,
) -> Result<StepKind> {
    let z = problem.draw_sample(streams, batch);
    let descent = streams.coin.random::<f64>() < p;
    let iter = state.iter;
    if fast {
        if descent {
            let g = finite(problem.stoch_grad_theta(&state.theta, &state.v, &z)?, "theta gradient", iter)?;
            let theta = descend(state, &g, alpha);
            state.commit_theta(theta);
        } else {
            let g = finite(problem.stoch_grad_v(&state.theta, &state.v, &z)?, "v gradient", iter)?;
            let v = ascend(problem, state, &g, eta);
            state.commit_v(v);
        }
    } else {
        let gt = finite(problem.stoch_grad_theta(&state.theta, &state.v, &z)?, "theta gradient", iter)?;
        let gv = finite(problem.stoch_grad_v(&state.theta, &state.v, &z)?, "v gradient", iter)?;
        let theta_plus = descend(state, &gt, alpha);
        let v_plus = ascend(problem, state, &gv, eta);
        if descent {
            state.commit_theta(theta_plus);
        } else {
            state.commit_v(v_plus);
        }
    }
    Ok(if descent { StepKind::Theta } else { StepKind::V })
}

/// RSGDA with exact gradients; the coin is the only randomness.
pub fn rgda_step(
    state: &mut IterateState,
    problem: &dyn ProblemOracle,
    alpha: f64,
    eta: f64,
    p: f64,
    streams: &mut RngStreams,
) -> Result<StepKind> {
    let descent = streams.coin.random::<f64>() < p;
    let (gt, gv) = problem.exact_grads(&state.theta, &state.v)?;
    if descent {
        let g = finite(gt, "theta gradient", state.iter)?;
        let theta = descend(state, &g, alpha);
        state.commit_theta(theta);
        Ok(StepKind::Theta)
    } else {
        let g = finite(gv, "v gradient", state.iter)?;
        let v = ascend(problem, state, &g, eta);
        state.commit_v(v);
        Ok(StepKind::V)
    }
}

/// One projected stochastic ascent step with a fresh sample.
pub fn ascent_step(
    state: &mut IterateState,
    problem: &dyn ProblemOracle,
    eta: f64,
    streams: &mut RngStreams,
    batch: usize,
) -> Result<()> {
    let z = problem.draw_sample(streams, batch);
    let g = finite(problem.stoch_grad_v(&state.theta, &state.v, &z)?, "v gradient", state.iter)?;
    let v = ascend(problem, state, &g, eta);
    state.commit_v(v);
    Ok(())
}

/// One stochastic descent step with a fresh sample, at the current v.
pub fn descent_step(
    state: &mut IterateState,
    problem: &dyn ProblemOracle,
    alpha: f64,
    streams: &mut RngStreams,
    batch: usize,
) -> Result<()> {
    let z = problem.draw_sample(streams, batch);
    let g = finite(problem.stoch_grad_theta(&state.theta, &state.v, &z)?, "theta gradient", state.iter)?;
    let theta = descend(state, &g, alpha);
    state.commit_theta(theta);
    Ok(())
}

/// ESGDA: `m` projected stochastic ascent steps with fresh samples, then
/// one descent step evaluated at the updated `v_{k+1}`.
pub fn esgda_step(
    state: &mut IterateState,
    problem: &dyn ProblemOracle,
    alpha: f64,
    eta: f64,
    m: usize,
    streams: &mut RngStreams,
    batch: usize,
) -> Result<StepKind> {
    if m == 0 {
        return Err(Error::invalid("loop_size_m", "must be at least 1"));
    }
    for _ in 0..m {
        ascent_step(state, problem, eta, streams, batch)?;
    }
    descent_step(state, problem, alpha, streams, batch)?;
    Ok(StepKind::Epoch)
}

/// SGDA: one ascent step with sample `z'`, then one descent step with an
/// independent sample `z` at the updated v. Identical to ESGDA with `m = 1`.
pub fn sgda_step(
    state: &mut IterateState,
    problem: &dyn ProblemOracle,
    alpha: f64,
    eta: f64,
    streams: &mut RngStreams,
    batch: usize,
) -> Result<StepKind> {
    esgda_step(state, problem, alpha, eta, 1, streams, batch)
}

/// SGDmax: ascend until `φ(θ) − F(θ, v) ≤ δ`, then one descent step.
/// Returns the number of inner ascent steps.
#[allow(clippy::too_many_arguments)]
pub fn sgdmax_step(
    state: &mut IterateState,
    problem: &dyn ProblemOracle,
    alpha: f64,
    eta: f64,
    delta: f64,
    cap: usize,
    streams: &mut RngStreams,
    batch: usize,
) -> Result<usize> {
    if !(delta > 0.0) {
        return Err(Error::invalid("max_oracle_delta", format!("must be positive, got {delta}")));
    }
    let phi = problem.phi(&state.theta)?;
    let mut inner = 0;
    while phi - problem.value(&state.theta, &state.v)? > delta {
        if inner == cap {
            return Err(Error::InnerLoopCap { delta, cap });
        }
        ascent_step(state, problem, eta, streams, batch)?;
        inner += 1;
    }
    descent_step(state, problem, alpha, streams, batch)?;
    Ok(inner)
}

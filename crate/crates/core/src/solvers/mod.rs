//! The algorithm family and the run loop that drives it.

mod steps;

pub use steps::{
    ascent_step, descent_step, esgda_step, rgda_step, rsgda_step, sgda_step, sgdmax_step, StepKind,
};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{Capabilities, ProblemOracle};
use crate::rng::RngStreams;
use crate::schedules::StepSchedule;
use crate::state::IterateState;
use crate::Vector;

/// Cap on SGDmax inner ascent steps.
pub const SGDMAX_INNER_CAP: usize = 1_000_000;
/// Divergence guard threshold on `‖θ‖` and `φ`.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Rsgda,
    Esgda,
    Sgda,
    Sgdmax,
    Rgda,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Rsgda => "rsgda",
            Algorithm::Esgda => "esgda",
            Algorithm::Sgda => "sgda",
            Algorithm::Sgdmax => "sgdmax",
            Algorithm::Rgda => "rgda",
        }
    }

    pub fn required_capabilities(self) -> Capabilities {
        let stoch = Capabilities::STOCH_GRAD_THETA | Capabilities::STOCH_GRAD_V;
        match self {
            Algorithm::Rsgda | Algorithm::Esgda | Algorithm::Sgda => stoch,
            Algorithm::Rgda => Capabilities::EXACT_GRAD,
            Algorithm::Sgdmax => stoch | Capabilities::EXACT_GRAD | Capabilities::EXACT_PHI,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub schedule: StepSchedule,
    /// Inner ascent steps per epoch (ESGDA).
    pub loop_size_m: usize,
    /// Accuracy δ of the max-oracle (SGDmax).
    pub max_oracle_delta: f64,
    pub batch_size: usize,
    /// Outer iterations: single updates for RSGDA/RGDA, epochs otherwise.
    pub max_iters: usize,
    pub master_seed: u64,
    /// RSGDA computes only the gradient the coin selects.
    pub fast_mode: bool,
    /// Keep every `record_every`-th row; the running minimum still sees
    /// every iteration.
    pub record_every: usize,
    /// Record `approx_phi` every this many committed updates (0 = never).
    pub checkpoint_every: usize,
    /// Evaluate oracle-based diagnostics (φ, ∇φ, Lyapunov terms) per row.
    pub diagnostics: bool,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, schedule: StepSchedule, max_iters: usize, master_seed: u64) -> Self {
        Self {
            algorithm,
            schedule,
            loop_size_m: 1,
            max_oracle_delta: 1e-6,
            batch_size: 1,
            max_iters,
            master_seed,
            fast_mode: true,
            record_every: 1,
            checkpoint_every: 0,
            diagnostics: true,
        }
    }

    pub fn validate(&self, problem: &dyn ProblemOracle) -> Result<()> {
        problem.require(self.algorithm.required_capabilities())?;
        if self.algorithm == Algorithm::Esgda && self.loop_size_m == 0 {
            return Err(Error::invalid("loop_size_m", "must be at least 1"));
        }
        if self.algorithm == Algorithm::Sgdmax && !(self.max_oracle_delta > 0.0) {
            return Err(Error::invalid("max_oracle_delta", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// One trace row: step sizes and step kind of iteration `iter`, and
/// diagnostics evaluated at the state before that step. Oracle-dependent
/// columns are `None` when the problem cannot provide them.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub iter: usize,
    pub alpha_k: f64,
    pub eta_k: f64,
    pub step_kind: StepKind,
    pub grad_phi_norm_sq: Option<f64>,
    pub surrogate_grad_norm_sq: Option<f64>,
    pub phi: Option<f64>,
    pub d_k: Option<f64>,
    pub r_k: Option<f64>,
    pub e_k: Option<f64>,
    /// Inner ascent steps of this iteration (SGDmax).
    pub inner_steps: Option<usize>,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn theta_updated(&self) -> bool {
        matches!(self.step_kind, StepKind::Theta | StepKind::Epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    /// The divergence guard fired before iteration `iter`.
    Diverged { iter: usize },
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub records: Vec<RunRecord>,
    /// `min_{t ≤ k} ‖∇φ(θ_t)‖²` aligned with `records`.
    pub running_min: Vec<Option<f64>>,
    /// `(committed updates, approx φ)` pairs.
    pub checkpoints: Vec<(usize, f64)>,
    pub status: RunStatus,
    pub final_state: IterateState,
}

impl Trace {
    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    pub fn best_grad_phi_norm_sq(&self) -> Option<f64> {
        self.running_min.last().copied().flatten()
    }
}

/// Lyapunov weight `κL·pα/((1−p)η)` applied to `r_k`.
pub fn lyapunov_weight(kappa: f64, l: f64, p: f64, alpha: f64, eta: f64) -> f64 {
    kappa * l * p * alpha / ((1.0 - p) * eta)
}

struct Probe {
    grad_phi_norm_sq: Option<f64>,
    surrogate: Option<f64>,
    phi: Option<f64>,
    d_k: Option<f64>,
    r_k: Option<f64>,
    e_k: Option<f64>,
}

fn probe(problem: &dyn ProblemOracle, state: &IterateState, p: f64, alpha: f64, eta: f64) -> Result<Probe> {
    let caps = problem.capabilities();
    let exact_phi = caps.contains(Capabilities::EXACT_PHI);
    let grad_phi_norm_sq = if exact_phi { Some(problem.grad_phi(&state.theta)?.norm_squared()) } else { None };
    let surrogate = if caps.contains(Capabilities::EXACT_GRAD) {
        Some(problem.exact_grads(&state.theta, &state.v)?.0.norm_squared())
    } else {
        None
    };
    let phi = if exact_phi { Some(problem.phi(&state.theta)?) } else { None };
    let d_k = phi.zip(problem.min_phi()).map(|(f, m)| f - m);
    let r_k = if caps.contains(Capabilities::EXACT_VSTAR) {
        Some((problem.v_star(&state.theta)? - &state.v).norm_squared())
    } else {
        None
    };
    let spec = problem.smoothness();
    let e_k = d_k
        .zip(r_k)
        .map(|(d, r)| d + lyapunov_weight(spec.kappa(), spec.l(), p, alpha, eta) * r);
    Ok(Probe { grad_phi_norm_sq, surrogate, phi, d_k, r_k, e_k })
}

fn guard_tripped(problem: &dyn ProblemOracle, theta: &Vector) -> bool {
    if theta.iter().any(|x| !x.is_finite()) || theta.norm() > DIVERGENCE_THRESHOLD {
        return true;
    }
    if problem.capabilities().contains(Capabilities::EXACT_PHI) {
        match problem.phi(theta) {
            Ok(phi) => !phi.is_finite() || phi > DIVERGENCE_THRESHOLD,
            Err(_) => false,
        }
    } else {
        false
    }
}

/// Runs from the problem's own starting point.
pub fn run(config: &SolverConfig, problem: &dyn ProblemOracle) -> Result<Trace> {
    let (theta, v) = problem.initial_point();
    run_from(config, problem, IterateState::new(theta, v))
}

/// Runs `config.max_iters` outer iterations from `state`. Deterministic
/// given `config.master_seed` (the wall-time column aside).
pub fn run_from(config: &SolverConfig, problem: &dyn ProblemOracle, mut state: IterateState) -> Result<Trace> {
    config.validate(problem)?;
    if state.theta.len() != problem.dim_theta() {
        return Err(Error::DimensionMismatch {
            context: "initial theta",
            expected: problem.dim_theta(),
            actual: state.theta.len(),
        });
    }
    if state.v.len() != problem.dim_v() {
        return Err(Error::DimensionMismatch { context: "initial v", expected: problem.dim_v(), actual: state.v.len() });
    }
    let mut streams = RngStreams::new(config.master_seed);
    let p = config.schedule.p;
    let start = Instant::now();
    let mut records = Vec::with_capacity(config.max_iters / config.record_every + 1);
    let mut running_min = Vec::with_capacity(records.capacity());
    let mut checkpoints = Vec::new();
    let mut next_checkpoint = 0usize;
    let mut best: Option<f64> = None;
    let mut status = RunStatus::Completed;

    for k in 0..config.max_iters {
        if config.checkpoint_every > 0 && state.iter >= next_checkpoint {
            checkpoints.push((state.iter, problem.approx_phi(&state.theta)?));
            next_checkpoint = state.iter - state.iter % config.checkpoint_every + config.checkpoint_every;
        }
        if guard_tripped(problem, &state.theta) {
            status = RunStatus::Diverged { iter: k };
            break;
        }
        let (alpha, eta) = config.schedule.at(k);
        let keep = k % config.record_every == 0;
        let probe = if config.diagnostics { Some(probe(problem, &state, p, alpha, eta)?) } else { None };
        if let Some(g) = probe.as_ref().and_then(|pr| pr.grad_phi_norm_sq) {
            best = Some(best.map_or(g, |b: f64| b.min(g)));
        }
        let mut inner_steps = None;
        let step_kind = match config.algorithm {
            Algorithm::Rsgda => {
                rsgda_step(&mut state, problem, alpha, eta, p, &mut streams, config.batch_size, config.fast_mode)?
            }
            Algorithm::Rgda => rgda_step(&mut state, problem, alpha, eta, p, &mut streams)?,
            Algorithm::Esgda => {
                esgda_step(&mut state, problem, alpha, eta, config.loop_size_m, &mut streams, config.batch_size)?
            }
            Algorithm::Sgda => sgda_step(&mut state, problem, alpha, eta, &mut streams, config.batch_size)?,
            Algorithm::Sgdmax => {
                let n = sgdmax_step(
                    &mut state,
                    problem,
                    alpha,
                    eta,
                    config.max_oracle_delta,
                    SGDMAX_INNER_CAP,
                    &mut streams,
                    config.batch_size,
                )?;
                inner_steps = Some(n);
                StepKind::Epoch
            }
        };
        if keep {
            let pr = probe.unwrap_or(Probe {
                grad_phi_norm_sq: None,
                surrogate: None,
                phi: None,
                d_k: None,
                r_k: None,
                e_k: None,
            });
            records.push(RunRecord {
                iter: k,
                alpha_k: alpha,
                eta_k: eta,
                step_kind,
                grad_phi_norm_sq: pr.grad_phi_norm_sq,
                surrogate_grad_norm_sq: pr.surrogate,
                phi: pr.phi,
                d_k: pr.d_k,
                r_k: pr.r_k,
                e_k: pr.e_k,
                inner_steps,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
            running_min.push(best);
        }
    }
    if matches!(status, RunStatus::Completed) && guard_tripped(problem, &state.theta) {
        status = RunStatus::Diverged { iter: config.max_iters };
    }
    if config.checkpoint_every > 0
        && !matches!(status, RunStatus::Diverged { .. })
        && checkpoints.last().map(|&(i, _)| i) != Some(state.iter)
    {
        checkpoints.push((state.iter, problem.approx_phi(&state.theta)?));
    }
    Ok(Trace { records, running_min, checkpoints, status, final_state: state })
}

//! The problem interface shared by every solver and diagnostic.

use bitflags::bitflags;

use crate::error::{Error, Result};
use crate::rng::RngStreams;
use crate::smoothness::SmoothnessSpec;
use crate::Vector;

bitflags! {
    /// Which oracles a problem can answer.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
    pub struct Capabilities: u8 {
        const STOCH_GRAD_THETA = 1 << 0;
        const STOCH_GRAD_V = 1 << 1;
        /// Exact `∇F` and `F` itself.
        const EXACT_GRAD = 1 << 2;
        const EXACT_PHI = 1 << 3;
        const EXACT_VSTAR = 1 << 4;
        /// A nontrivial constraint set `𝒱` with a projection.
        const PROJECTION = 1 << 5;
    }
}

impl Capabilities {
    pub fn names(self) -> Vec<&'static str> {
        self.iter_names().map(|(name, _)| name).collect()
    }
}

/// One stochastic draw `z`. Every random quantity a gradient depends on is
/// fixed here, so gradients are deterministic functions of `(θ, v, z)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sample {
    /// Data indices (minibatch); empty for problems without data.
    pub indices: Vec<usize>,
    /// Additive noise on the θ-gradient, already scaled for the batch.
    pub theta_noise: Option<Vector>,
    /// Additive noise on the v-gradient, already scaled for the batch.
    pub v_noise: Option<Vector>,
}

pub trait ProblemOracle: Send + Sync {
    fn name(&self) -> &str;

    fn dim_theta(&self) -> usize;

    fn dim_v(&self) -> usize;

    fn capabilities(&self) -> Capabilities;

    fn smoothness(&self) -> &SmoothnessSpec;

    /// Starting point `(θ₀, v₀)` of the instance, with `v₀ ∈ 𝒱`.
    fn initial_point(&self) -> (Vector, Vector);

    /// Draws `z` from the sample stream (and the noise stream for synthetic
    /// noise). `batch` is the number of data points averaged per gradient.
    fn draw_sample(&self, streams: &mut RngStreams, batch: usize) -> Sample;

    fn stoch_grad_theta(&self, theta: &Vector, v: &Vector, z: &Sample) -> Result<Vector>;

    fn stoch_grad_v(&self, theta: &Vector, v: &Vector, z: &Sample) -> Result<Vector>;

    fn value(&self, _theta: &Vector, _v: &Vector) -> Result<f64> {
        Err(self.missing(Capabilities::EXACT_GRAD))
    }

    fn exact_grads(&self, _theta: &Vector, _v: &Vector) -> Result<(Vector, Vector)> {
        Err(self.missing(Capabilities::EXACT_GRAD))
    }

    /// Projection onto `𝒱`; the identity for unconstrained problems.
    fn project(&self, _v: &mut Vector) {}

    fn phi(&self, _theta: &Vector) -> Result<f64> {
        Err(self.missing(Capabilities::EXACT_PHI))
    }

    fn grad_phi(&self, _theta: &Vector) -> Result<Vector> {
        Err(self.missing(Capabilities::EXACT_PHI))
    }

    fn v_star(&self, _theta: &Vector) -> Result<Vector> {
        Err(self.missing(Capabilities::EXACT_VSTAR))
    }

    /// Best available value of `φ(θ)`: the closed form when the problem
    /// has one, otherwise a numerical inner maximization if the problem
    /// provides it. Not covered by the capability report.
    fn approx_phi(&self, theta: &Vector) -> Result<f64> {
        self.phi(theta)
    }

    /// `min_θ φ(θ)` when known.
    fn min_phi(&self) -> Option<f64> {
        None
    }

    fn missing(&self, missing: Capabilities) -> Error {
        Error::MissingCapability {
            problem: self.name().to_string(),
            missing,
        }
    }

    /// Fails unless every capability in `needed` is present.
    fn require(&self, needed: Capabilities) -> Result<()> {
        let lacking = needed - self.capabilities();
        if lacking.is_empty() {
            Ok(())
        } else {
            Err(self.missing(lacking))
        }
    }
}

/// The capability report solvers and diagnostics gate on.
pub fn problem_oracle_contract(problem: &dyn ProblemOracle) -> Capabilities {
    problem.capabilities()
}

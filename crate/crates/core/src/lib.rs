//! Randomized stochastic gradient descent ascent (RSGDA) and its relatives
//! for nonconvex-strongly-concave problems `min_θ max_{v∈𝒱} F(θ, v)`.
//!
//! The crate is organized around [`oracle::ProblemOracle`]: problems expose
//! stochastic gradients and, when they can, closed forms for
//! `φ(θ) = max_v F(θ, v)`, `∇φ` and the maximizer `v*(θ)`. Solvers and
//! diagnostics consult the capability report and refuse requests a problem
//! cannot serve.

pub mod diagnostics;
pub mod error;
pub mod io;
pub mod oracle;
pub mod problems;
pub mod rng;
pub mod schedules;
pub mod semidual;
pub mod smoothness;
pub mod solvers;
pub mod state;

pub use error::{Error, Result};
pub use oracle::{Capabilities, ProblemOracle, Sample};
pub use rng::RngStreams;
pub use smoothness::{derive_constants, DerivedConstants, SmoothnessSpec};
pub use state::IterateState;

/// Dense double-precision column vector used for both blocks.
pub type Vector = nalgebra::DVector<f64>;
/// Dense double-precision matrix.
pub type Matrix = nalgebra::DMatrix<f64>;

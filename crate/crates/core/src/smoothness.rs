//! Regularity constants of a min-max objective `F(θ, v)`.
//!
//! `L` bounds the gradient-Lipschitz constant of `F` jointly in both
//! variables and `mu` the strong-concavity modulus of `v ↦ F(θ, v)`. The
//! condition number `κ = L/μ` is always derived, never stored independently,
//! so an inconsistent `(L, μ, κ)` triple cannot be built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSpec {
    l: f64,
    mu: f64,
    /// Bound on `E‖∇_θ f(θ, v; z) − ∇_θ F(θ, v)‖²`.
    pub sigma_sq: f64,
    /// `E‖∇_v f(θ, v*(θ); z)‖²`, treated as a uniform bound over θ.
    pub sigma_tilde_sq: f64,
    /// Two-sided variance bound used by the large-minibatch regime.
    pub sigma_bar_sq: Option<f64>,
}

impl SmoothnessSpec {
    pub fn new(l: f64, mu: f64) -> Result<Self> {
        Self::with_noise(l, mu, 0.0, 0.0)
    }

    pub fn with_noise(l: f64, mu: f64, sigma_sq: f64, sigma_tilde_sq: f64) -> Result<Self> {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidSmoothness(format!("L must be positive, got {l}")));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidSmoothness(format!("mu must be positive, got {mu}")));
        }
        if mu > l {
            return Err(Error::InvalidSmoothness(format!(
                "mu={mu} exceeds L={l}; strong concavity cannot exceed smoothness"
            )));
        }
        for (name, value) in [("sigma_sq", sigma_sq), ("sigma_tilde_sq", sigma_tilde_sq)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidSmoothness(format!(
                    "{name} must be non-negative, got {value}"
                )));
            }
        }
        Ok(Self {
            l,
            mu,
            sigma_sq,
            sigma_tilde_sq,
            sigma_bar_sq: None,
        })
    }

    pub fn with_sigma_bar_sq(mut self, sigma_bar_sq: f64) -> Result<Self> {
        if !(sigma_bar_sq.is_finite() && sigma_bar_sq >= 0.0) {
            return Err(Error::InvalidSmoothness(format!(
                "sigma_bar_sq must be non-negative, got {sigma_bar_sq}"
            )));
        }
        self.sigma_bar_sq = Some(sigma_bar_sq);
        Ok(self)
    }

    /// Same constants with the noise levels replaced.
    pub fn with_noise_levels(mut self, sigma_sq: f64, sigma_tilde_sq: f64) -> Self {
        self.sigma_sq = sigma_sq;
        self.sigma_tilde_sq = sigma_tilde_sq;
        self
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.l / self.mu
    }

    pub fn derived(&self) -> DerivedConstants {
        DerivedConstants {
            phi_smoothness: 2.0 * self.kappa() * self.l,
            vstar_lipschitz: self.kappa(),
        }
    }
}

/// Constants implied by [`SmoothnessSpec`]: `φ` is `2κL`-smooth and the
/// maximizer map `v*` is `κ`-Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    pub phi_smoothness: f64,
    pub vstar_lipschitz: f64,
}

/// Validates `(L, μ)` and returns the derived constants.
pub fn derive_constants(l: f64, mu: f64) -> Result<DerivedConstants> {
    Ok(SmoothnessSpec::new(l, mu)?.derived())
}

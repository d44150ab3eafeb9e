//! Step-size schedules `(α_k, η_k)` and the one-step admissibility bounds.
//!
//! The descent step on θ uses `α_k`, the ascent step on v uses `η_k`, and
//! `p` is the probability of a descent step. Every regime below emits
//! positive, non-increasing `α_k`, `η_k` and `α_k/η_k`. The one-step
//! inequality for the potential holds when
//!
//! ```text
//! η_k ≤ 1/(2L)   and   α_k ≤ (1−p) η_k / (4κ² √(p(2p + (1−p) η_k μ)))
//! ```
//!
//! Some published constants exceed these bounds (the constant deterministic
//! schedule by exactly 2×). In strict mode the whole sequence is rescaled
//! uniformly so that the bounds hold at every k; pointwise clamping would
//! break the monotonicity of `α_k/η_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smoothness::SmoothnessSpec;

/// Largest admissible descent step for a given ascent step.
pub fn descent_alpha_bound(spec: &SmoothnessSpec, p: f64, eta: f64) -> f64 {
    let kappa = spec.kappa();
    (1.0 - p) * eta / (4.0 * kappa * kappa * (p * (2.0 * p + (1.0 - p) * eta * spec.mu())).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreconditionCheck {
    pub holds: bool,
    pub eta_ok: bool,
    /// `bound / α`; at least 1 when the descent bound holds.
    pub margin: f64,
    pub alpha_bound: f64,
}

/// Tests both step-size bounds. The α comparison is relative to a few ulps
/// so that `α` set to the bound itself passes.
pub fn check_descent_preconditions(
    spec: &SmoothnessSpec,
    p: f64,
    alpha: f64,
    eta: f64,
) -> PreconditionCheck {
    let alpha_bound = descent_alpha_bound(spec, p, eta);
    let eta_ok = eta <= 1.0 / (2.0 * spec.l()) * (1.0 + 4.0 * f64::EPSILON);
    let margin = alpha_bound / alpha;
    let alpha_ok = margin >= 1.0 - 4.0 * f64::EPSILON;
    PreconditionCheck {
        holds: eta_ok && alpha_ok && p > 0.0 && p < 1.0,
        eta_ok,
        margin,
        alpha_bound,
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("p", format!("descent probability must lie in (0, 1), got {p}")))
    }
}

fn check_positive(name: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be positive, got {x}")))
    }
}

/// Whether `p` lies outside `[1/κ, 1/2]`, where the constant-step rates
/// keep their best constants.
pub fn rate_constant_degrades(spec: &SmoothnessSpec, p: f64) -> bool {
    p < 1.0 / spec.kappa() || p > 0.5
}

/// Constant steps for exact gradients: `η = 1/(2L)` and
/// `α = (1−p) / (4κ²L √(p(2p + (1−p)/(2κ))))`.
pub fn rgda_constant(spec: &SmoothnessSpec, p: f64) -> Result<(f64, f64)> {
    check_p(p)?;
    let (l, kappa) = (spec.l(), spec.kappa());
    let eta = 1.0 / (2.0 * l);
    let alpha =
        (1.0 - p) / (4.0 * kappa * kappa * l) / (p * (2.0 * p + (1.0 - p) / (2.0 * kappa))).sqrt();
    Ok((alpha, eta))
}

/// The variant with `η = 1/L` and `α = (1−p) / (2κ²L √(p(2p + (1−p)/κ)))`.
pub fn rgda_constant_long(spec: &SmoothnessSpec, p: f64) -> Result<(f64, f64)> {
    check_p(p)?;
    let (l, kappa) = (spec.l(), spec.kappa());
    let eta = 1.0 / l;
    let alpha = (1.0 - p) / (2.0 * kappa * kappa * l) / (p * (2.0 * p + (1.0 - p) / kappa)).sqrt();
    Ok((alpha, eta))
}

/// `η_k = 1/(2L(k+1)^e)` and `α_k = (1−p)η_k / (2κ²(k+1)^{1/5} √(p(2p+(1−p)η_kμ)))`.
fn power_schedule(spec: &SmoothnessSpec, p: f64, eta_exp: f64, k: usize) -> (f64, f64) {
    let ratio = |k: usize| -> (f64, f64) {
        let t = (k + 1) as f64;
        let eta = 1.0 / (2.0 * spec.l() * t.powf(eta_exp));
        let kappa = spec.kappa();
        let r = (1.0 - p)
            / (2.0 * kappa * kappa * t.powf(0.2) * (p * (2.0 * p + (1.0 - p) * eta * spec.mu())).sqrt());
        (eta, r)
    };
    let (_, r0) = ratio(0);
    let (eta, rk) = ratio(k);
    // log(α_k/η_k) is concave in log(k+1), so its running minimum over
    // 0..=k is attained at an endpoint; this envelope keeps α/η monotone
    // for very small p where the raw ratio first increases.
    (eta * r0.min(rk), eta)
}

/// Decreasing steps for stochastic gradients.
pub fn rsgda_decreasing(spec: &SmoothnessSpec, p: f64, k: usize) -> Result<(f64, f64)> {
    check_p(p)?;
    Ok(power_schedule(spec, p, 0.4, k))
}

/// The variant `α_k = (1−p)η_k / (4pκ²(k+1)^{1/5})` with the same `η_k`.
pub fn rsgda_decreasing_simple(spec: &SmoothnessSpec, p: f64, k: usize) -> Result<(f64, f64)> {
    check_p(p)?;
    let t = (k + 1) as f64;
    let eta = 1.0 / (2.0 * spec.l() * t.powf(0.4));
    let kappa = spec.kappa();
    Ok(((1.0 - p) * eta / (4.0 * p * kappa * kappa * t.powf(0.2)), eta))
}

/// Decreasing steps with `η_k = 1/(2L(k+1)^{2/5+ζ})` for almost-sure rates.
pub fn rsgda_as_schedule(spec: &SmoothnessSpec, p: f64, zeta: f64, k: usize) -> Result<(f64, f64)> {
    check_p(p)?;
    if !(zeta.is_finite() && zeta > 0.0) {
        return Err(Error::invalid("zeta", format!("must be positive, got {zeta}")));
    }
    Ok(power_schedule(spec, p, 0.4 + zeta, k))
}

/// Which of the four series conditions behind the almost-sure rate hold
/// for `α_k ~ k^{-a}`, `η_k ~ k^{-b}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Summability {
    pub alpha_diverges: bool,
    pub alpha_sq_converges: bool,
    pub eta_alpha_converges: bool,
    pub alpha_cube_over_eta_sq_converges: bool,
}

impl Summability {
    pub fn all(&self) -> bool {
        self.alpha_diverges
            && self.alpha_sq_converges
            && self.eta_alpha_converges
            && self.alpha_cube_over_eta_sq_converges
    }
}

/// Decides the series conditions from the decay exponents alone
/// (`Σ k^{-s}` converges iff `s > 1`).
pub fn summability_from_exponents(alpha_exp: f64, eta_exp: f64) -> Summability {
    Summability {
        alpha_diverges: alpha_exp <= 1.0,
        alpha_sq_converges: 2.0 * alpha_exp > 1.0,
        eta_alpha_converges: alpha_exp + eta_exp > 1.0,
        alpha_cube_over_eta_sq_converges: 3.0 * alpha_exp - 2.0 * eta_exp > 1.0,
    }
}

/// Exponents `(a, b)` of `α_k ~ k^{-a}`, `η_k ~ k^{-b}` for the almost-sure
/// schedule.
pub fn as_schedule_exponents(zeta: f64) -> (f64, f64) {
    (0.6 + zeta, 0.4 + zeta)
}

/// Whether the almost-sure schedule with offset `ζ` satisfies all four
/// series conditions. Holds exactly for `0 < ζ ≤ 2/5`.
pub fn as_schedule_summable(zeta: f64) -> bool {
    let (a, b) = as_schedule_exponents(zeta);
    summability_from_exponents(a, b).all()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPrecision {
    pub alpha: f64,
    pub eta: f64,
    /// Iterations after which the expected min-gradient norm is below ε.
    pub k_min: f64,
}

/// Constant steps for a target precision `ε` with stochastic gradients.
/// `σ` is replaced by `max(σ, σ̃, 1)` as the guarantee requires.
pub fn rsgda_fixed_precision(
    spec: &SmoothnessSpec,
    p: f64,
    epsilon: f64,
    d0: f64,
    r0: f64,
) -> Result<FixedPrecision> {
    check_p(p)?;
    check_positive("epsilon", epsilon)?;
    if spec.sigma_sq == 0.0 {
        return Err(Error::invalid(
            "sigma_sq",
            "zero gradient noise; use the constant deterministic schedule (rgda_constant) instead",
        ));
    }
    let sigma = spec.sigma_sq.sqrt().max(spec.sigma_tilde_sq.sqrt()).max(1.0);
    let s2 = sigma * sigma;
    let s3 = s2 * sigma;
    let (l, kappa) = (spec.l(), spec.kappa());
    let e2 = epsilon * epsilon;
    let e3 = e2 * epsilon;
    let q = (1.0 - p) / p;
    let eta = e2 / (24.0 * kappa * l * s2);
    let terms = [
        e2 / (12.0 * kappa * l * s2),
        q * e3 / (48.0 * 3f64.sqrt() * kappa.powi(3) * l * s3),
        q.sqrt() * e2 / (12.0 * 2f64.sqrt() * kappa * kappa * l * s2),
        (1.0 - p)
            / (8.0 * kappa * kappa * l * (p * (2.0 * p + (1.0 - p) * e2 / (24.0 * kappa * kappa * s2))).sqrt()),
    ];
    let alpha = e2 / (12.0 * kappa * l * s2) * terms.iter().copied().fold(f64::INFINITY, f64::min);
    let bounds = [
        12.0 * d0 * kappa * l * s2 / (p * e2),
        48.0 * 3f64.sqrt() * d0 * kappa.powi(3) * l * s3 / ((1.0 - p) * e3),
        12.0 * 2f64.sqrt() * d0 * kappa * kappa * l * s2 / ((p * (1.0 - p)).sqrt() * e2),
        8.0 * kappa * kappa * l * (2.0 + (1.0 - p) * e2 / (24.0 * p * kappa * kappa * s2)).sqrt()
            / (1.0 - p),
        kappa * kappa * l * l * r0 / (1.0 - p),
    ];
    let k_min = 12.0 / e2 * bounds.iter().copied().fold(0.0, f64::max);
    Ok(FixedPrecision { alpha, eta, k_min })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LargeBatch {
    pub alpha: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub total_oracle_budget: u64,
}

/// Constant deterministic steps with a minibatch large enough that the
/// variance term of the bound is at most `ε²/2`.
pub fn rsgda_large_batch(
    spec: &SmoothnessSpec,
    p: f64,
    epsilon: f64,
    d0: f64,
    r0: f64,
) -> Result<LargeBatch> {
    check_p(p)?;
    check_positive("epsilon", epsilon)?;
    let sigma_bar_sq = spec
        .sigma_bar_sq
        .ok_or_else(|| Error::invalid("sigma_bar_sq", "the large-batch regime needs a two-sided variance bound"))?;
    let (alpha, eta) = rgda_constant(spec, p)?;
    let (l, kappa) = (spec.l(), spec.kappa());
    let e2 = epsilon * epsilon;
    let bracket = (1.0 - p) / (2.0 * kappa * kappa * (p * (2.0 * p + (1.0 - p) / (2.0 * kappa))).sqrt()) + 4.0;
    let m = (2.0 * kappa * sigma_bar_sq / (e2 / 2.0) * bracket).ceil();
    let batch_size = if m.is_finite() && m >= 1.0 { m as usize } else { 1 };
    let k = 2.0 / e2
        * (8.0 * kappa * kappa * l * (2.0 + (1.0 - p) / (2.0 * p * kappa)).sqrt() * d0 + 2.0 * kappa * l * l * r0)
        / (1.0 - p);
    let iterations = k.ceil().max(1.0) as u64;
    Ok(LargeBatch {
        alpha,
        eta,
        batch_size,
        iterations,
        total_oracle_budget: iterations * batch_size as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum InterpVariant {
    AlmostSure { zeta: f64 },
    Anytime,
    Fixed { epsilon: f64, d0: f64, r0: f64 },
}

/// Steps for the interpolation setting (`σ̃² = 0`), with `η = 1/(2L)`.
pub fn interpolation_schedule(
    spec: &SmoothnessSpec,
    p: f64,
    variant: InterpVariant,
    k: usize,
) -> Result<(f64, f64)> {
    check_p(p)?;
    let eta = 1.0 / (2.0 * spec.l());
    let root = (p * (2.0 * p + (1.0 - p) * eta * spec.mu())).sqrt();
    let t = (k + 1) as f64;
    match variant {
        InterpVariant::AlmostSure { zeta } => {
            if !(zeta.is_finite() && zeta > 0.0) {
                return Err(Error::invalid("zeta", format!("must be positive, got {zeta}")));
            }
            Ok((eta / (4.0 * t.powf(0.5 + zeta) * root), eta))
        }
        InterpVariant::Anytime => Ok((eta / (4.0 * t.sqrt() * root), eta)),
        InterpVariant::Fixed { epsilon, d0, r0 } => {
            let fp = interp_fixed(spec, p, epsilon, d0, r0)?;
            Ok((fp.alpha, fp.eta))
        }
    }
}

/// Constant steps for precision `ε` in the interpolation setting; `σ` is
/// replaced by `max(σ, 1)`.
pub fn interp_fixed(spec: &SmoothnessSpec, p: f64, epsilon: f64, d0: f64, r0: f64) -> Result<FixedPrecision> {
    check_p(p)?;
    check_positive("epsilon", epsilon)?;
    let sigma = spec.sigma_sq.sqrt().max(1.0);
    let (l, kappa) = (spec.l(), spec.kappa());
    let e2 = epsilon * epsilon;
    let eta = 1.0 / (2.0 * l);
    let terms = [
        e2 / (10.0 * kappa * l * sigma * sigma),
        (1.0 - p) * epsilon / (2.0 * 10f64.sqrt() * kappa * kappa * l * p * sigma),
        ((1.0 - p) / p).sqrt() * e2 / (2.0 * 5f64.sqrt() * kappa * kappa.sqrt() * l * sigma),
        (1.0 - p) / (8.0 * kappa * kappa * l * (p * (2.0 * p + (1.0 - p) / kappa)).sqrt()),
    ];
    let alpha = terms.iter().copied().fold(f64::INFINITY, f64::min);
    // Each term of the bound is at most ε²/5: the D0 term needs
    // k ≥ 10 D0 / (α p ε²), the r0 term k ≥ 20 κ L² r0 / ((1−p) ε²).
    let k_min = (10.0 * d0 / (alpha * p * e2)).max(20.0 * kappa * l * l * r0 / ((1.0 - p) * e2));
    Ok(FixedPrecision { alpha, eta, k_min })
}

/// The step-size regime of a [`StepSchedule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Regime {
    RgdaConstant {
        /// `η = 1/L` with the matching larger `α`.
        #[serde(default)]
        long_steps: bool,
    },
    RsgdaDecreasing {
        /// `α_k = (1−p)η_k / (4pκ²(k+1)^{1/5})`.
        #[serde(default)]
        simplified: bool,
    },
    RsgdaAlmostSure {
        zeta: f64,
    },
    RsgdaFixedPrecision {
        epsilon: f64,
        d0: f64,
        r0: f64,
    },
    RsgdaLargeBatch {
        epsilon: f64,
        d0: f64,
        r0: f64,
    },
    InterpAlmostSure {
        zeta: f64,
    },
    InterpAnytime,
    InterpFixed {
        epsilon: f64,
        d0: f64,
        r0: f64,
    },
    /// `α_k = α₀/(k+1)^a`, `η_k = η₀/(k+1)^b` with `a ≥ b ≥ 0`.
    Custom {
        alpha0: f64,
        eta0: f64,
        #[serde(default)]
        alpha_decay: f64,
        #[serde(default)]
        eta_decay: f64,
    },
}

/// A validated schedule: a regime, the descent probability, and the
/// strict-mode rescaling factors computed once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    pub regime: Regime,
    pub p: f64,
    spec: SmoothnessSpec,
    strict: bool,
    alpha_scale: f64,
    eta_scale: f64,
    violation: f64,
}

impl StepSchedule {
    pub fn new(spec: SmoothnessSpec, p: f64, regime: Regime, strict: bool) -> Result<Self> {
        check_p(p)?;
        match regime {
            Regime::RsgdaAlmostSure { zeta } | Regime::InterpAlmostSure { zeta } => {
                if !(zeta.is_finite() && zeta > 0.0) {
                    return Err(Error::invalid("zeta", format!("must be positive, got {zeta}")));
                }
            }
            Regime::Custom { alpha0, eta0, alpha_decay, eta_decay } => {
                check_positive("alpha0", alpha0)?;
                check_positive("eta0", eta0)?;
                if !(eta_decay >= 0.0 && alpha_decay >= eta_decay) {
                    return Err(Error::invalid(
                        "alpha_decay",
                        format!(
                            "need alpha_decay >= eta_decay >= 0 for monotone alpha/eta, got {alpha_decay} and {eta_decay}"
                        ),
                    ));
                }
            }
            _ => {}
        }
        let mut schedule = Self {
            regime,
            p,
            spec,
            strict,
            alpha_scale: 1.0,
            eta_scale: 1.0,
            violation: 1.0,
        };
        if let Regime::RgdaConstant { .. } | Regime::RsgdaLargeBatch { .. } = regime {
            if rate_constant_degrades(&spec, p) {
                log::warn!(
                    "p = {p} lies outside [1/kappa, 1/2] = [{:.4}, 0.5]; the rate constant degrades",
                    1.0 / spec.kappa()
                );
            }
        }
        // Every regime has non-increasing η_k and a ratio bound_k/α_k that
        // is non-decreasing in k, so k = 0 decides both rescalings.
        let (alpha0, eta0) = schedule.raw(0)?;
        let eta_cap = 1.0 / (2.0 * spec.l());
        let eta_factor = (eta0 / eta_cap).max(1.0);
        let eta_scale = 1.0 / eta_factor;
        let bound = descent_alpha_bound(&spec, p, eta0 * eta_scale);
        let alpha_factor = (alpha0 / bound).max(1.0);
        schedule.violation = alpha_factor.max(eta_factor);
        if strict {
            schedule.eta_scale = eta_scale;
            schedule.alpha_scale = 1.0 / alpha_factor;
        }
        Ok(schedule)
    }

    /// The regime's own formula, before any strict-mode rescaling.
    pub fn raw(&self, k: usize) -> Result<(f64, f64)> {
        let (spec, p) = (&self.spec, self.p);
        match self.regime {
            Regime::RgdaConstant { long_steps: false } => rgda_constant(spec, p),
            Regime::RgdaConstant { long_steps: true } => rgda_constant_long(spec, p),
            Regime::RsgdaDecreasing { simplified: false } => rsgda_decreasing(spec, p, k),
            Regime::RsgdaDecreasing { simplified: true } => rsgda_decreasing_simple(spec, p, k),
            Regime::RsgdaAlmostSure { zeta } => rsgda_as_schedule(spec, p, zeta, k),
            Regime::RsgdaFixedPrecision { epsilon, d0, r0 } => {
                let fp = rsgda_fixed_precision(spec, p, epsilon, d0, r0)?;
                Ok((fp.alpha, fp.eta))
            }
            Regime::RsgdaLargeBatch { epsilon, d0, r0 } => {
                let lb = rsgda_large_batch(spec, p, epsilon, d0, r0)?;
                Ok((lb.alpha, lb.eta))
            }
            Regime::InterpAlmostSure { zeta } => {
                interpolation_schedule(spec, p, InterpVariant::AlmostSure { zeta }, k)
            }
            Regime::InterpAnytime => interpolation_schedule(spec, p, InterpVariant::Anytime, k),
            Regime::InterpFixed { epsilon, d0, r0 } => {
                let fp = interp_fixed(spec, p, epsilon, d0, r0)?;
                Ok((fp.alpha, fp.eta))
            }
            Regime::Custom { alpha0, eta0, alpha_decay, eta_decay } => {
                let t = (k + 1) as f64;
                Ok((alpha0 / t.powf(alpha_decay), eta0 / t.powf(eta_decay)))
            }
        }
    }

    /// `(α_k, η_k)` as emitted to the solver.
    pub fn at(&self, k: usize) -> (f64, f64) {
        let (alpha, eta) = self.raw(k).expect("schedule parameters were validated at construction");
        (alpha * self.alpha_scale, eta * self.eta_scale)
    }

    pub fn spec(&self) -> &SmoothnessSpec {
        &self.spec
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    /// Factor by which the raw schedule exceeds the admissibility bounds
    /// (1 when compliant). Strict mode divides it out.
    pub fn violation_factor(&self) -> f64 {
        self.violation
    }

    /// Whether every emitted pair satisfies the admissibility bounds.
    pub fn is_compliant(&self) -> bool {
        self.strict || self.violation <= 1.0
    }

    /// Minibatch size prescribed by the regime, if any.
    pub fn batch_size(&self) -> Option<usize> {
        match self.regime {
            Regime::RsgdaLargeBatch { epsilon, d0, r0 } => {
                rsgda_large_batch(&self.spec, self.p, epsilon, d0, r0).ok().map(|lb| lb.batch_size)
            }
            _ => None,
        }
    }

    /// Iteration count guaranteeing precision ε, for fixed-precision regimes.
    pub fn k_min(&self) -> Option<f64> {
        match self.regime {
            Regime::RsgdaFixedPrecision { epsilon, d0, r0 } => {
                rsgda_fixed_precision(&self.spec, self.p, epsilon, d0, r0).ok().map(|f| f.k_min)
            }
            Regime::InterpFixed { epsilon, d0, r0 } => {
                interp_fixed(&self.spec, self.p, epsilon, d0, r0).ok().map(|f| f.k_min)
            }
            Regime::RsgdaLargeBatch { epsilon, d0, r0 } => rsgda_large_batch(&self.spec, self.p, epsilon, d0, r0)
                .ok()
                .map(|lb| lb.iterations as f64),
            _ => None,
        }
    }
}

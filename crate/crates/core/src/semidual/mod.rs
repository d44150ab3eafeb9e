//! Semi-dual entropic optimal transport.
//!
//! For a source point `x`, targets `y_j` with weights `ν_j` and potentials
//! `v`, the semi-dual integrand is
//! `h(x, v) = Σ_j ν_j v_j − ε log Σ_j ν_j exp((v_j − c(x, y_j))/ε) + offset`.
//! Everything here works on the cost vector `c_j = c(x, y_j)`; the cost is
//! squared Euclidean.

mod model;
mod problem;
mod sinkhorn;

pub use model::{Activation, MapModel};
pub use problem::{
    synthetic_clouds, OtConfig, SemiDualInstance, SemiDualProblem, SinkhornLearner, TransportMode,
};
pub use sinkhorn::{sinkhorn, SinkhornMode, SinkhornResult};

use serde::{Deserialize, Serialize};

use crate::Vector;

/// Constant added to `h`. Gradients and maximizers do not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Offset {
    /// `−ε`: `E[h]` at the maximizer is `W_ε − ε`.
    #[default]
    MinusEps,
    /// `+ε`.
    PlusEps,
    /// No constant: `max_v E[h] = W_ε` exactly.
    Zero,
}

impl Offset {
    pub fn value(self, epsilon: f64) -> f64 {
        match self {
            Offset::MinusEps => -epsilon,
            Offset::PlusEps => epsilon,
            Offset::Zero => 0.0,
        }
    }
}

pub fn sq_euclidean(x: &Vector, y: &Vector) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `c(x, y_j)` for every target.
pub fn costs(x: &Vector, ys: &[Vector]) -> Vector {
    Vector::from_iterator(ys.len(), ys.iter().map(|y| sq_euclidean(x, y)))
}

/// Shifted exponents `s_j = (v_j − c_j)/ε + ln ν_j` and their
/// log-sum-exp, computed around the maximum.
fn log_terms(costs: &Vector, nu: &Vector, v: &Vector, epsilon: f64) -> (Vector, f64) {
    let s = Vector::from_fn(costs.len(), |j, _| (v[j] - costs[j]) / epsilon + nu[j].ln());
    let m = s.max();
    let lse = m + s.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    (s, lse)
}

pub fn h_value(costs: &Vector, nu: &Vector, v: &Vector, epsilon: f64, offset: Offset) -> f64 {
    let (_, lse) = log_terms(costs, nu, v, epsilon);
    nu.dot(v) - epsilon * lse + offset.value(epsilon)
}

/// Softmax weights `w_j ∝ ν_j exp((v_j − c_j)/ε)`, which are also `∂h/∂c_j`.
pub fn softmax_weights(costs: &Vector, nu: &Vector, v: &Vector, epsilon: f64) -> Vector {
    let (s, lse) = log_terms(costs, nu, v, epsilon);
    s.map(|t| (t - lse).exp())
}

/// `∇_v h = ν − w`.
pub fn grad_v_h(costs: &Vector, nu: &Vector, v: &Vector, epsilon: f64) -> Vector {
    nu - softmax_weights(costs, nu, v, epsilon)
}

/// `h` together with `∇_v h` and the weights `∂h/∂c`, sharing one pass.
pub fn h_with_grads(
    costs: &Vector,
    nu: &Vector,
    v: &Vector,
    epsilon: f64,
    offset: Offset,
) -> (f64, Vector, Vector) {
    let (s, lse) = log_terms(costs, nu, v, epsilon);
    let w = s.map(|t| (t - lse).exp());
    let value = nu.dot(v) - epsilon * lse + offset.value(epsilon);
    (value, nu - &w, w)
}

/// Largest pairwise sup-norm distance `Δ = max_{i,k} ‖y_k − y_i‖_∞`.
pub fn sup_diameter(ys: &[Vector]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in ys.iter().enumerate() {
        for b in &ys[i + 1..] {
            best = best.max((a - b).amax());
        }
    }
    best
}

/// Lipschitz constant of `y ↦ ‖x − y‖²` with respect to `‖·‖_∞` over the
/// hull of `points`: the gradient `2(y − x)` has ℓ1 norm at most twice the
/// ℓ1 diameter.
pub fn cost_lipschitz(points: &[Vector]) -> f64 {
    let mut diam = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            diam = diam.max((a - b).lp_norm(1));
        }
    }
    2.0 * diam
}

/// Ball `{‖v‖ ≤ β}` that contains the zero-sum maximizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualBall {
    pub beta: f64,
    /// Whether iterates are kept zero-sum. Ascent from `v₀ = 0` preserves
    /// this on its own because `Σ_j ∂_{v_j} h = 0`.
    pub zero_sum: bool,
}

impl DualBall {
    /// `β = (L_c/n) Σ_{i,k} ‖y_k − y_i‖_∞`.
    pub fn new(ys: &[Vector], l_c: f64) -> Self {
        let n = ys.len();
        let mut total = 0.0;
        for a in ys {
            for b in ys {
                total += (a - b).amax();
            }
        }
        let beta = if n == 0 { 0.0 } else { l_c * total / n as f64 };
        Self { beta, zero_sum: true }
    }

    pub fn with_radius(beta: f64) -> Self {
        Self { beta, zero_sum: true }
    }

    /// Radial projection `βv / max(‖v‖, β)`.
    pub fn project(&self, v: &mut Vector) {
        let norm = v.norm();
        if norm > self.beta {
            *v *= self.beta / norm;
        }
    }

    pub fn contains(&self, v: &Vector) -> bool {
        v.norm() <= self.beta * (1.0 + 1e-12)
    }
}

/// Strong-concavity modulus of `v ↦ F(θ, v)` on the dual ball:
/// `ξ = exp(−2(n+2)L_cΔ/ε) min_k ν_k / (2nε)`.
pub fn strong_concavity_xi(n: usize, l_c: f64, delta_y: f64, epsilon: f64, nu_min: f64) -> f64 {
    let n = n as f64;
    (-2.0 * (n + 2.0) * l_c * delta_y / epsilon).exp() * nu_min / (2.0 * n * epsilon)
}

/// `(L_vv, L_θθ, L_θv) = (1/ε, (𝓛_c + 2L_c²)/ε, 2L_c/ε)` for an
/// `L_c`-Lipschitz, `𝓛_c`-smooth cost.
pub fn smoothness_constants(l_c: f64, curly_l_c: f64, epsilon: f64) -> (f64, f64, f64) {
    (1.0 / epsilon, (curly_l_c + 2.0 * l_c * l_c) / epsilon, 2.0 * l_c / epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform(n: usize) -> Vector {
        Vector::from_element(n, 1.0 / n as f64)
    }

    #[test]
    fn h_small_cases() {
        let z = Vector::zeros(2);
        assert!((h_value(&z, &uniform(2), &z, 1.0, Offset::MinusEps) + 1.0).abs() < 1e-15);
        let c = Vector::from_vec(vec![0.3, 1.3, -0.2]);
        let v = c.add_scalar(0.7);
        let h = h_value(&c, &uniform(3), &v, 0.5, Offset::MinusEps);
        assert!((h - (v.mean() - 0.7 - 0.5)).abs() < 1e-14);
        assert!((h_value(&c, &uniform(3), &v, 0.5, Offset::PlusEps) - h - 1.0).abs() < 1e-14);
    }

    #[test]
    fn extreme_potentials_stay_finite() {
        let c = Vector::from_vec(vec![0.0, 1.0]);
        let v = Vector::from_vec(vec![1e4, -1e4]);
        let h = h_value(&c, &uniform(2), &v, 1e-3, Offset::Zero);
        assert!(h.is_finite());
        assert!(grad_v_h(&c, &uniform(2), &v, 1e-3).iter().all(|g| g.is_finite()));
    }

    #[test]
    fn uniform_softmax_gives_zero_gradient() {
        let c = Vector::from_vec(vec![0.5, 0.1, 0.9, 0.2]);
        let v = &c * 1.0;
        assert!(grad_v_h(&c, &uniform(4), &v, 0.3).amax() < 1e-15);
    }

    #[test]
    fn ball_examples() {
        let ys = vec![Vector::from_vec(vec![0.0]), Vector::from_vec(vec![1.0])];
        assert_eq!(DualBall::new(&ys, 2.0).beta, 2.0);
        let ball = DualBall::with_radius(1.0);
        let mut v = Vector::from_vec(vec![3.0, 4.0]);
        ball.project(&mut v);
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        let mut inside = Vector::from_vec(vec![0.3, -0.4]);
        ball.project(&mut inside);
        assert_eq!(inside, Vector::from_vec(vec![0.3, -0.4]));
    }

    #[test]
    fn xi_and_constants() {
        assert!((strong_concavity_xi(1, 3.0, 0.0, 0.5, 1.0) - 1.0).abs() < 1e-15);
        let xi = strong_concavity_xi(2, 1.0, 1.0, 1.0, 0.5);
        assert!((xi - (-8f64).exp() * 0.5 / 4.0).abs() < 1e-18);
        assert!((xi - 4.19e-5).abs() < 1e-7);
        assert!(strong_concavity_xi(3, 1.0, 0.5, 1.0, 0.3) > strong_concavity_xi(3, 1.0, 0.6, 1.0, 0.3));
        assert_eq!(smoothness_constants(1.0, 1.0, 1.0), (1.0, 3.0, 2.0));
        let (a, b, c) = smoothness_constants(1.0, 1.0, 0.5);
        assert_eq!((a, b, c), (2.0, 6.0, 4.0));
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, n)
    }

    proptest! {
        #[test]
        fn gradient_sums_to_zero(c in vec_strategy(6), v in vec_strategy(6), eps in 0.05f64..2.0) {
            let (c, v) = (Vector::from_vec(c), Vector::from_vec(v));
            let g = grad_v_h(&c, &uniform(6), &v, eps);
            prop_assert!(g.sum().abs() <= 1e-13 * 6.0);
        }

        #[test]
        fn translation_invariance(c in vec_strategy(5), v in vec_strategy(5), s in -10.0f64..10.0) {
            let (c, v) = (Vector::from_vec(c), Vector::from_vec(v));
            let nu = uniform(5);
            let a = h_value(&c, &nu, &v, 0.3, Offset::MinusEps);
            let b = h_value(&c, &nu, &v.add_scalar(s), 0.3, Offset::MinusEps);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn projection_idempotent_nonexpansive(a in vec_strategy(4), b in vec_strategy(4), beta in 0.1f64..3.0) {
            let ball = DualBall::with_radius(beta);
            let (mut pa, mut pb) = (Vector::from_vec(a.clone()), Vector::from_vec(b.clone()));
            ball.project(&mut pa);
            ball.project(&mut pb);
            prop_assert!(pa.norm() <= beta * (1.0 + 1e-12));
            let mut again = pa.clone();
            ball.project(&mut again);
            prop_assert!((&again - &pa).amax() <= 1e-15);
            let dist = (Vector::from_vec(a) - Vector::from_vec(b)).norm();
            prop_assert!((pa - pb).norm() <= dist * (1.0 + 1e-12) + 1e-15);
        }
    }
}

//! Parametric maps `f_θ` with hand-written reverse-mode products.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vector;

pub const MAX_HIDDEN_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    /// Tanh approximation of GELU.
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_K: f64 = 0.044_715;

impl Activation {
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Gelu => 0.5 * z * (1.0 + (GELU_C * (z + GELU_K * z * z * z)).tanh()),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Gelu => {
                let t = (GELU_C * (z + GELU_K * z * z * z)).tanh();
                0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * z * z)
            }
        }
    }
}

/// Parameters are flattened row-major: `[A, b]` for the affine map and
/// `[W₁, b₁, W₂, b₂]` for the perceptron `W₂ σ(W₁y + b₁) + b₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MapModel {
    Affine { dim_in: usize, dim_out: usize },
    Perceptron { dim_in: usize, hidden: usize, dim_out: usize, activation: Activation },
}

impl MapModel {
    pub fn validate(&self) -> Result<()> {
        let (din, dout) = (self.dim_in(), self.dim_out());
        if din == 0 || dout == 0 {
            return Err(Error::invalid("model", "dimensions must be positive"));
        }
        if let MapModel::Perceptron { hidden, .. } = *self {
            if hidden == 0 || hidden > MAX_HIDDEN_WIDTH {
                return Err(Error::invalid("hidden", format!("width must be in 1..={MAX_HIDDEN_WIDTH}, got {hidden}")));
            }
        }
        Ok(())
    }

    pub fn dim_in(&self) -> usize {
        match *self {
            MapModel::Affine { dim_in, .. } | MapModel::Perceptron { dim_in, .. } => dim_in,
        }
    }

    pub fn dim_out(&self) -> usize {
        match *self {
            MapModel::Affine { dim_out, .. } | MapModel::Perceptron { dim_out, .. } => dim_out,
        }
    }

    pub fn n_params(&self) -> usize {
        match *self {
            MapModel::Affine { dim_in, dim_out } => dim_out * dim_in + dim_out,
            MapModel::Perceptron { dim_in, hidden, dim_out, .. } => hidden * dim_in + hidden + dim_out * hidden + dim_out,
        }
    }

    /// Identity-like start: `A = I` (padded or truncated) for the affine map;
    /// small Gaussian weights scaled by `scale` for the perceptron.
    pub fn initial_params<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> Vector {
        match *self {
            MapModel::Affine { dim_in, dim_out } => {
                let mut theta = Vector::zeros(self.n_params());
                for i in 0..dim_in.min(dim_out) {
                    theta[i * dim_in + i] = 1.0;
                }
                theta
            }
            MapModel::Perceptron { dim_in, hidden, .. } => {
                let mut theta = Vector::zeros(self.n_params());
                let w1 = hidden * dim_in;
                let w2_start = w1 + hidden;
                for (k, t) in theta.iter_mut().enumerate() {
                    let fan_in = if k < w1 { dim_in } else { hidden };
                    if k < w1 || (k >= w2_start && k < w2_start + self.dim_out() * hidden) {
                        *t = scale * rng.sample::<f64, _>(StandardNormal) / (fan_in as f64).sqrt();
                    }
                }
                theta
            }
        }
    }

    fn check(&self, theta: &Vector, y: &Vector) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch { context: "model parameters", expected: self.n_params(), actual: theta.len() });
        }
        if y.len() != self.dim_in() {
            return Err(Error::DimensionMismatch { context: "model input", expected: self.dim_in(), actual: y.len() });
        }
        Ok(())
    }

    pub fn forward(&self, theta: &Vector, y: &Vector) -> Result<Vector> {
        self.check(theta, y)?;
        Ok(match *self {
            MapModel::Affine { dim_in, dim_out } => {
                Vector::from_fn(dim_out, |i, _| {
                    (0..dim_in).map(|j| theta[i * dim_in + j] * y[j]).sum::<f64>() + theta[dim_out * dim_in + i]
                })
            }
            MapModel::Perceptron { dim_in, hidden, dim_out, activation } => {
                let z = hidden_pre(theta, y, dim_in, hidden);
                let a = z.map(|t| activation.eval(t));
                let w2 = hidden * dim_in + hidden;
                let b2 = w2 + dim_out * hidden;
                Vector::from_fn(dim_out, |i, _| {
                    (0..hidden).map(|k| theta[w2 + i * hidden + k] * a[k]).sum::<f64>() + theta[b2 + i]
                })
            }
        })
    }

    /// Adds `J_θ f(y)ᵀ cot` to `grad`.
    pub fn vjp(&self, theta: &Vector, y: &Vector, cot: &Vector, grad: &mut Vector) -> Result<()> {
        self.check(theta, y)?;
        if cot.len() != self.dim_out() {
            return Err(Error::DimensionMismatch { context: "model cotangent", expected: self.dim_out(), actual: cot.len() });
        }
        match *self {
            MapModel::Affine { dim_in, dim_out } => {
                for i in 0..dim_out {
                    for j in 0..dim_in {
                        grad[i * dim_in + j] += cot[i] * y[j];
                    }
                    grad[dim_out * dim_in + i] += cot[i];
                }
            }
            MapModel::Perceptron { dim_in, hidden, dim_out, activation } => {
                let z = hidden_pre(theta, y, dim_in, hidden);
                let b1 = hidden * dim_in;
                let w2 = b1 + hidden;
                let b2 = w2 + dim_out * hidden;
                let mut delta = vec![0.0; hidden];
                for i in 0..dim_out {
                    for k in 0..hidden {
                        grad[w2 + i * hidden + k] += cot[i] * activation.eval(z[k]);
                        delta[k] += theta[w2 + i * hidden + k] * cot[i];
                    }
                    grad[b2 + i] += cot[i];
                }
                for k in 0..hidden {
                    let dk = delta[k] * activation.derivative(z[k]);
                    for j in 0..dim_in {
                        grad[k * dim_in + j] += dk * y[j];
                    }
                    grad[b1 + k] += dk;
                }
            }
        }
        Ok(())
    }
}

fn hidden_pre(theta: &Vector, y: &Vector, dim_in: usize, hidden: usize) -> Vector {
    let b1 = hidden * dim_in;
    Vector::from_fn(hidden, |k, _| (0..dim_in).map(|j| theta[k * dim_in + j] * y[j]).sum::<f64>() + theta[b1 + k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn fd_check(model: MapModel, seed: u64) {
        let mut rng = stream(seed, "model-test");
        for _ in 0..20 {
            let theta = model.initial_params(&mut rng, 1.0) + crate::problems::gaussian_vector(&mut rng, model.n_params(), 0.3);
            let y = crate::problems::gaussian_vector(&mut rng, model.dim_in(), 1.0);
            let cot = crate::problems::gaussian_vector(&mut rng, model.dim_out(), 1.0);
            let mut g = Vector::zeros(model.n_params());
            model.vjp(&theta, &y, &cot, &mut g).unwrap();
            let h = 1e-6;
            let fd = Vector::from_fn(model.n_params(), |k, _| {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += h;
                tm[k] -= h;
                (model.forward(&tp, &y).unwrap() - model.forward(&tm, &y).unwrap()).dot(&cot) / (2.0 * h)
            });
            let rel = (&fd - &g).norm() / g.norm().max(1e-8);
            assert!(rel < 1e-5, "{model:?}: {rel}");
        }
    }

    #[test]
    fn reverse_mode_matches_central_differences() {
        fd_check(MapModel::Affine { dim_in: 3, dim_out: 2 }, 0);
        fd_check(MapModel::Perceptron { dim_in: 2, hidden: 8, dim_out: 3, activation: Activation::Tanh }, 1);
        fd_check(MapModel::Perceptron { dim_in: 3, hidden: 16, dim_out: 2, activation: Activation::Gelu }, 2);
    }

    #[test]
    fn affine_start_is_identity() {
        let m = MapModel::Affine { dim_in: 2, dim_out: 2 };
        let theta = m.initial_params(&mut stream(0, "x"), 1.0);
        let y = Vector::from_vec(vec![0.3, -1.2]);
        assert_eq!(m.forward(&theta, &y).unwrap(), y);
    }

    #[test]
    fn width_is_bounded() {
        let m = MapModel::Perceptron { dim_in: 2, hidden: 65, dim_out: 2, activation: Activation::Gelu };
        assert!(m.validate().is_err());
    }
}

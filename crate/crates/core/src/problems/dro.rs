//! Distributionally robust logistic regression on a labelled point set.
//!
//! `F(θ, v) = (1/n) Σ_j [ℓ(y_j(wᵀv_j + b)) − γ‖v_j − x_j‖²]` with
//! `θ = (w, b)`, logistic loss `ℓ(s) = log(1 + e^{−s})`, and one adversarial
//! input `v_j` per data point. `F` is separable in the blocks `v_j`, and
//! each block is strongly concave with modulus `(2γ − Λ)/n`, where
//! `Λ = R²/4` bounds the curvature of `v_j ↦ ℓ` (`σ'(s)‖w‖² ≤ ‖w‖²/4`)
//! for parameters in the ball `‖w‖ ≤ R`.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_labelled_csv, LabelledData};
use crate::oracle::{Capabilities, ProblemOracle, Sample};
use crate::rng::{stream, RngStreams};
use crate::smoothness::SmoothnessSpec;
use crate::Vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroConfig {
    pub n: usize,
    pub gamma: f64,
    /// Distance between the two blob centres.
    pub separation: f64,
    pub blob_sd: f64,
    /// Radius `R` of the declared parameter ball `‖w‖ ≤ R`.
    pub param_radius: f64,
    pub data_seed: u64,
    /// Load `features..., label` rows from this CSV instead of generating.
    pub data_path: Option<String>,
}

impl Default for DroConfig {
    fn default() -> Self {
        Self {
            n: 200,
            gamma: 1.3,
            separation: 2.0,
            blob_sd: 1.0,
            param_radius: 2.5,
            data_seed: 0,
            data_path: None,
        }
    }
}

/// Two isotropic Gaussian blobs in the plane with labels ±1, centred at
/// `±(s/2√2)(1, 1)`.
pub fn generate_blobs(n: usize, separation: f64, sd: f64, seed: u64) -> LabelledData {
    let mut rng = stream(seed, "dro-blobs");
    let c = separation / (2.0 * 2f64.sqrt());
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let y = if j % 2 == 0 { 1.0 } else { -1.0 };
        let x = Vector::from_fn(2, |_, _| y * c + sd * rng.sample::<f64, _>(StandardNormal));
        features.push(x);
        labels.push(y);
    }
    LabelledData { features, labels }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^{−s})` without overflow.
fn logistic_loss(s: f64) -> f64 {
    if s > 0.0 {
        (-s).exp().ln_1p()
    } else {
        -s + s.exp().ln_1p()
    }
}

#[derive(Debug, Clone)]
pub struct ToyDro {
    x: Vec<Vector>,
    y: Vec<f64>,
    gamma: f64,
    param_radius: f64,
    p: usize,
    spec: SmoothnessSpec,
}

impl ToyDro {
    pub fn new(data: LabelledData, gamma: f64, param_radius: f64) -> Result<Self> {
        let LabelledData { features: x, labels: y } = data;
        let n = x.len();
        if n == 0 {
            return Err(Error::invalid("data", "empty dataset"));
        }
        let p = x[0].len();
        if let Some(bad) = x.iter().find(|xj| xj.len() != p) {
            return Err(Error::DimensionMismatch { context: "feature row", expected: p, actual: bad.len() });
        }
        if y.iter().any(|&l| l != 1.0 && l != -1.0) {
            return Err(Error::invalid("labels", "must be +1 or -1"));
        }
        let lambda = param_radius * param_radius / 4.0;
        let modulus = 2.0 * gamma - lambda;
        if !(modulus > 0.0) {
            return Err(Error::invalid(
                "gamma",
                format!("2*gamma - R^2/4 = {modulus} is not positive; the inner problem is not strongly concave"),
            ));
        }
        let mu = modulus / n as f64;
        // Curvature bound over the region visited: each per-sample Hessian
        // in (w, b, v_j) is at most σ'‖(v_j, 1, w)‖² + 1 plus the 2γ
        // penalty; v_j stays within ‖w‖/(2γ) of x_j at the maximizer.
        let radius_x = x.iter().map(|xj| xj.norm()).fold(0.0, f64::max) + param_radius / (2.0 * gamma);
        let l = ((radius_x * radius_x + 1.0 + param_radius * param_radius) / 4.0 + 1.0 + 2.0 * gamma).max(mu);
        let spec = SmoothnessSpec::new(l, mu)?;
        Ok(Self { x, y, gamma, param_radius, p, spec })
    }

    pub fn from_config(cfg: &DroConfig) -> Result<Self> {
        let data = match &cfg.data_path {
            Some(path) => read_labelled_csv(Path::new(path))?,
            None => generate_blobs(cfg.n, cfg.separation, cfg.blob_sd, cfg.data_seed),
        };
        Self::new(data, cfg.gamma, cfg.param_radius)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn param_radius(&self) -> f64 {
        self.param_radius
    }

    /// Strong-concavity modulus of one block `v_j ↦ ℓ_j − γ‖v_j − x_j‖²`.
    pub fn block_modulus(&self) -> f64 {
        2.0 * self.gamma - self.param_radius * self.param_radius / 4.0
    }

    fn split<'a>(&self, theta: &'a Vector) -> (nalgebra::DVectorView<'a, f64>, f64) {
        (theta.rows(0, self.p), theta[self.p])
    }

    fn block<'a>(&self, v: &'a Vector, j: usize) -> nalgebra::DVectorView<'a, f64> {
        v.rows(j * self.p, self.p)
    }

    fn check(&self, theta: &Vector, v: &Vector) -> Result<()> {
        if theta.len() != self.p + 1 {
            return Err(Error::DimensionMismatch { context: "theta", expected: self.p + 1, actual: theta.len() });
        }
        if v.len() != self.p * self.n() {
            return Err(Error::DimensionMismatch { context: "v", expected: self.p * self.n(), actual: v.len() });
        }
        Ok(())
    }

    /// `(margin s_j, dℓ/ds_j)` at block `j`.
    fn margin(&self, theta: &Vector, v: &Vector, j: usize) -> (f64, f64) {
        let (w, b) = self.split(theta);
        let s = w.dot(&self.block(v, j)) + b;
        let y = self.y[j];
        (s, -y * sigmoid(-y * s))
    }

    /// Gradients of `ℓ_j − γ‖v_j − x_j‖²` with respect to θ and `v_j`.
    fn sample_grads(&self, theta: &Vector, v: &Vector, j: usize) -> (Vector, Vector) {
        let (w, _) = self.split(theta);
        let (_, ds) = self.margin(theta, v, j);
        let vj = self.block(v, j);
        let mut gt = Vector::zeros(self.p + 1);
        gt.rows_mut(0, self.p).copy_from(&(vj * ds));
        gt[self.p] = ds;
        let gv = w * ds - (vj - &self.x[j]) * (2.0 * self.gamma);
        (gt, gv)
    }

    /// Maximizer `v*(θ)` by a scalar root find per block: the stationarity
    /// condition forces `v_j = x_j + τ_j w` with
    /// `τ = −yσ(−y(s₀ + τ‖w‖²))/(2γ)`, whose left-minus-right side is
    /// increasing in τ under strong concavity.
    pub fn v_star_numeric(&self, theta: &Vector) -> Result<Vector> {
        if theta.len() != self.p + 1 {
            return Err(Error::DimensionMismatch { context: "theta", expected: self.p + 1, actual: theta.len() });
        }
        let (w, b) = self.split(theta);
        let w2 = w.norm_squared();
        let mut v = Vector::zeros(self.p * self.n());
        for j in 0..self.n() {
            let y = self.y[j];
            let s0 = w.dot(&self.x[j]) + b;
            let g = |tau: f64| tau + y * sigmoid(-y * (s0 + tau * w2)) / (2.0 * self.gamma);
            let (mut lo, mut hi) = (-1.0 / (2.0 * self.gamma), 1.0 / (2.0 * self.gamma));
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= 1e-17 * (1.0 + mid.abs()) {
                    break;
                }
            }
            let tau = 0.5 * (lo + hi);
            v.rows_mut(j * self.p, self.p).copy_from(&(&self.x[j] + w * tau));
        }
        Ok(v)
    }

    /// `φ(θ) = F(θ, v*(θ))` with the numerical maximizer.
    pub fn phi_numeric(&self, theta: &Vector) -> Result<f64> {
        let v = self.v_star_numeric(theta)?;
        self.value(theta, &v)
    }

    /// `∇φ(θ) = ∇_θF(θ, v*(θ))` with the numerical maximizer.
    pub fn grad_phi_numeric(&self, theta: &Vector) -> Result<Vector> {
        let v = self.v_star_numeric(theta)?;
        Ok(self.exact_grads(theta, &v)?.0)
    }

    /// Gradient of `F` for the minibatch `indices` (with repetition):
    /// the θ part is averaged, and block `j` of the v part is scaled by
    /// `count_j/|B|`, which makes it unbiased for the separable `∇_vF`.
    pub fn dro_grads(&self, theta: &Vector, v: &Vector, indices: &[usize]) -> Result<(Vector, Vector)> {
        self.check(theta, v)?;
        if indices.is_empty() {
            return Err(Error::invalid("indices", "empty minibatch"));
        }
        let mut gt = Vector::zeros(self.p + 1);
        let mut gv = Vector::zeros(v.len());
        let scale = 1.0 / indices.len() as f64;
        for &j in indices {
            if j >= self.n() {
                return Err(Error::IndexOutOfRange { index: j, len: self.n() });
            }
            let (t, b) = self.sample_grads(theta, v, j);
            gt += t * scale;
            let mut block = gv.rows_mut(j * self.p, self.p);
            block += b * scale;
        }
        Ok((gt, gv))
    }
}

impl ProblemOracle for ToyDro {
    fn name(&self) -> &str {
        "dro"
    }

    fn dim_theta(&self) -> usize {
        self.p + 1
    }

    fn dim_v(&self) -> usize {
        self.p * self.n()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::STOCH_GRAD_THETA | Capabilities::STOCH_GRAD_V | Capabilities::EXACT_GRAD
    }

    fn smoothness(&self) -> &SmoothnessSpec {
        &self.spec
    }

    fn initial_point(&self) -> (Vector, Vector) {
        let mut v = Vector::zeros(self.dim_v());
        for j in 0..self.n() {
            v.rows_mut(j * self.p, self.p).copy_from(&self.x[j]);
        }
        (Vector::zeros(self.p + 1), v)
    }

    fn draw_sample(&self, streams: &mut RngStreams, batch: usize) -> Sample {
        let n = self.n();
        let indices = (0..batch.max(1)).map(|_| streams.sample.random_range(0..n)).collect();
        Sample { indices, theta_noise: None, v_noise: None }
    }

    fn stoch_grad_theta(&self, theta: &Vector, v: &Vector, z: &Sample) -> Result<Vector> {
        self.check(theta, v)?;
        let mut gt = Vector::zeros(self.p + 1);
        for &j in &z.indices {
            if j >= self.n() {
                return Err(Error::IndexOutOfRange { index: j, len: self.n() });
            }
            let (_, ds) = self.margin(theta, v, j);
            let mut head = gt.rows_mut(0, self.p);
            head += self.block(v, j) * ds;
            gt[self.p] += ds;
        }
        Ok(gt / z.indices.len().max(1) as f64)
    }

    fn stoch_grad_v(&self, theta: &Vector, v: &Vector, z: &Sample) -> Result<Vector> {
        Ok(self.dro_grads(theta, v, &z.indices)?.1)
    }

    fn value(&self, theta: &Vector, v: &Vector) -> Result<f64> {
        self.check(theta, v)?;
        let mut total = 0.0;
        for j in 0..self.n() {
            let (s, _) = self.margin(theta, v, j);
            total += logistic_loss(self.y[j] * s) - self.gamma * (self.block(v, j) - &self.x[j]).norm_squared();
        }
        Ok(total / self.n() as f64)
    }

    fn exact_grads(&self, theta: &Vector, v: &Vector) -> Result<(Vector, Vector)> {
        self.check(theta, v)?;
        let n = self.n() as f64;
        let mut gt = Vector::zeros(self.p + 1);
        let mut gv = Vector::zeros(v.len());
        for j in 0..self.n() {
            let (t, b) = self.sample_grads(theta, v, j);
            gt += t / n;
            gv.rows_mut(j * self.p, self.p).copy_from(&(b / n));
        }
        Ok((gt, gv))
    }

    fn approx_phi(&self, theta: &Vector) -> Result<f64> {
        self.phi_numeric(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::gaussian_vector;

    fn instance() -> ToyDro {
        ToyDro::from_config(&DroConfig::default()).unwrap()
    }

    #[test]
    fn capability_report() {
        let p = instance();
        let c = p.capabilities();
        assert!(c.contains(Capabilities::EXACT_GRAD));
        assert!(!c.contains(Capabilities::EXACT_PHI) && !c.contains(Capabilities::EXACT_VSTAR));
        assert!(p.phi(&Vector::zeros(3)).is_err());
    }

    #[test]
    fn stationary_adversary() {
        let p = instance();
        let (theta, v) = p.initial_point();
        let (_, gv) = p.dro_grads(&theta, &v, &[0, 5, 7]).unwrap();
        assert_eq!(gv.amax(), 0.0);
        assert!(p.dro_grads(&theta, &v, &[200]).is_err());
    }

    #[test]
    fn minibatch_of_all_points_is_exact() {
        let p = instance();
        let mut rng = stream(4, "probe");
        let theta = gaussian_vector(&mut rng, 3, 0.8);
        let (_, v0) = p.initial_point();
        let v = &v0 + gaussian_vector(&mut rng, v0.len(), 0.3);
        let all: Vec<usize> = (0..p.n()).collect();
        let (gt, gv) = p.dro_grads(&theta, &v, &all).unwrap();
        let (et, ev) = p.exact_grads(&theta, &v).unwrap();
        assert!((gt - et).amax() < 1e-14);
        assert!((gv - ev).amax() < 1e-14);
    }

    #[test]
    fn numeric_maximizer_is_stationary_and_approaches_data() {
        let p = instance();
        let mut rng = stream(5, "probe");
        for _ in 0..10 {
            let theta = gaussian_vector(&mut rng, 3, 1.0);
            let vs = p.v_star_numeric(&theta).unwrap();
            let (_, gv) = p.exact_grads(&theta, &vs).unwrap();
            assert!(gv.amax() < 1e-13, "{}", gv.amax());
        }
        let theta = Vector::from_vec(vec![1.0, -0.5, 0.2]);
        let (_, x) = p.initial_point();
        let mut prev = f64::INFINITY;
        for gamma in [2.0, 20.0, 200.0, 2000.0] {
            let q = ToyDro::new(generate_blobs(200, 2.0, 1.0, 0), gamma, 2.5).unwrap();
            let dist = (q.v_star_numeric(&theta).unwrap() - &x).amax();
            assert!(dist <= theta.rows(0, 2).norm() / (2.0 * gamma) + 1e-15);
            assert!(dist < prev);
            prev = dist;
        }
    }

    #[test]
    fn rejects_weak_penalty() {
        assert!(ToyDro::new(generate_blobs(10, 2.0, 1.0, 0), 0.5, 2.5).is_err());
    }
}

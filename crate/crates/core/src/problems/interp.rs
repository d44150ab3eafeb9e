//! Finite sum `F = (1/N) Σ F_i` with `F_i(θ, v) = ½θᵀQθ + a_iᵀθ + θᵀBv − (μ/2)‖v‖²`.
//!
//! The offsets `a_i` sum to zero, so every component shares the maximizer
//! `v*(θ) = Bᵀθ/μ` and the v-gradient noise vanishes there (`σ̃² = 0`),
//! while the θ-gradients of the components differ (`σ² = mean ‖a_i‖²`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gaussian_vector, QuadraticConfig, SaddleCore};
use crate::error::{Error, Result};
use crate::oracle::{Capabilities, ProblemOracle, Sample};
use crate::rng::{stream, RngStreams};
use crate::smoothness::SmoothnessSpec;
use crate::Vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpConfig {
    pub d: usize,
    pub n: usize,
    pub kappa: f64,
    pub components: usize,
    /// Per-coordinate standard deviation of the offsets `a_i`.
    pub offset_sd: f64,
    pub instance_seed: u64,
    pub m_min: f64,
    pub m_max: f64,
    pub negative_scale: f64,
    pub initial_gap: f64,
}

impl Default for InterpConfig {
    fn default() -> Self {
        let q = QuadraticConfig::default();
        Self {
            d: q.d,
            n: q.n,
            kappa: q.kappa,
            components: 64,
            offset_sd: 0.3,
            instance_seed: q.instance_seed,
            m_min: q.m_min,
            m_max: q.m_max,
            negative_scale: q.negative_scale,
            initial_gap: q.initial_gap,
        }
    }
}

impl InterpConfig {
    fn saddle(&self) -> QuadraticConfig {
        QuadraticConfig {
            d: self.d,
            n: self.n,
            kappa: self.kappa,
            noise_theta_sd: 0.0,
            noise_v_sd: 0.0,
            instance_seed: self.instance_seed,
            m_min: self.m_min,
            m_max: self.m_max,
            negative_scale: self.negative_scale,
            initial_gap: self.initial_gap,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InterpolatingFiniteSum {
    core: SaddleCore,
    offsets: Vec<Vector>,
    spec: SmoothnessSpec,
}

impl InterpolatingFiniteSum {
    pub fn new(core: SaddleCore, mut offsets: Vec<Vector>) -> Result<Self> {
        if offsets.len() < 2 {
            return Err(Error::invalid("components", "need at least two components"));
        }
        let d = core.dim_theta();
        if let Some(bad) = offsets.iter().find(|a| a.len() != d) {
            return Err(Error::DimensionMismatch { context: "offset", expected: d, actual: bad.len() });
        }
        let mean = offsets.iter().fold(Vector::zeros(d), |acc, a| acc + a) / offsets.len() as f64;
        for a in &mut offsets {
            *a -= &mean;
        }
        let sigma_sq = offsets.iter().map(|a| a.norm_squared()).sum::<f64>() / offsets.len() as f64;
        let spec = SmoothnessSpec::with_noise(core.l, core.mu, sigma_sq, 0.0)?.with_sigma_bar_sq(sigma_sq)?;
        Ok(Self { core, offsets, spec })
    }

    pub fn generate(cfg: &InterpConfig) -> Result<Self> {
        let core = SaddleCore::generate(&cfg.saddle())?;
        let mut rng = stream(cfg.instance_seed, "interp-offsets");
        let offsets = (0..cfg.components)
            .map(|_| gaussian_vector(&mut rng, core.dim_theta(), cfg.offset_sd))
            .collect();
        Self::new(core, offsets)
    }

    pub fn core(&self) -> &SaddleCore {
        &self.core
    }

    pub fn components(&self) -> usize {
        self.offsets.len()
    }

    /// Gradients of the single component `F_i`.
    pub fn component_grads(&self, theta: &Vector, v: &Vector, i: usize) -> Result<(Vector, Vector)> {
        let a = self.offsets.get(i).ok_or(Error::IndexOutOfRange { index: i, len: self.offsets.len() })?;
        Ok((self.core.grad_theta(theta, v) + a, self.core.grad_v(theta, v)))
    }

    fn mean_offset(&self, indices: &[usize]) -> Result<Vector> {
        let mut acc = Vector::zeros(self.core.dim_theta());
        for &i in indices {
            let a = self.offsets.get(i).ok_or(Error::IndexOutOfRange { index: i, len: self.offsets.len() })?;
            acc += a;
        }
        Ok(acc / indices.len().max(1) as f64)
    }

    pub fn initial_gap(&self) -> f64 {
        self.core.phi(&self.core.theta0)
    }

    pub fn initial_distance_sq(&self) -> f64 {
        (self.core.v_star(&self.core.theta0) - &self.core.v0).norm_squared()
    }
}

impl ProblemOracle for InterpolatingFiniteSum {
    fn name(&self) -> &str {
        "interp"
    }

    fn dim_theta(&self) -> usize {
        self.core.dim_theta()
    }

    fn dim_v(&self) -> usize {
        self.core.dim_v()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::all() - Capabilities::PROJECTION
    }

    fn smoothness(&self) -> &SmoothnessSpec {
        &self.spec
    }

    fn initial_point(&self) -> (Vector, Vector) {
        (self.core.theta0.clone(), self.core.v0.clone())
    }

    fn draw_sample(&self, streams: &mut RngStreams, batch: usize) -> Sample {
        let n = self.offsets.len();
        let indices = (0..batch.max(1)).map(|_| streams.sample.random_range(0..n)).collect();
        Sample { indices, theta_noise: None, v_noise: None }
    }

    fn stoch_grad_theta(&self, theta: &Vector, v: &Vector, z: &Sample) -> Result<Vector> {
        Ok(self.core.grad_theta(theta, v) + self.mean_offset(&z.indices)?)
    }

    fn stoch_grad_v(&self, theta: &Vector, v: &Vector, z: &Sample) -> Result<Vector> {
        if let Some(&bad) = z.indices.iter().find(|&&i| i >= self.offsets.len()) {
            return Err(Error::IndexOutOfRange { index: bad, len: self.offsets.len() });
        }
        Ok(self.core.grad_v(theta, v))
    }

    fn value(&self, theta: &Vector, v: &Vector) -> Result<f64> {
        Ok(self.core.value(theta, v))
    }

    fn exact_grads(&self, theta: &Vector, v: &Vector) -> Result<(Vector, Vector)> {
        Ok((self.core.grad_theta(theta, v), self.core.grad_v(theta, v)))
    }

    fn phi(&self, theta: &Vector) -> Result<f64> {
        Ok(self.core.phi(theta))
    }

    fn grad_phi(&self, theta: &Vector) -> Result<Vector> {
        Ok(self.core.grad_phi(theta))
    }

    fn v_star(&self, theta: &Vector) -> Result<Vector> {
        Ok(self.core.v_star(theta))
    }

    fn min_phi(&self) -> Option<f64> {
        self.core.m_is_psd().then_some(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_properties() {
        let p = InterpolatingFiniteSum::generate(&InterpConfig::default()).unwrap();
        let mut rng = stream(11, "probe");
        for _ in 0..100 {
            let theta = gaussian_vector(&mut rng, p.dim_theta(), 1.0);
            let v = gaussian_vector(&mut rng, p.dim_v(), 1.0);
            let vs = p.core.v_star(&theta);
            let mut mean = Vector::zeros(p.dim_theta());
            let mut spread = 0.0;
            let full = p.exact_grads(&theta, &v).unwrap().0;
            for i in 0..p.components() {
                let (gt, gv) = p.component_grads(&theta, &vs, i).unwrap();
                assert!(gv.amax() <= 1e-12 * (1.0 + theta.amax()));
                let (gt_v, _) = p.component_grads(&theta, &v, i).unwrap();
                mean += &gt_v;
                spread += (&gt_v - &full).norm_squared();
                let _ = gt;
            }
            mean /= p.components() as f64;
            assert!((&mean - &full).amax() < 1e-12 * (1.0 + full.amax()));
            assert!(spread > 0.0);
        }
        assert!(p.component_grads(&Vector::zeros(20), &Vector::zeros(10), 64).is_err());
    }
}

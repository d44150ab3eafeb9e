//! `F(θ, v) = ½θᵀQθ + θᵀBv − (μ/2)‖v‖²` with additive Gaussian noise.
//!
//! Everything is closed form: `v*(θ) = Bᵀθ/μ`, `φ(θ) = ½θᵀMθ` with
//! `M = Q + BBᵀ/μ`, and `L` is the spectral norm of the joint Hessian
//! `[[Q, B], [Bᵀ, −μI]]`.
//!
//! Generated instances are built in a rotated basis. `M` gets a
//! log-spaced spectrum on `[m_min, m_max]`; each v-coordinate is coupled to
//! one θ-eigendirection whose `Q`-eigenvalue is negative, and the coupling
//! `b_i² = μ(m_i − q_i)` lifts it back to `m_i`. `μ` is then found by
//! bisection so that `L/μ` hits the requested condition number. The
//! starting point puts weight `1/√m_i` on each eigendirection, which makes
//! `‖∇φ‖²` under gradient descent decay like `1/k` instead of
//! geometrically.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gaussian_vector, random_orthogonal};
use crate::error::{Error, Result};
use crate::oracle::{Capabilities, ProblemOracle, Sample};
use crate::rng::{stream, RngStreams};
use crate::smoothness::SmoothnessSpec;
use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticConfig {
    pub d: usize,
    pub n: usize,
    pub kappa: f64,
    pub noise_theta_sd: f64,
    pub noise_v_sd: f64,
    /// Seed of the instance itself (matrices and starting point).
    pub instance_seed: u64,
    pub m_min: f64,
    pub m_max: f64,
    /// Negative eigenvalues of `Q` are drawn from `[−s, −s/10]`.
    pub negative_scale: f64,
    /// `φ(θ₀)`.
    pub initial_gap: f64,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self {
            d: 20,
            n: 10,
            kappa: 5.0,
            noise_theta_sd: 0.0,
            noise_v_sd: 0.0,
            instance_seed: 0,
            m_min: 1e-6,
            m_max: 1.0,
            negative_scale: 1.0,
            initial_gap: 1.0,
        }
    }
}

/// The matrices of a quadratic saddle, shared with the interpolating
/// finite sum.
#[derive(Debug, Clone)]
pub struct SaddleCore {
    pub q: Matrix,
    pub b: Matrix,
    pub mu: f64,
    pub l: f64,
    /// `M = Q + BBᵀ/μ`, the Hessian of `φ`.
    pub m: Matrix,
    pub theta0: Vector,
    pub v0: Vector,
    m_psd: bool,
}

impl SaddleCore {
    pub fn from_matrices(q: Matrix, b: Matrix, mu: f64, theta0: Vector, v0: Vector) -> Result<Self> {
        let d = q.nrows();
        if q.ncols() != d {
            return Err(Error::DimensionMismatch { context: "Q columns", expected: d, actual: q.ncols() });
        }
        if b.nrows() != d {
            return Err(Error::DimensionMismatch { context: "B rows", expected: d, actual: b.nrows() });
        }
        let n = b.ncols();
        if theta0.len() != d {
            return Err(Error::DimensionMismatch { context: "theta0", expected: d, actual: theta0.len() });
        }
        if v0.len() != n {
            return Err(Error::DimensionMismatch { context: "v0", expected: n, actual: v0.len() });
        }
        if (&q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
            return Err(Error::invalid("Q", "must be symmetric"));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::invalid("mu", format!("must be positive, got {mu}")));
        }
        let mut hess = Matrix::zeros(d + n, d + n);
        hess.view_mut((0, 0), (d, d)).copy_from(&q);
        hess.view_mut((0, d), (d, n)).copy_from(&b);
        hess.view_mut((d, 0), (n, d)).copy_from(&b.transpose());
        for j in 0..n {
            hess[(d + j, d + j)] = -mu;
        }
        let l = hess.symmetric_eigenvalues().amax();
        let m = &q + &b * b.transpose() / mu;
        let m_min_eig = m.clone().symmetric_eigenvalues().min();
        Ok(Self {
            q,
            b,
            mu,
            l,
            m,
            theta0,
            v0,
            m_psd: m_min_eig >= -1e-12 * l,
        })
    }

    pub fn generate(cfg: &QuadraticConfig) -> Result<Self> {
        let (d, n) = (cfg.d, cfg.n);
        if n == 0 || n > d {
            return Err(Error::invalid("n", format!("need 1 <= n <= d = {d}, got {n}")));
        }
        if !(cfg.kappa > 1.0) {
            return Err(Error::invalid(
                "kappa",
                format!(
                    "got {}; an indefinite Q with positive semidefinite M needs nonzero coupling, \
                     which forces L > mu, so kappa must exceed 1",
                    cfg.kappa
                ),
            ));
        }
        if !(cfg.m_min > 0.0 && cfg.m_max >= cfg.m_min && cfg.negative_scale > 0.0 && cfg.initial_gap > 0.0) {
            return Err(Error::invalid("m_min", "need 0 < m_min <= m_max, negative_scale > 0, initial_gap > 0"));
        }
        let mut rng = stream(cfg.instance_seed, "quadratic-instance");
        let u = random_orthogonal(&mut rng, d);
        let w = random_orthogonal(&mut rng, n);
        let spectrum: Vec<f64> = (0..d)
            .map(|i| {
                let t = if d == 1 { 1.0 } else { i as f64 / (d - 1) as f64 };
                cfg.m_min * (cfg.m_max / cfg.m_min).powf(t)
            })
            .collect();
        // Spread the coupled directions evenly through the spectrum,
        // always including the top one.
        let coupled: Vec<usize> = (0..n).map(|j| d - 1 - (j * d) / n).collect();
        let mut q_eig: Vec<f64> = spectrum.clone();
        for &i in &coupled {
            q_eig[i] = -cfg.negative_scale * rng.random_range(0.1..=1.0);
        }
        let block_norm = |mu: f64| -> f64 {
            let mut l = mu;
            for i in 0..d {
                if coupled.contains(&i) {
                    let (qi, b2) = (q_eig[i], mu * (spectrum[i] - q_eig[i]));
                    let disc = ((qi + mu).powi(2) + 4.0 * b2).sqrt();
                    l = l.max(((qi - mu).abs() + disc) / 2.0);
                } else {
                    l = l.max(q_eig[i].abs());
                }
            }
            l
        };
        // L(μ)/μ decreases from +∞ to 1; bisect in log μ.
        let (mut lo, mut hi) = (1e-12f64.ln(), 1e12f64.ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let mu = mid.exp();
            if block_norm(mu) / mu > cfg.kappa {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = (0.5 * (lo + hi)).exp();
        let q = &u * Matrix::from_diagonal(&Vector::from_vec(q_eig.clone())) * u.transpose();
        let mut b = Matrix::zeros(d, n);
        for (j, &i) in coupled.iter().enumerate() {
            let bi = (mu * (spectrum[i] - q_eig[i])).sqrt();
            // Column j of U diag(b) picks eigendirection i; rotate the
            // v-space by W so v is not axis-aligned.
            for r in 0..d {
                for c in 0..n {
                    b[(r, c)] += u[(r, i)] * bi * w[(c, j)];
                }
            }
        }
        let scale = (2.0 * cfg.initial_gap / d as f64).sqrt();
        let coeffs = Vector::from_fn(d, |i, _| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * scale / spectrum[i].sqrt()
        });
        let theta0 = &u * coeffs;
        Self::from_matrices(q, b, mu, theta0, Vector::zeros(n))
    }

    pub fn dim_theta(&self) -> usize {
        self.q.nrows()
    }

    pub fn dim_v(&self) -> usize {
        self.b.ncols()
    }

    pub fn kappa(&self) -> f64 {
        self.l / self.mu
    }

    pub fn m_is_psd(&self) -> bool {
        self.m_psd
    }

    pub fn value(&self, theta: &Vector, v: &Vector) -> f64 {
        0.5 * theta.dot(&(&self.q * theta)) + theta.dot(&(&self.b * v)) - 0.5 * self.mu * v.norm_squared()
    }

    pub fn grad_theta(&self, theta: &Vector, v: &Vector) -> Vector {
        &self.q * theta + &self.b * v
    }

    pub fn grad_v(&self, theta: &Vector, v: &Vector) -> Vector {
        self.b.tr_mul(theta) - v * self.mu
    }

    pub fn v_star(&self, theta: &Vector) -> Vector {
        self.b.tr_mul(theta) / self.mu
    }

    pub fn phi(&self, theta: &Vector) -> f64 {
        0.5 * theta.dot(&(&self.m * theta))
    }

    pub fn grad_phi(&self, theta: &Vector) -> Vector {
        &self.m * theta
    }
}

/// Quadratic saddle with per-coordinate Gaussian gradient noise of
/// variance `sd²/batch`, so `σ² = d·sd_θ²` and `σ̃² = n·sd_v²`.
#[derive(Debug, Clone)]
pub struct QuadraticSaddle {
    core: SaddleCore,
    noise_theta_sd: f64,
    noise_v_sd: f64,
    spec: SmoothnessSpec,
}

impl QuadraticSaddle {
    pub fn new(core: SaddleCore, noise_theta_sd: f64, noise_v_sd: f64) -> Result<Self> {
        if !(noise_theta_sd >= 0.0 && noise_v_sd >= 0.0) {
            return Err(Error::invalid("noise_theta_sd", "noise scales must be non-negative"));
        }
        let sigma_sq = core.dim_theta() as f64 * noise_theta_sd * noise_theta_sd;
        let sigma_tilde_sq = core.dim_v() as f64 * noise_v_sd * noise_v_sd;
        let spec = SmoothnessSpec::with_noise(core.l, core.mu, sigma_sq, sigma_tilde_sq)?
            .with_sigma_bar_sq(sigma_sq.max(sigma_tilde_sq))?;
        Ok(Self { core, noise_theta_sd, noise_v_sd, spec })
    }

    pub fn generate(cfg: &QuadraticConfig) -> Result<Self> {
        Self::new(SaddleCore::generate(cfg)?, cfg.noise_theta_sd, cfg.noise_v_sd)
    }

    /// The same instance with different noise levels.
    pub fn with_noise(&self, noise_theta_sd: f64, noise_v_sd: f64) -> Result<Self> {
        Self::new(self.core.clone(), noise_theta_sd, noise_v_sd)
    }

    pub fn with_initial_point(mut self, theta0: Vector, v0: Vector) -> Result<Self> {
        if theta0.len() != self.core.dim_theta() || v0.len() != self.core.dim_v() {
            return Err(Error::DimensionMismatch {
                context: "initial point",
                expected: self.core.dim_theta() + self.core.dim_v(),
                actual: theta0.len() + v0.len(),
            });
        }
        self.core.theta0 = theta0;
        self.core.v0 = v0;
        Ok(self)
    }

    pub fn core(&self) -> &SaddleCore {
        &self.core
    }

    /// `φ(θ), ∇φ(θ), v*(θ)` in one call.
    pub fn exact_oracles(&self, theta: &Vector) -> (f64, Vector, Vector) {
        (self.core.phi(theta), self.core.grad_phi(theta), self.core.v_star(theta))
    }

    pub fn initial_gap(&self) -> f64 {
        self.core.phi(&self.core.theta0)
    }

    pub fn initial_distance_sq(&self) -> f64 {
        (self.core.v_star(&self.core.theta0) - &self.core.v0).norm_squared()
    }
}

impl ProblemOracle for QuadraticSaddle {
    fn name(&self) -> &str {
        "quadratic"
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
        let scale = 1.0 / (batch.max(1) as f64).sqrt();
        let noise = &mut streams.noise;
        let theta_noise = (self.noise_theta_sd > 0.0)
            .then(|| gaussian_vector(noise, self.core.dim_theta(), self.noise_theta_sd * scale));
        let v_noise =
            (self.noise_v_sd > 0.0).then(|| gaussian_vector(noise, self.core.dim_v(), self.noise_v_sd * scale));
        Sample { indices: Vec::new(), theta_noise, v_noise }
    }

    fn stoch_grad_theta(&self, theta: &Vector, v: &Vector, z: &Sample) -> Result<Vector> {
        let mut g = self.core.grad_theta(theta, v);
        if let Some(noise) = &z.theta_noise {
            g += noise;
        }
        Ok(g)
    }

    fn stoch_grad_v(&self, theta: &Vector, v: &Vector, z: &Sample) -> Result<Vector> {
        let mut g = self.core.grad_v(theta, v);
        if let Some(noise) = &z.v_noise {
            g += noise;
        }
        Ok(g)
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

//! Learning a parametric map with a semi-dual entropic OT loss.
//!
//! Two problems share the machinery. In the mapped-target problem the
//! source points `x_i ~ μ` are sampled and the targets are moved,
//! `F(θ, v) = E_μ[h(x, (f_θ(y_j))_j; v)]`. In the pushforward problem the
//! sampled points are moved, `F(θ, v) = E_μ[h(f_θ(z), (y_j)_j; v)]`.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    cost_lipschitz, costs, h_value, h_with_grads, sinkhorn, smoothness_constants, softmax_weights, strong_concavity_xi,
    sup_diameter, DualBall, MapModel, Offset, SinkhornMode,
};
use crate::error::{Error, Result};
use crate::io::read_point_cloud;
use crate::oracle::{Capabilities, ProblemOracle, Sample};
use crate::rng::{stream, RngStreams};
use crate::smoothness::SmoothnessSpec;
use crate::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportMode {
    /// `min_θ W_ε(μ, Σ_j δ_{f_θ(y_j)}/n)`.
    #[default]
    MappedTarget,
    /// `min_θ W_ε((f_θ)♯μ, Σ_j δ_{y_j}/n)`.
    Pushforward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtConfig {
    pub source_points: usize,
    pub target_points: usize,
    pub dim: usize,
    pub epsilon: f64,
    pub offset: Offset,
    pub mode: TransportMode,
    pub model: MapModel,
    /// Weight scale of the perceptron's random start.
    pub model_scale: f64,
    pub instance_seed: u64,
    /// Load the clouds from CSV (one point per row) instead of generating.
    pub source_path: Option<String>,
    pub target_path: Option<String>,
    pub sinkhorn_mode: SinkhornMode,
    /// Enlargement of the dual ball radius computed at `θ₀`.
    pub ball_factor: f64,
}

impl Default for OtConfig {
    fn default() -> Self {
        Self {
            source_points: 512,
            target_points: 64,
            dim: 2,
            epsilon: 0.1,
            offset: Offset::MinusEps,
            mode: TransportMode::MappedTarget,
            model: MapModel::Affine { dim_in: 2, dim_out: 2 },
            model_scale: 1.0,
            instance_seed: 0,
            source_path: None,
            target_path: None,
            sinkhorn_mode: SinkhornMode::Auto,
            ball_factor: 2.0,
        }
    }
}

/// A source cloud from a three-component Gaussian mixture, and a target
/// cloud drawn from the same mixture and then pushed through the inverse
/// of a fixed rotation-scaling-shift, so an affine map can align them.
pub fn synthetic_clouds(m: usize, n: usize, dim: usize, seed: u64) -> (Vec<Vector>, Vec<Vector>) {
    let mut rng = stream(seed, "ot-clouds");
    let centres: Vec<Vector> = (0..3)
        .map(|_| Vector::from_fn(dim, |_, _| rng.random_range(-0.7..0.7)))
        .collect();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let c = &centres[rng.random_range(0..centres.len())];
        Vector::from_fn(dim, |k, _| c[k] + 0.2 * rng.sample::<f64, _>(StandardNormal))
    };
    let source: Vec<Vector> = (0..m).map(|_| draw(&mut rng)).collect();
    let (angle, scale) = (0.6f64, 1.5f64);
    let shift = Vector::from_fn(dim, |k, _| if k % 2 == 0 { 0.4 } else { -0.3 });
    let target = (0..n)
        .map(|_| {
            let x = draw(&mut rng) - &shift;
            // Inverse rotation in the first coordinate plane, then unscale.
            let mut y = x / scale;
            if dim >= 2 {
                let (c, s) = (angle.cos(), angle.sin());
                let (a, b) = (y[0], y[1]);
                y[0] = c * a + s * b;
                y[1] = -s * a + c * b;
            }
            y
        })
        .collect();
    (source, target)
}

fn uniform(n: usize) -> Vector {
    Vector::from_element(n, 1.0 / n as f64)
}

#[derive(Debug, Clone)]
pub struct SemiDualInstance {
    pub source: Vec<Vector>,
    pub mu: Vector,
    pub target: Vec<Vector>,
    pub nu: Vector,
    pub epsilon: f64,
    pub offset: Offset,
}

impl SemiDualInstance {
    pub fn uniform(source: Vec<Vector>, target: Vec<Vector>, epsilon: f64, offset: Offset) -> Result<Self> {
        let (mu, nu) = (uniform(source.len()), uniform(target.len()));
        Self::new(source, mu, target, nu, epsilon, offset)
    }

    pub fn new(
        source: Vec<Vector>,
        mu: Vector,
        target: Vec<Vector>,
        nu: Vector,
        epsilon: f64,
        offset: Offset,
    ) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::invalid("points", "both clouds must be non-empty"));
        }
        if mu.len() != source.len() {
            return Err(Error::DimensionMismatch { context: "source weights", expected: source.len(), actual: mu.len() });
        }
        if nu.len() != target.len() {
            return Err(Error::DimensionMismatch { context: "target weights", expected: target.len(), actual: nu.len() });
        }
        for (name, w) in [("mu", &mu), ("nu", &nu)] {
            if w.iter().any(|x| !(*x >= 0.0)) || (w.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(name, "weights must be non-negative and sum to 1"));
            }
        }
        if !(epsilon > 0.0) {
            return Err(Error::invalid("epsilon", format!("must be positive, got {epsilon}")));
        }
        Ok(Self { source, mu, target, nu, epsilon, offset })
    }

    pub fn nu_min(&self) -> f64 {
        self.nu.min()
    }
}

#[derive(Debug, Clone)]
pub struct SemiDualProblem {
    instance: SemiDualInstance,
    model: MapModel,
    mode: TransportMode,
    theta0: Vector,
    ball: DualBall,
    l_c: f64,
    sinkhorn_mode: SinkhornMode,
    mu_cdf: Vec<f64>,
    spec: SmoothnessSpec,
}

impl SemiDualProblem {
    pub fn new(
        instance: SemiDualInstance,
        model: MapModel,
        mode: TransportMode,
        theta0: Vector,
        ball_factor: f64,
    ) -> Result<Self> {
        model.validate()?;
        let (sample_dim, target_dim) = (instance.source[0].len(), instance.target[0].len());
        let (din, dout) = match mode {
            TransportMode::MappedTarget => (target_dim, sample_dim),
            TransportMode::Pushforward => (sample_dim, target_dim),
        };
        if model.dim_in() != din {
            return Err(Error::DimensionMismatch { context: "model input", expected: din, actual: model.dim_in() });
        }
        if model.dim_out() != dout {
            return Err(Error::DimensionMismatch { context: "model output", expected: dout, actual: model.dim_out() });
        }
        if theta0.len() != model.n_params() {
            return Err(Error::DimensionMismatch { context: "initial parameters", expected: model.n_params(), actual: theta0.len() });
        }
        if !(ball_factor >= 1.0) {
            return Err(Error::invalid("ball_factor", "must be at least 1"));
        }
        let mut cdf = Vec::with_capacity(instance.mu.len());
        let mut acc = 0.0;
        for w in instance.mu.iter() {
            acc += w;
            cdf.push(acc);
        }
        let mut problem = Self {
            instance,
            model,
            mode,
            theta0,
            ball: DualBall::with_radius(0.0),
            l_c: 0.0,
            sinkhorn_mode: SinkhornMode::Auto,
            mu_cdf: cdf,
            spec: SmoothnessSpec::new(1.0, 1.0)?,
        };
        // 𝒱 is fixed once, from the geometry at θ₀, then enlarged.
        let (xs, ys) = problem.clouds(&problem.theta0)?;
        let hull: Vec<Vector> = xs.iter().chain(ys.iter()).cloned().collect();
        problem.l_c = cost_lipschitz(&hull);
        let ball = DualBall::new(&ys, problem.l_c);
        problem.ball = DualBall::with_radius(ball_factor * ball.beta);
        let eps = problem.instance.epsilon;
        let (lvv, ltt, ltv) = smoothness_constants(problem.l_c, 2.0, eps);
        let l = lvv.max(ltt).max(ltv);
        let xi = strong_concavity_xi(ys.len(), problem.l_c, sup_diameter(&ys), eps, problem.instance.nu_min());
        // ξ underflows for all but tiny clouds; keep κ finite.
        problem.spec = SmoothnessSpec::new(l, xi.clamp(l * 1e-300, l))?;
        Ok(problem)
    }

    pub fn from_config(cfg: &OtConfig) -> Result<Self> {
        let (source, target) = match (&cfg.source_path, &cfg.target_path) {
            (Some(s), Some(t)) => (read_point_cloud(Path::new(s))?, read_point_cloud(Path::new(t))?),
            (None, None) => synthetic_clouds(cfg.source_points, cfg.target_points, cfg.dim, cfg.instance_seed),
            _ => return Err(Error::invalid("source_path", "give both cloud paths or neither")),
        };
        let instance = SemiDualInstance::uniform(source, target, cfg.epsilon, cfg.offset)?;
        let theta0 = cfg.model.initial_params(&mut stream(cfg.instance_seed, "ot-model"), cfg.model_scale);
        let mut p = Self::new(instance, cfg.model, cfg.mode, theta0, cfg.ball_factor)?;
        p.sinkhorn_mode = cfg.sinkhorn_mode;
        Ok(p)
    }

    pub fn instance(&self) -> &SemiDualInstance {
        &self.instance
    }

    pub fn model(&self) -> &MapModel {
        &self.model
    }

    pub fn ball(&self) -> DualBall {
        self.ball
    }

    /// Lipschitz constant of the cost over the hull of both clouds at `θ₀`.
    pub fn cost_lipschitz(&self) -> f64 {
        self.l_c
    }

    pub fn epsilon(&self) -> f64 {
        self.instance.epsilon
    }

    /// Sampled points and target points at `θ`, after applying the map.
    pub fn clouds(&self, theta: &Vector) -> Result<(Vec<Vector>, Vec<Vector>)> {
        let inst = &self.instance;
        match self.mode {
            TransportMode::MappedTarget => {
                let ys = inst.target.iter().map(|y| self.model.forward(theta, y)).collect::<Result<_>>()?;
                Ok((inst.source.clone(), ys))
            }
            TransportMode::Pushforward => {
                let xs = inst.source.iter().map(|z| self.model.forward(theta, z)).collect::<Result<_>>()?;
                Ok((xs, inst.target.clone()))
            }
        }
    }

    /// Cost matrix between the sampled points `rows` and all targets at `θ`.
    pub fn cost_matrix(&self, theta: &Vector, rows: &[usize]) -> Result<Matrix> {
        let (xs, ys) = self.clouds(theta)?;
        let mut c = Matrix::zeros(rows.len(), ys.len());
        for (r, &i) in rows.iter().enumerate() {
            let xi = xs.get(i).ok_or(Error::IndexOutOfRange { index: i, len: xs.len() })?;
            c.row_mut(r).copy_from(&costs(xi, &ys).transpose());
        }
        Ok(c)
    }

    /// Weighted sum of `h` and its gradients over `(index, weight)` pairs.
    pub fn weighted_grads(&self, theta: &Vector, v: &Vector, items: &[(usize, f64)]) -> Result<(f64, Vector, Vector)> {
        let inst = &self.instance;
        let n = inst.target.len();
        if v.len() != n {
            return Err(Error::DimensionMismatch { context: "potentials", expected: n, actual: v.len() });
        }
        let eps = inst.epsilon;
        let mut value = 0.0;
        let mut gv = Vector::zeros(n);
        let mut gt = Vector::zeros(self.model.n_params());
        match self.mode {
            TransportMode::MappedTarget => {
                let ys: Vec<Vector> = inst.target.iter().map(|y| self.model.forward(theta, y)).collect::<Result<_>>()?;
                let mut cot: Vec<Vector> = vec![Vector::zeros(ys[0].len()); n];
                for &(i, wt) in items {
                    let x = inst.source.get(i).ok_or(Error::IndexOutOfRange { index: i, len: inst.source.len() })?;
                    let (h, g, w) = h_with_grads(&costs(x, &ys), &inst.nu, v, eps, inst.offset);
                    value += wt * h;
                    gv.axpy(wt, &g, 1.0);
                    for j in 0..n {
                        cot[j].axpy(2.0 * wt * w[j], &(&ys[j] - x), 1.0);
                    }
                }
                for j in 0..n {
                    self.model.vjp(theta, &inst.target[j], &cot[j], &mut gt)?;
                }
            }
            TransportMode::Pushforward => {
                for &(i, wt) in items {
                    let z = inst.source.get(i).ok_or(Error::IndexOutOfRange { index: i, len: inst.source.len() })?;
                    let x = self.model.forward(theta, z)?;
                    let (h, g, w) = h_with_grads(&costs(&x, &inst.target), &inst.nu, v, eps, inst.offset);
                    value += wt * h;
                    gv.axpy(wt, &g, 1.0);
                    let mut cot = Vector::zeros(x.len());
                    for j in 0..n {
                        cot.axpy(2.0 * wt * w[j], &(&x - &inst.target[j]), 1.0);
                    }
                    self.model.vjp(theta, z, &cot, &mut gt)?;
                }
            }
        }
        Ok((value, gt, gv))
    }

    fn batch_items(indices: &[usize]) -> Vec<(usize, f64)> {
        let w = 1.0 / indices.len() as f64;
        indices.iter().map(|&i| (i, w)).collect()
    }

    fn all_items(&self) -> Vec<(usize, f64)> {
        self.instance.mu.iter().copied().enumerate().collect()
    }

    /// Minibatch average of `h`.
    pub fn batch_value(&self, theta: &Vector, v: &Vector, indices: &[usize]) -> Result<f64> {
        let (xs, ys) = self.clouds(theta)?;
        let inst = &self.instance;
        let mut total = 0.0;
        for &i in indices {
            let x = xs.get(i).ok_or(Error::IndexOutOfRange { index: i, len: xs.len() })?;
            total += h_value(&costs(x, &ys), &inst.nu, v, inst.epsilon, inst.offset);
        }
        Ok(total / indices.len() as f64)
    }

    /// Draws `batch` indices from `μ` with replacement.
    pub fn draw_indices<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<usize> {
        let last = self.mu_cdf.len() - 1;
        (0..batch)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * self.mu_cdf[last];
                self.mu_cdf.partition_point(|&c| c <= u).min(last)
            })
            .collect()
    }

    /// Full Sinkhorn between the sampled and target clouds at `θ`, run until
    /// both marginals hold to `1e-10` relative or `max_iters` is reached.
    /// Returns `(W_ε, zero-sum potentials v)`.
    pub fn solve_transport(&self, theta: &Vector, max_iters: usize) -> Result<(f64, Vector)> {
        let inst = &self.instance;
        let rows: Vec<usize> = (0..inst.source.len()).collect();
        let c = self.cost_matrix(theta, &rows)?;
        let chunk = 50;
        let mut log_b: Option<Vector> = None;
        let mut done = 0;
        loop {
            let r = sinkhorn(&c, &inst.mu, &inst.nu, inst.epsilon, chunk, log_b.as_ref(), self.sinkhorn_mode)?;
            done += chunk;
            let row_err = r.row_marginal().component_div(&inst.mu).add_scalar(-1.0).amax();
            if row_err < 1e-10 || done >= max_iters {
                let mut v = (&r.log_b - inst.nu.map(f64::ln)) * inst.epsilon;
                let mean = v.mean();
                v.add_scalar_mut(-mean);
                return Ok((r.dual, v));
            }
            log_b = Some(r.log_b);
        }
    }

    /// Regularized transport cost `W_ε` at `θ` (no offset).
    pub fn transport_cost(&self, theta: &Vector) -> Result<f64> {
        Ok(self.solve_transport(theta, 20_000)?.0)
    }

    /// `∇²_v F = −(1/ε) Σ_i μ_i (diag(w_i) − w_i w_iᵀ)`.
    pub fn hessian_v(&self, theta: &Vector, v: &Vector) -> Result<Matrix> {
        let inst = &self.instance;
        let n = inst.target.len();
        if v.len() != n {
            return Err(Error::DimensionMismatch { context: "potentials", expected: n, actual: v.len() });
        }
        let (xs, ys) = self.clouds(theta)?;
        let mut h = Matrix::zeros(n, n);
        for (x, &mu) in xs.iter().zip(inst.mu.iter()) {
            let w = softmax_weights(&costs(x, &ys), &inst.nu, v, inst.epsilon);
            h.ger(mu, &w, &w, 1.0);
            for j in 0..n {
                h[(j, j)] -= mu * w[j];
            }
        }
        Ok(h / inst.epsilon)
    }

    /// Projected gradient ascent on `v ↦ F(θ, v)` from `v = 0` with step
    /// `ε`, until the projected step moves less than `tol` or after
    /// `max_iters` steps. Returns `(F(θ, v), v)`.
    pub fn maximize_dual(&self, theta: &Vector, max_iters: usize, tol: f64) -> Result<(f64, Vector)> {
        let step = self.instance.epsilon;
        let mut v = Vector::zeros(self.dim_v());
        for _ in 0..max_iters {
            let (_, gv) = self.exact_grads(theta, &v)?;
            let mut next = &v + gv * step;
            self.project(&mut next);
            let moved = (&next - &v).amax();
            v = next;
            if moved < tol {
                break;
            }
        }
        Ok((self.value(theta, &v)?, v))
    }
}

impl ProblemOracle for SemiDualProblem {
    fn name(&self) -> &str {
        match self.mode {
            TransportMode::MappedTarget => "semidual-ot-mapped-target",
            TransportMode::Pushforward => "semidual-ot-pushforward",
        }
    }

    fn dim_theta(&self) -> usize {
        self.model.n_params()
    }

    fn dim_v(&self) -> usize {
        self.instance.target.len()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::STOCH_GRAD_THETA | Capabilities::STOCH_GRAD_V | Capabilities::EXACT_GRAD | Capabilities::PROJECTION
    }

    fn smoothness(&self) -> &SmoothnessSpec {
        &self.spec
    }

    fn initial_point(&self) -> (Vector, Vector) {
        (self.theta0.clone(), Vector::zeros(self.dim_v()))
    }

    fn draw_sample(&self, streams: &mut RngStreams, batch: usize) -> Sample {
        Sample { indices: self.draw_indices(&mut streams.sample, batch), ..Default::default() }
    }

    fn stoch_grad_theta(&self, theta: &Vector, v: &Vector, z: &Sample) -> Result<Vector> {
        Ok(self.weighted_grads(theta, v, &Self::batch_items(&z.indices))?.1)
    }

    fn stoch_grad_v(&self, theta: &Vector, v: &Vector, z: &Sample) -> Result<Vector> {
        Ok(self.weighted_grads(theta, v, &Self::batch_items(&z.indices))?.2)
    }

    fn value(&self, theta: &Vector, v: &Vector) -> Result<f64> {
        Ok(self.weighted_grads(theta, v, &self.all_items())?.0)
    }

    fn exact_grads(&self, theta: &Vector, v: &Vector) -> Result<(Vector, Vector)> {
        let (_, gt, gv) = self.weighted_grads(theta, v, &self.all_items())?;
        Ok((gt, gv))
    }

    fn project(&self, v: &mut Vector) {
        self.ball.project(v);
    }

    /// `max_v F(θ, v) = W_ε + offset`, by Sinkhorn on the full clouds.
    fn approx_phi(&self, theta: &Vector) -> Result<f64> {
        Ok(self.transport_cost(theta)? + self.instance.offset.value(self.instance.epsilon))
    }
}

/// State of learning with a Sinkhorn subroutine in place of the ascent
/// step: each iteration runs `m_sin` warm-started Sinkhorn iterations on a
/// minibatch, reads the potentials off the column scaling, and takes one
/// descent step on θ.
#[derive(Debug, Clone)]
pub struct SinkhornLearner {
    pub theta: Vector,
    pub v: Vector,
    /// Column log-scaling carried between iterations.
    pub log_b: Vector,
    /// Sign `s` in `v = s·ε log(b/ν)`; fixed by the first informative step.
    pub sign: Option<f64>,
    pub iter: usize,
}

impl SinkhornLearner {
    pub fn new(problem: &SemiDualProblem) -> Self {
        let (theta, v) = problem.initial_point();
        let n = v.len();
        Self { theta, v, log_b: Vector::zeros(n), sign: None, iter: 0 }
    }

    fn potentials(problem: &SemiDualProblem, log_b: &Vector, sign: f64) -> Vector {
        let inst = problem.instance();
        let mut v = (log_b - inst.nu.map(f64::ln)) * (sign * inst.epsilon);
        let mean = v.mean();
        v.add_scalar_mut(-mean);
        v
    }

    /// One iteration. The literal recovery is `v = −ε log b`; on the first
    /// iteration where `b` is informative both signs are tried and the one
    /// with the larger minibatch objective is kept.
    pub fn step(
        &mut self,
        problem: &SemiDualProblem,
        m_sin: usize,
        alpha: f64,
        streams: &mut RngStreams,
        batch: usize,
    ) -> Result<()> {
        let inst = problem.instance();
        if self.log_b.len() != inst.target.len() {
            return Err(Error::DimensionMismatch {
                context: "warm-start scaling",
                expected: inst.target.len(),
                actual: self.log_b.len(),
            });
        }
        if batch == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        let indices = problem.draw_indices(&mut streams.sample, batch);
        if m_sin > 0 {
            let c = problem.cost_matrix(&self.theta, &indices)?;
            let r = sinkhorn(&c, &uniform(batch), &inst.nu, inst.epsilon, m_sin, Some(&self.log_b), problem.sinkhorn_mode)?;
            self.log_b = r.log_b;
            let informative = self.log_b.max() - self.log_b.min() > 1e-12;
            let sign = match self.sign {
                Some(s) => s,
                None if informative => {
                    let minus = Self::potentials(problem, &self.log_b, -1.0);
                    let plus = Self::potentials(problem, &self.log_b, 1.0);
                    let h_minus = problem.batch_value(&self.theta, &minus, &indices)?;
                    let h_plus = problem.batch_value(&self.theta, &plus, &indices)?;
                    let s = if h_minus < h_plus {
                        log::warn!("v = -eps log b lowers the semi-dual objective ({h_minus:.6e} < {h_plus:.6e}); using v = +eps log b");
                        1.0
                    } else {
                        -1.0
                    };
                    self.sign = Some(s);
                    s
                }
                None => -1.0,
            };
            self.v = Self::potentials(problem, &self.log_b, sign);
        }
        let g = problem.weighted_grads(&self.theta, &self.v, &SemiDualProblem::batch_items(&indices))?.1;
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "theta gradient", iter: self.iter });
        }
        self.theta.axpy(-alpha, &g, 1.0);
        self.iter += 1;
        Ok(())
    }
}

//! Acceptance suite. Runs every criterion in order and prints one
//! PASS/FAIL line each; exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use rsgda::diagnostics::{finite_diff_check, finite_diff_error, DEFAULT_H_GRID};
use rsgda::problems::{DroConfig, QuadraticConfig, QuadraticSaddle, ToyDro};
use rsgda::rng::stream;
use rsgda::schedules::{descent_alpha_bound, Regime, StepSchedule};
use rsgda::semidual::{
    cost_lipschitz, grad_v_h, h_value, sinkhorn, softmax_weights, strong_concavity_xi, sup_diameter, synthetic_clouds,
    Activation, DualBall, MapModel, Offset, SemiDualInstance, SemiDualProblem, SinkhornMode, TransportMode,
};
use rsgda::solvers::{run, Algorithm, SolverConfig};
use rsgda::{ProblemOracle, Vector};
use rsgda_cli::config::ExperimentConfig;
use rsgda_cli::experiments::{
    compare_esgda_rsgda, fit_rate_from_traces, random_probe, run_experiment, sweep_sinkhorn_msin, verify_descent,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rsgda-acceptance-{}", std::process::id())).join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

fn traces(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    v.sort();
    v
}

fn gaussian(rng: &mut impl Rng, n: usize, sd: f64) -> Vector {
    Vector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// Analytic gradients against central differences at 20 random probes
/// per family.
fn gradient_correctness() -> Outcome {
    const TOL: f64 = 1e-5;
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, e: f64| match worst.iter_mut().find(|(n, _)| n == name) {
        Some((_, w)) => *w = w.max(e),
        None => worst.push((name.to_string(), e)),
    };
    let check = |p: &dyn ProblemOracle, name: &str, record: &mut dyn FnMut(&str, f64)| {
        for i in 0..20 {
            let (t, v) = random_probe(p, 11, &format!("{name}-{i}"), 0.5);
            for (block, e) in finite_diff_check(p, &t, &v, &DEFAULT_H_GRID).unwrap().blocks {
                record(&block, e);
            }
        }
    };
    let quad = QuadraticSaddle::generate(&QuadraticConfig::default()).unwrap();
    check(&quad, "quadratic", &mut record);
    let dro = ToyDro::from_config(&DroConfig::default()).unwrap();
    check(&dro, "dro", &mut record);

    let mut rng = stream(12, "h-probes");
    for _ in 0..20 {
        let n = 6;
        let c = gaussian(&mut rng, n, 1.0).map(|x| x * x);
        let raw = Vector::from_fn(n, |_, _| rng.random_range(0.1..1.0));
        let nu = &raw / raw.sum();
        let v = gaussian(&mut rng, n, 0.5);
        let eps = rng.random_range(0.05..1.0);
        let e = finite_diff_error(|w| Ok(h_value(&c, &nu, w, eps, Offset::MinusEps)), &v, &grad_v_h(&c, &nu, &v, eps), &DEFAULT_H_GRID)
            .unwrap();
        record("grad_v_h", e);
        let e = finite_diff_error(|cc| Ok(h_value(cc, &nu, &v, eps, Offset::MinusEps)), &c, &softmax_weights(&c, &nu, &v, eps), &DEFAULT_H_GRID)
            .unwrap();
        record("dh/dc", e);
    }

    let models = [
        ("affine", MapModel::Affine { dim_in: 2, dim_out: 2 }, TransportMode::MappedTarget),
        ("affine-push", MapModel::Affine { dim_in: 2, dim_out: 2 }, TransportMode::Pushforward),
        ("tanh-mlp", MapModel::Perceptron { dim_in: 2, hidden: 8, dim_out: 2, activation: Activation::Tanh }, TransportMode::MappedTarget),
        ("gelu-mlp", MapModel::Perceptron { dim_in: 2, hidden: 8, dim_out: 2, activation: Activation::Gelu }, TransportMode::Pushforward),
    ];
    for (name, model, mode) in models {
        let (s, t) = synthetic_clouds(24, 6, 2, 5);
        let inst = SemiDualInstance::uniform(s, t, 0.1, Offset::MinusEps).unwrap();
        let theta0 = model.initial_params(&mut stream(5, name), 1.0);
        let p = SemiDualProblem::new(inst, model, mode, theta0, 2.0).unwrap();
        for i in 0..20 {
            let (t, v) = random_probe(&p, 13, &format!("{name}-{i}"), 0.1);
            for (block, e) in finite_diff_check(&p, &t, &v, &DEFAULT_H_GRID).unwrap().blocks {
                record(&format!("{name} {block}"), e);
            }
        }
    }
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let bad: Vec<String> = worst.iter().filter(|(_, e)| !(*e <= TOL)).map(|(n, e)| format!("{n}={e:.1e}")).collect();
    outcome(bad.is_empty(), format!("{} blocks, worst relative error {max:.2e} {}", worst.len(), bad.join(" ")))
}

const DESCENT_CONFIG: &str = r#"
[experiment]
seeds = [0]

[problem]
kind = "quadratic"
noise_theta_sd = 0.3
noise_v_sd = 0.3

[solver]
max_iters = 1000

[schedule]
regime = "rgda-constant"
p = 0.5
strict = true
"#;

/// The one-step descent inequality at 20 random states, noisy and noiseless.
fn descent_certification() -> Outcome {
    let noisy = verify_descent(&config(DESCENT_CONFIG), 20, 100_000, &scratch("c2-noisy")).unwrap();
    let passed = noisy.iter().filter(|r| r.verdict.pass).count();
    let clean_cfg = config(&DESCENT_CONFIG.replace("0.3", "0.0"));
    let clean = verify_descent(&clean_cfg, 20, 10, &scratch("c2-clean")).unwrap();
    let clean_min = clean.iter().map(|r| r.verdict.slack).fold(f64::INFINITY, f64::min);
    let worst = noisy.iter().map(|r| r.verdict.slack / r.verdict.std_error.max(f64::MIN_POSITIVE)).fold(f64::INFINITY, f64::min);
    outcome(
        passed == 20 && clean.iter().all(|r| r.verdict.pass && r.verdict.slack > 0.0),
        format!("noisy {passed}/20 (min slack/SE {worst:.2}), noiseless min slack {clean_min:.3e}"),
    )
}

fn rate_slope(dir: &Path, prefix: &str, window: (f64, f64)) -> f64 {
    fit_rate_from_traces(&traces(dir, prefix), window).unwrap().slope
}

/// Deterministic RGDA, strict constant steps, κ = 5.
fn rgda_rate() -> Outcome {
    let cfg = config(
        r#"
[experiment]
seeds = [0]

[problem]
kind = "quadratic"
kappa = 5.0

[solver]
algorithm = "rgda"
max_iters = 10000

[schedule]
regime = "rgda-constant"
p = 0.5
strict = true
"#,
    );
    let dir = scratch("c3");
    run_experiment(&cfg, &dir, None).unwrap();
    let slope = rate_slope(&dir, "trace_", (1e2, 1e4));
    outcome((-1.3..=-0.8).contains(&slope), format!("slope {slope:.3} on k in [1e2, 1e4]"))
}

/// Quadratic instance for the stochastic rate criteria: mildly indefinite
/// `Q`, so that `φ`'s curvature reaches the joint smoothness scale.
const RATE_PROBLEM: &str = r#"
[problem]
kind = "KIND"
negative_scale = 0.1
"#;

fn rate_config(kind: &str, extra_problem: &str, regime: &str) -> ExperimentConfig {
    config(&format!(
        r#"
[experiment]
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
{}{extra_problem}

[solver]
algorithm = "rsgda"
max_iters = 100000
record_every = 10
diagnostics = true

[schedule]
regime = "{regime}"
p = 0.1
"#,
        RATE_PROBLEM.replace("KIND", kind)
    ))
}

/// RSGDA with the decreasing schedule under noise, 10-seed average.
fn rsgda_decreasing_rate() -> Outcome {
    let cfg = rate_config("quadratic", "noise_theta_sd = 0.3\nnoise_v_sd = 0.3\n", "rsgda-decreasing");
    let dir = scratch("c4");
    run_experiment(&cfg, &dir, None).unwrap();
    let slope = rate_slope(&dir, "trace_", (1e3, 1e5));
    outcome(slope <= -0.30, format!("slope {slope:.3} on k in [1e3, 1e5]"))
}

/// Interpolation schedule against the decreasing schedule on the
/// interpolating finite sum.
fn interpolation_rate() -> Outcome {
    let (a, b) = (scratch("c5-interp"), scratch("c5-decreasing"));
    run_experiment(&rate_config("interp", "", "interp-anytime"), &a, None).unwrap();
    run_experiment(&rate_config("interp", "", "rsgda-decreasing"), &b, None).unwrap();
    let (sa, sb) = (rate_slope(&a, "trace_", (1e3, 1e5)), rate_slope(&b, "trace_", (1e3, 1e5)));
    outcome(sa <= -0.40 && sa < sb, format!("anytime slope {sa:.3}, decreasing slope {sb:.3}"))
}

/// ESGDA(m) against RSGDA(p = 1/(m+1)) on the toy DRO problem.
fn esgda_rsgda_equivalence() -> Outcome {
    let cfg = config(
        r#"
[experiment]
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]

[problem]
kind = "dro"

[solver]
max_iters = 10000
record_every = 100
diagnostics = false

[schedule]
regime = "custom"
p = 0.5
alpha0 = 0.05
eta0 = 0.1
"#,
    );
    let rows = compare_esgda_rsgda(&cfg, &[1, 4, 9], &scratch("c6"), None).unwrap();
    let detail: Vec<String> = rows
        .iter()
        .map(|r| format!("m={} gap {:.2}%", r.m, 100.0 * r.relative_gap))
        .collect();
    outcome(rows.iter().all(|r| r.relative_gap <= 0.10), detail.join(", "))
}

fn constant_run(q: &QuadraticSaddle, fraction: f64, p: f64, iters: usize) -> rsgda::solvers::Trace {
    let spec = *q.smoothness();
    let eta = 1.0 / (2.0 * spec.l());
    let alpha = fraction * descent_alpha_bound(&spec, p, eta);
    let regime = Regime::Custom { alpha0: alpha, eta0: eta, alpha_decay: 0.0, eta_decay: 0.0 };
    let schedule = StepSchedule::new(spec, p, regime, false).unwrap();
    let mut cfg = SolverConfig::new(Algorithm::Rsgda, schedule, iters, 0);
    cfg.record_every = 100;
    run(&cfg, q).unwrap()
}

/// Convergence at half the step bound for every κ preset, divergence at
/// 50× the bound with p = 0.9 on the default instance.
fn step_size_admissibility() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for kappa in [1.1, 5.0, 25.0] {
        let q = QuadraticSaddle::generate(&QuadraticConfig { kappa, ..Default::default() }).unwrap();
        let t = constant_run(&q, 0.5, 0.1, 100_000);
        let first = t.running_min[0].unwrap();
        let best = t.best_grad_phi_norm_sq().unwrap();
        pass &= !t.diverged() && best < first / 10.0;
        parts.push(format!("kappa={kappa}: {:.1e}->{:.1e}", first, best));
    }
    let q = QuadraticSaddle::generate(&QuadraticConfig::default()).unwrap();
    let t = constant_run(&q, 50.0, 0.9, 10_000);
    pass &= t.diverged();
    parts.push(format!("50x bound, p=0.9: {:?}", t.status));
    outcome(pass, parts.join("; "))
}

fn small_instance(seed: u64, m: usize, n: usize, spread: f64, eps: f64, offset: Offset) -> SemiDualProblem {
    let mut rng = stream(seed, "small-instance");
    let cloud = |rng: &mut rand_chacha::ChaCha8Rng, k: usize| -> Vec<Vector> {
        (0..k).map(|_| Vector::from_fn(2, |_, _| spread * rng.random_range(-1.0..1.0))).collect()
    };
    let (s, t) = (cloud(&mut rng, m), cloud(&mut rng, n));
    let inst = SemiDualInstance::uniform(s, t, eps, offset).unwrap();
    let model = MapModel::Affine { dim_in: 2, dim_out: 2 };
    let theta0 = model.initial_params(&mut rng, 1.0);
    SemiDualProblem::new(inst, model, TransportMode::MappedTarget, theta0, 2.0).unwrap()
}

/// Projected ascent on the semi-dual against Sinkhorn, and the per-iteration
/// marginal identity.
fn semidual_sinkhorn_consistency() -> Outcome {
    let (mut worst_gap, mut worst_res) = (0.0f64, 0.0f64);
    for seed in 0..5 {
        let p = small_instance(seed, 8, 5, 1.0, 0.1, Offset::Zero);
        let (theta, _) = p.initial_point();
        let (value, _) = p.maximize_dual(&theta, 1_000_000, 1e-14).unwrap();
        let w = p.transport_cost(&theta).unwrap();
        worst_gap = worst_gap.max((value - w).abs());
        let inst = p.instance();
        let c = p.cost_matrix(&theta, &(0..8).collect::<Vec<_>>()).unwrap();
        for mode in [SinkhornMode::Kernel, SinkhornMode::Log] {
            let r = sinkhorn(&c, &inst.mu, &inst.nu, inst.epsilon, 500, None, mode).unwrap();
            worst_res = worst_res.max(r.max_row_residual);
        }
    }
    outcome(
        worst_gap <= 1e-4 && worst_res <= 1e-12,
        format!("max |ascent - W_eps| {worst_gap:.2e}, max marginal residual {worst_res:.2e}"),
    )
}

fn zero_sum_direction(rng: &mut impl Rng, n: usize) -> Vector {
    let d = gaussian(rng, n, 1.0);
    d.add_scalar(-d.mean())
}

/// A uniform point of the zero-sum ball of radius `beta`.
fn ball_point(rng: &mut impl Rng, n: usize, beta: f64) -> Vector {
    let d = zero_sum_direction(rng, n);
    let r = beta * rng.random::<f64>().powf(1.0 / (n - 1) as f64);
    &d * (r / d.norm())
}

/// Sum-zero Hessian quadratic forms against the strong-concavity modulus.
fn strong_concavity() -> Outcome {
    let mut worst_ratio = f64::INFINITY;
    let mut min_xi = f64::INFINITY;
    let mut checks = 0;
    for seed in 0..5 {
        let n = 3 + seed as usize % 4;
        let p = small_instance(100 + seed, 10, n, 0.1, 0.1, Offset::MinusEps);
        let mut rng = stream(seed, "concavity");
        let (t0, _) = p.initial_point();
        for _ in 0..100 {
            let theta = &t0 + gaussian(&mut rng, t0.len(), 0.05);
            let (xs, ys) = p.clouds(&theta).unwrap();
            let hull: Vec<Vector> = xs.iter().chain(ys.iter()).cloned().collect();
            let l_c = cost_lipschitz(&hull);
            let ball = DualBall::new(&ys, l_c);
            let xi = strong_concavity_xi(n, l_c, sup_diameter(&ys), p.epsilon(), p.instance().nu_min());
            let v = ball_point(&mut rng, n, ball.beta);
            let d = zero_sum_direction(&mut rng, n);
            let h = p.hessian_v(&theta, &v).unwrap();
            let form = d.dot(&(&h * &d));
            checks += 1;
            worst_ratio = worst_ratio.min(-form / (xi * d.norm_squared()));
            min_xi = min_xi.min(xi);
        }
    }
    outcome(
        worst_ratio >= 1.0 && min_xi > 0.0,
        format!("{checks} forms, min (-d'Hd)/(xi|d|^2) = {worst_ratio:.3e}, min xi {min_xi:.2e}"),
    )
}

/// Difference quotients of `∇_vF` against `1/ε`.
fn gradient_lipschitz() -> Outcome {
    let mut worst = 0.0f64;
    let mut bound = 0.0;
    for seed in 0..5 {
        let p = small_instance(200 + seed, 8, 5, 1.0, 0.1, Offset::MinusEps);
        bound = 1.0 / p.epsilon();
        let mut rng = stream(seed, "lipschitz");
        let (t0, _) = p.initial_point();
        let beta = p.ball().beta;
        for _ in 0..1000 {
            let theta = &t0 + gaussian(&mut rng, t0.len(), 0.1);
            let (a, b) = (ball_point(&mut rng, 5, beta), ball_point(&mut rng, 5, beta));
            let ga = p.exact_grads(&theta, &a).unwrap().1;
            let gb = p.exact_grads(&theta, &b).unwrap().1;
            worst = worst.max((ga - gb).norm() / (a - b).norm() / bound);
        }
    }
    outcome(worst <= 1.0 + 1e-3, format!("max quotient {:.4} x (1/eps = {bound})", worst))
}

/// Sinkhorn iterations per learning step on a 512 × 64 cloud pair.
fn msin_sweep() -> Outcome {
    let cfg = config(
        r#"
[experiment]
seeds = [0, 1, 2, 3, 4]

[problem]
kind = "ot"
source_points = 512
target_points = 64

[solver]
algorithm = "sinkhorn"
max_iters = 1000
batch_size = 128
record_every = 100

[schedule]
regime = "custom"
p = 0.5
alpha0 = 0.005
eta0 = 1.0
"#,
    );
    let rows = sweep_sinkhorn_msin(&cfg, &[1, 5, 20], &scratch("c11"), None).unwrap();
    let detail: Vec<String> = rows.iter().map(|r| format!("m_sin={} {:.6}", r.m_sin, r.mean_final_loss)).collect();
    let best = rows.iter().min_by(|a, b| a.mean_final_loss.total_cmp(&b.mean_final_loss)).unwrap();
    outcome(best.m_sin == 1, detail.join(", "))
}

fn strip_wall_time(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Reruns with the same master seeds reproduce every trace.
fn determinism() -> Outcome {
    let experiments = [
        DESCENT_CONFIG.replace("max_iters = 1000", "max_iters = 2000\nalgorithm = \"rsgda\"\nfast_mode = false"),
        r#"
[experiment]
seeds = [1, 2]
[problem]
kind = "dro"
[solver]
algorithm = "esgda"
loop_size_m = 3
max_iters = 500
[schedule]
regime = "custom"
p = 0.25
alpha0 = 0.05
eta0 = 0.1
[sweep]
m = [1, 4]
"#
        .to_string(),
        r#"
[experiment]
seeds = [3]
[problem]
kind = "ot"
source_points = 64
target_points = 16
[solver]
algorithm = "sinkhorn"
max_iters = 50
batch_size = 16
record_every = 5
[schedule]
regime = "custom"
p = 0.5
alpha0 = 0.01
eta0 = 1.0
[sweep]
m_sin = [1, 3]
"#
        .to_string(),
    ];
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for (i, text) in experiments.iter().enumerate() {
        let cfg = config(text);
        let (a, b) = (scratch(&format!("c12-{i}-a")), scratch(&format!("c12-{i}-b")));
        run_experiment(&cfg, &a, Some(1)).unwrap();
        run_experiment(&cfg, &b, Some(3)).unwrap();
        for path in traces(&a, "trace_") {
            let name = path.file_name().unwrap().to_owned();
            compared += 1;
            if strip_wall_time(&path) != strip_wall_time(&b.join(&name)) {
                mismatched.push(name.to_string_lossy().into_owned());
            }
        }
    }
    outcome(mismatched.is_empty() && compared > 0, format!("{compared} traces compared, mismatches: {mismatched:?}"))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 12] = [
        ("gradient correctness", Duration::from_secs(10), gradient_correctness),
        ("one-step descent inequality", Duration::from_secs(120), descent_certification),
        ("RGDA constant-step rate", Duration::from_secs(30), rgda_rate),
        ("RSGDA decreasing-step rate", Duration::from_secs(300), rsgda_decreasing_rate),
        ("interpolation speedup", Duration::from_secs(300), interpolation_rate),
        ("ESGDA/RSGDA equivalence", Duration::from_secs(600), esgda_rsgda_equivalence),
        ("step-size admissibility vs kappa", Duration::from_secs(600), step_size_admissibility),
        ("semi-dual/Sinkhorn consistency", Duration::from_secs(10), semidual_sinkhorn_consistency),
        ("strong concavity on the dual ball", Duration::from_secs(30), strong_concavity),
        ("gradient Lipschitz constant in v", Duration::from_secs(600), gradient_lipschitz),
        ("m_sin sweep", Duration::from_secs(600), msin_sweep),
        ("determinism", Duration::from_secs(600), determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {name}: {} [{:.1}s of {}s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    let _ = std::fs::remove_dir_all(std::env::temp_dir().join(format!("rsgda-acceptance-{}", std::process::id())));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

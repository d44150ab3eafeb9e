//! Experiment drivers behind the subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rsgda::diagnostics::{
    average_series, finite_diff_check, fit_rate, verify_descent_step, DescentVerdict, RateFit, DEFAULT_H_GRID,
};
use rsgda::rng::stream;
use rsgda::schedules::StepSchedule;
use rsgda::semidual::{SemiDualProblem, SinkhornLearner};
use rsgda::solvers::{run, Algorithm, SolverConfig};
use rsgda::{Capabilities, IterateState, ProblemOracle, RngStreams, Vector};

use crate::config::{BuiltProblem, ExperimentConfig, SolverKind, SweepPoint};
use crate::output::{
    num, opt, read_grad_series, trace_rows, write_table, write_trace, TraceRow, SUMMARY_COLUMNS, VERDICT_COLUMNS,
};

/// Tolerance of the `grad-check` subcommand.
pub const GRAD_CHECK_TOL: f64 = 1e-5;

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().context("cannot start worker pool")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub final_phi: Option<f64>,
    pub best_grad_phi_norm_sq: Option<f64>,
    pub diverged: bool,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub trace_file: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub point_index: usize,
    pub point: SweepPoint,
    pub seed: u64,
    pub algorithm: SolverKind,
    pub result: std::result::Result<RunSummary, String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub outcomes: Vec<RunOutcome>,
}

impl ExperimentReport {
    /// Whether any run ended in an error. Divergence is not an error.
    pub fn errored(&self) -> bool {
        self.outcomes.iter().any(|o| o.result.is_err())
    }
}

fn final_phi(problem: &dyn ProblemOracle, theta: &Vector) -> Option<f64> {
    problem.approx_phi(theta).ok().filter(|x| x.is_finite())
}

/// Runs the Sinkhorn learner and returns its trace rows, with `φ` (the
/// transport cost plus the offset) on every recorded row.
pub fn run_sinkhorn_learner(
    problem: &SemiDualProblem,
    schedule: &StepSchedule,
    m_sin: usize,
    max_iters: usize,
    batch: usize,
    record_every: usize,
    seed: u64,
) -> Result<(Vec<TraceRow>, Vector)> {
    let mut learner = SinkhornLearner::new(problem);
    let mut streams = RngStreams::new(seed);
    let start = Instant::now();
    let mut rows = Vec::new();
    for k in 0..max_iters {
        let (alpha, _) = schedule.at(k);
        let phi = if k % record_every == 0 { Some(problem.approx_phi(&learner.theta)?) } else { None };
        learner.step(problem, m_sin, alpha, &mut streams, batch)?;
        if let Some(phi) = phi {
            rows.push(TraceRow {
                iter: k,
                alpha_k: alpha,
                eta_k: None,
                step_kind: "sinkhorn".into(),
                grad_phi_norm_sq: None,
                surrogate_grad_norm_sq: None,
                phi: Some(phi),
                d_k: None,
                r_k: None,
                e_k: None,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok((rows, learner.theta))
}

fn trace_name(point_index: usize, seed: u64) -> String {
    format!("trace_{point_index}_seed{seed}.csv")
}

fn run_one(
    cfg: &ExperimentConfig,
    built: &BuiltProblem,
    point_index: usize,
    point: SweepPoint,
    seed: u64,
    out_dir: &Path,
) -> Result<RunSummary> {
    let oracle = built.oracle();
    let start = Instant::now();
    let file = trace_name(point_index, seed);
    let summary = match cfg.solver_config(built, point, seed)? {
        Some(solver) => {
            let trace = run(&solver, oracle)?;
            write_trace(&out_dir.join(&file), &trace_rows(&trace))?;
            RunSummary {
                final_phi: final_phi(oracle, &trace.final_state.theta),
                best_grad_phi_norm_sq: trace.best_grad_phi_norm_sq(),
                diverged: trace.diverged(),
                iterations: trace.records.last().map_or(0, |r| r.iter + 1),
                wall_time_s: 0.0,
                trace_file: file,
            }
        }
        None => {
            let BuiltProblem::Ot(ot) = built else { bail!("the Sinkhorn learner needs an OT problem") };
            let schedule = cfg.schedule_at(oracle, point)?;
            let m_sin = point.m_sin.unwrap_or(cfg.solver.m_sin);
            let s = &cfg.solver;
            let (rows, theta) =
                run_sinkhorn_learner(ot, &schedule, m_sin, s.max_iters, s.batch_size, s.record_every, seed)?;
            write_trace(&out_dir.join(&file), &rows)?;
            RunSummary {
                final_phi: final_phi(oracle, &theta),
                best_grad_phi_norm_sq: None,
                diverged: false,
                iterations: s.max_iters,
                wall_time_s: 0.0,
                trace_file: file,
            }
        }
    };
    Ok(RunSummary { wall_time_s: start.elapsed().as_secs_f64(), ..summary })
}

/// One trace CSV per (sweep point, seed) and a `summary.csv`. Invalid
/// configurations are errors; failures of individual runs are recorded in
/// the summary.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, threads: Option<usize>) -> Result<ExperimentReport> {
    cfg.validate()?;
    create_dir(out_dir)?;
    let built = cfg.problem.build()?;
    let points = cfg.sweep.points();
    let jobs: Vec<(usize, SweepPoint, u64)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, pt)| cfg.experiment.seeds.iter().map(move |&s| (i, *pt, s)))
        .collect();
    let outcomes: Vec<RunOutcome> = pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|&(i, point, seed)| {
                let result = run_one(cfg, &built, i, point, seed, out_dir).map_err(|e| format!("{e:#}"));
                if let Err(e) = &result {
                    log::error!("point {i} seed {seed}: {e}");
                }
                RunOutcome { point_index: i, point, seed, algorithm: cfg.solver.algorithm, result }
            })
            .collect()
    });
    let rows: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| {
            let mut row = vec![o.point_index.to_string(), o.point.label(), o.seed.to_string(), o.algorithm.as_str().into()];
            match &o.result {
                Ok(s) => row.extend([
                    if s.diverged { "diverged" } else { "completed" }.to_string(),
                    opt(s.final_phi),
                    opt(s.best_grad_phi_norm_sq),
                    s.diverged.to_string(),
                    s.iterations.to_string(),
                    format!("{:.6}", s.wall_time_s),
                    s.trace_file.clone(),
                    String::new(),
                ]),
                Err(e) => row.extend([
                    "error".to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    e.clone(),
                ]),
            }
            row
        })
        .collect();
    write_table(&out_dir.join("summary.csv"), &SUMMARY_COLUMNS, &rows)?;
    Ok(ExperimentReport { out_dir: out_dir.to_path_buf(), outcomes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub m: usize,
    pub mean_final_phi_esgda: f64,
    pub mean_final_phi_rsgda: f64,
    /// `|φ_E − φ_R| / max(|φ_E|, |φ_R|)` of the seed means.
    pub relative_gap: f64,
    /// Seed mean of `∫|φ_E − φ_R|` over the oracle budget, normalized to
    /// `[0, 1]`.
    pub mean_trace_divergence: f64,
}

/// Linear interpolation of checkpoint values at budget `t`, clamped at
/// the ends.
fn interpolate(points: &[(usize, f64)], t: usize) -> f64 {
    let i = points.partition_point(|&(k, _)| k <= t);
    if i == 0 {
        return points[0].1;
    }
    if i == points.len() {
        return points[i - 1].1;
    }
    let ((k0, f0), (k1, f1)) = (points[i - 1], points[i]);
    f0 + (f1 - f0) * (t - k0) as f64 / (k1 - k0) as f64
}

/// Trapezoidal `∫|a − b|` over the budget of `b`'s checkpoints, with `a`
/// interpolated onto them and the budget axis scaled to `[0, 1]`.
pub fn trace_divergence(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    if a.is_empty() || b.len() < 2 {
        return 0.0;
    }
    let total = b[b.len() - 1].0.max(1) as f64;
    let gap: Vec<(f64, f64)> = b.iter().map(|&(t, fb)| (t as f64 / total, (interpolate(a, t) - fb).abs())).collect();
    gap.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum()
}

/// ESGDA with loop size `m` against RSGDA with `p = 1/(m+1)` at the same
/// oracle budget (`solver.max_iters` single updates; ESGDA gets
/// `max_iters/(m+1)` epochs), on paired seeds.
pub fn compare_esgda_rsgda(
    cfg: &ExperimentConfig,
    m_list: &[usize],
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<Vec<CompareRow>> {
    if cfg.experiment.seeds.is_empty() {
        bail!("experiment.seeds: the seed list is empty");
    }
    if m_list.is_empty() {
        bail!("m list is empty");
    }
    if let Some(&m) = m_list.iter().find(|&&m| m == 0) {
        bail!("m = {m}: the loop size must be at least 1");
    }
    create_dir(out_dir)?;
    let built = cfg.problem.build()?;
    let oracle = built.oracle();
    let budget = cfg.solver.max_iters;
    let checkpoint_every = (budget / 100).max(1);
    let jobs: Vec<(usize, u64, Algorithm)> = m_list
        .iter()
        .flat_map(|&m| {
            cfg.experiment
                .seeds
                .iter()
                .flat_map(move |&s| [(m, s, Algorithm::Esgda), (m, s, Algorithm::Rsgda)])
        })
        .collect();
    let results: Vec<Result<(f64, Vec<(usize, f64)>)>> = pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|&(m, seed, algorithm)| {
                let p = 1.0 / (m as f64 + 1.0);
                let point = SweepPoint { p: Some(p), m: Some(m), ..Default::default() };
                let mut solver = SolverConfig::new(algorithm, cfg.schedule_at(oracle, point)?, budget, seed);
                solver.loop_size_m = m;
                solver.batch_size = cfg.solver.batch_size;
                solver.fast_mode = cfg.solver.fast_mode;
                solver.record_every = cfg.solver.record_every;
                solver.diagnostics = cfg.solver.diagnostics;
                solver.checkpoint_every = checkpoint_every;
                if algorithm == Algorithm::Esgda {
                    solver.max_iters = (budget / (m + 1)).max(1);
                }
                let trace = run(&solver, oracle)?;
                let file = format!("trace_{}_m{m}_seed{seed}.csv", algorithm.as_str());
                write_trace(&out_dir.join(file), &trace_rows(&trace))?;
                let phi = final_phi(oracle, &trace.final_state.theta).unwrap_or(f64::INFINITY);
                Ok((phi, trace.checkpoints))
            })
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let n = cfg.experiment.seeds.len();
    let mut rows = Vec::new();
    for (mi, &m) in m_list.iter().enumerate() {
        let block = &results[2 * n * mi..2 * n * (mi + 1)];
        let (mut fe, mut fr, mut div) = (0.0, 0.0, 0.0);
        for pair in block.chunks(2) {
            fe += pair[0].0;
            fr += pair[1].0;
            div += trace_divergence(&pair[0].1, &pair[1].1);
        }
        let (fe, fr) = (fe / n as f64, fr / n as f64);
        rows.push(CompareRow {
            m,
            mean_final_phi_esgda: fe,
            mean_final_phi_rsgda: fr,
            relative_gap: (fe - fr).abs() / fe.abs().max(fr.abs()).max(f64::MIN_POSITIVE),
            mean_trace_divergence: div / n as f64,
        });
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.m.to_string(),
                num(1.0 / (r.m as f64 + 1.0)),
                num(r.mean_final_phi_esgda),
                num(r.mean_final_phi_rsgda),
                num(r.relative_gap),
                num(r.mean_trace_divergence),
            ]
        })
        .collect();
    write_table(
        &out_dir.join("compare.csv"),
        &["m", "p", "mean_final_phi_esgda", "mean_final_phi_rsgda", "relative_gap", "mean_trace_divergence"],
        &table,
    )?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsinRow {
    pub m_sin: usize,
    pub final_losses: Vec<f64>,
    pub mean_final_loss: f64,
    /// 1 for the lowest mean final loss.
    pub rank: usize,
}

/// Learning curves of the Sinkhorn learner for each `m_sin`, and their
/// mean final transport cost over the seeds, ranked.
pub fn sweep_sinkhorn_msin(
    cfg: &ExperimentConfig,
    msin_list: &[usize],
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<Vec<MsinRow>> {
    if cfg.experiment.seeds.is_empty() {
        bail!("experiment.seeds: the seed list is empty");
    }
    if msin_list.is_empty() {
        bail!("m_sin list is empty");
    }
    if msin_list.contains(&0) {
        bail!("m_sin must be at least 1");
    }
    let BuiltProblem::Ot(ot) = cfg.problem.build()? else {
        bail!("problem.kind: the m_sin sweep needs an `ot` problem");
    };
    create_dir(out_dir)?;
    let schedule = cfg.schedule_at(&ot, SweepPoint::default())?;
    let s = &cfg.solver;
    let jobs: Vec<(usize, u64)> =
        msin_list.iter().flat_map(|&m| cfg.experiment.seeds.iter().map(move |&seed| (m, seed))).collect();
    let losses: Vec<Result<f64>> = pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|&(m_sin, seed)| {
                let (rows, theta) =
                    run_sinkhorn_learner(&ot, &schedule, m_sin, s.max_iters, s.batch_size, s.record_every, seed)?;
                write_trace(&out_dir.join(format!("trace_msin{m_sin}_seed{seed}.csv")), &rows)?;
                Ok(ot.transport_cost(&theta)?)
            })
            .collect()
    });
    let losses = losses.into_iter().collect::<Result<Vec<_>>>()?;
    let n = cfg.experiment.seeds.len();
    let mut rows: Vec<MsinRow> = msin_list
        .iter()
        .enumerate()
        .map(|(i, &m_sin)| {
            let final_losses = losses[i * n..(i + 1) * n].to_vec();
            let mean_final_loss = final_losses.iter().sum::<f64>() / n as f64;
            MsinRow { m_sin, final_losses, mean_final_loss, rank: 0 }
        })
        .collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[a].mean_final_loss.total_cmp(&rows[b].mean_final_loss));
    for (rank, &i) in order.iter().enumerate() {
        rows[i].rank = rank + 1;
    }
    let table: Vec<Vec<String>> = order
        .iter()
        .map(|&i| {
            let r = &rows[i];
            vec![r.rank.to_string(), r.m_sin.to_string(), num(r.mean_final_loss)]
        })
        .collect();
    write_table(&out_dir.join("msin_summary.csv"), &["rank", "m_sin", "mean_final_transport_cost"], &table)?;
    Ok(rows)
}

/// A random point near the starting point: `θ = θ₀ + N(0, scale²)` and
/// `v = Π(v₀ + N(0, scale²))`.
pub fn random_probe(problem: &dyn ProblemOracle, seed: u64, label: &str, scale: f64) -> (Vector, Vector) {
    let mut rng = stream(seed, label);
    let (t0, v0) = problem.initial_point();
    let theta = Vector::from_fn(t0.len(), |i, _| t0[i] + scale * rng.sample::<f64, _>(StandardNormal));
    let mut v = Vector::from_fn(v0.len(), |i, _| v0[i] + scale * rng.sample::<f64, _>(StandardNormal));
    problem.project(&mut v);
    (theta, v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub probe: usize,
    pub block: String,
    pub relative_error: f64,
}

/// Finite-difference checks at `probes` random points per seed; writes
/// `gradcheck.csv`.
pub fn grad_check(cfg: &ExperimentConfig, probes: usize, out_dir: &Path) -> Result<Vec<GradCheckRow>> {
    let built = cfg.problem.build()?;
    let oracle = built.oracle();
    let mut rows = Vec::new();
    for &seed in &cfg.experiment.seeds {
        for i in 0..probes {
            let (theta, v) = random_probe(oracle, seed, &format!("grad-check-{i}"), 0.5);
            let report = finite_diff_check(oracle, &theta, &v, &DEFAULT_H_GRID)?;
            for (block, e) in report.blocks {
                rows.push(GradCheckRow { probe: i, block, relative_error: e });
            }
        }
    }
    create_dir(out_dir)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.probe.to_string(),
                r.block.clone(),
                num(r.relative_error),
                (r.relative_error <= GRAD_CHECK_TOL).to_string(),
            ]
        })
        .collect();
    write_table(&out_dir.join("gradcheck.csv"), &["probe", "block", "relative_error", "pass"], &table)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictRow {
    pub check: String,
    pub seed: u64,
    pub verdict: DescentVerdict,
}

/// Checks the one-step descent inequality at `states` random states per
/// seed (random `θ` near `θ₀`, random `v` near `v*(θ)`, random iteration
/// index below `solver.max_iters`); writes `verdicts.csv`.
pub fn verify_descent(
    cfg: &ExperimentConfig,
    states: usize,
    mc_samples: usize,
    out_dir: &Path,
) -> Result<Vec<VerdictRow>> {
    let built = cfg.problem.build()?;
    let oracle = built.oracle();
    oracle.require(Capabilities::EXACT_VSTAR)?;
    let schedule = cfg.schedule_at(oracle, SweepPoint::default())?;
    let mut rows = Vec::new();
    for &seed in &cfg.experiment.seeds {
        for i in 0..states {
            let label = format!("verify-state-{i}");
            let (theta, _) = random_probe(oracle, seed, &label, 0.5);
            let mut rng = stream(seed, &format!("{label}-v"));
            let v_star = oracle.v_star(&theta)?;
            let mut v = Vector::from_fn(v_star.len(), |j, _| v_star[j] + 0.5 * rng.sample::<f64, _>(StandardNormal));
            oracle.project(&mut v);
            let k = rng.random_range(0..cfg.solver.max_iters.max(1));
            let verdict =
                verify_descent_step(oracle, &IterateState::new(theta, v), &schedule, k, mc_samples, seed ^ i as u64)?;
            rows.push(VerdictRow { check: format!("descent-step state={i} k={k}"), seed, verdict });
        }
    }
    create_dir(out_dir)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.check.clone(), r.verdict.pass.to_string(), num(r.verdict.slack), r.seed.to_string()])
        .collect();
    write_table(&out_dir.join("verdicts.csv"), &VERDICT_COLUMNS, &table)?;
    Ok(rows)
}

/// Running minimum of `‖∇φ‖²` from trace CSVs, averaged over the files,
/// fitted in log-log over `window`.
pub fn fit_rate_from_traces(paths: &[PathBuf], window: (f64, f64)) -> Result<RateFit> {
    if paths.is_empty() {
        bail!("no trace files given");
    }
    let mut series = Vec::new();
    for path in paths {
        let mut best = f64::INFINITY;
        let s: Vec<(f64, f64)> = read_grad_series(path)?
            .into_iter()
            .map(|(k, g)| {
                best = best.min(g);
                ((k + 1) as f64, best)
            })
            .collect();
        if s.is_empty() {
            bail!("{}: no gradient-norm values", path.display());
        }
        series.push(s);
    }
    Ok(fit_rate(&average_series(&series)?, window)?)
}

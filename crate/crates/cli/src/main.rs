//! `rsgda` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rsgda_cli::config::ExperimentConfig;
use rsgda_cli::experiments::{
    compare_esgda_rsgda, fit_rate_from_traces, grad_check, run_experiment, sweep_sinkhorn_msin, verify_descent,
    GRAD_CHECK_TOL,
};

#[derive(Debug, Parser)]
#[command(name = "rsgda", version, about = "Stochastic min-max experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the config's seed list by this single seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Output directory (default: $RSGDA_OUT_DIR, then the config's).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Rescale the schedule into the admissible step-size region.
    #[arg(long, global = true, value_enum)]
    strict_steps: Option<Switch>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One trace per (sweep point, seed) plus summary.csv.
    Run,
    /// ESGDA(m) against RSGDA(p = 1/(m+1)) at equal oracle budget.
    Compare {
        /// Loop sizes; defaults to sweep.m.
        #[arg(long, value_delimiter = ',')]
        m: Vec<usize>,
    },
    /// Sinkhorn learner for each m_sin, ranked by final transport cost.
    SweepMsin {
        /// Sinkhorn iterations per step; defaults to sweep.m_sin.
        #[arg(long, value_delimiter = ',')]
        m_sin: Vec<usize>,
    },
    /// Finite-difference check of every analytic gradient.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        probes: usize,
    },
    /// Monte-Carlo check of the one-step descent inequality.
    VerifyDescent {
        #[arg(long, default_value_t = 20)]
        states: usize,
        #[arg(long, default_value_t = 10_000)]
        mc_samples: usize,
    },
    /// Log-log slope of the running-minimum gradient norm in trace CSVs.
    FitRate {
        traces: Vec<PathBuf>,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        window: Vec<f64>,
    },
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("--config is required for this command")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed_override {
        cfg.experiment.seeds = vec![seed];
    }
    if let Some(s) = cli.strict_steps {
        cfg.schedule.strict = matches!(s, Switch::On);
    }
    Ok(cfg)
}

/// `Ok(true)` when every run and check succeeded.
fn execute(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Run => {
            let cfg = load(cli)?;
            let out = cfg.output_dir(cli.out.as_deref());
            let report = run_experiment(&cfg, &out, cli.threads)?;
            let diverged = report.outcomes.iter().filter(|o| matches!(&o.result, Ok(s) if s.diverged)).count();
            let errors = report.outcomes.iter().filter(|o| o.result.is_err()).count();
            println!(
                "{} runs ({diverged} diverged, {errors} errored) -> {}",
                report.outcomes.len(),
                out.join("summary.csv").display()
            );
            Ok(!report.errored())
        }
        Command::Compare { m } => {
            let cfg = load(cli)?;
            let m_list = if m.is_empty() { cfg.sweep.m.clone().context("give --m or sweep.m")? } else { m.clone() };
            let out = cfg.output_dir(cli.out.as_deref());
            for r in compare_esgda_rsgda(&cfg, &m_list, &out, cli.threads)? {
                println!(
                    "m={:<3} esgda={:.6e} rsgda={:.6e} gap={:.2}% divergence={:.3e}",
                    r.m,
                    r.mean_final_phi_esgda,
                    r.mean_final_phi_rsgda,
                    100.0 * r.relative_gap,
                    r.mean_trace_divergence
                );
            }
            Ok(true)
        }
        Command::SweepMsin { m_sin } => {
            let cfg = load(cli)?;
            let list =
                if m_sin.is_empty() { cfg.sweep.m_sin.clone().context("give --m-sin or sweep.m_sin")? } else { m_sin.clone() };
            let out = cfg.output_dir(cli.out.as_deref());
            let mut rows = sweep_sinkhorn_msin(&cfg, &list, &out, cli.threads)?;
            rows.sort_by_key(|r| r.rank);
            for r in rows {
                println!("#{} m_sin={:<3} mean final W_eps={:.8e}", r.rank, r.m_sin, r.mean_final_loss);
            }
            Ok(true)
        }
        Command::GradCheck { probes } => {
            let cfg = load(cli)?;
            let out = cfg.output_dir(cli.out.as_deref());
            let rows = grad_check(&cfg, *probes, &out)?;
            let worst = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
            let failed = rows.iter().filter(|r| !(r.relative_error <= GRAD_CHECK_TOL)).count();
            println!("{} checks, worst relative error {worst:.3e}, {failed} above {GRAD_CHECK_TOL:e}", rows.len());
            Ok(failed == 0)
        }
        Command::VerifyDescent { states, mc_samples } => {
            let cfg = load(cli)?;
            let out = cfg.output_dir(cli.out.as_deref());
            let rows = verify_descent(&cfg, *states, *mc_samples, &out)?;
            let passed = rows.iter().filter(|r| r.verdict.pass).count();
            println!("{passed}/{} states satisfy the descent inequality", rows.len());
            Ok(passed == rows.len())
        }
        Command::FitRate { traces, window } => {
            if traces.is_empty() {
                bail!("give at least one trace CSV");
            }
            let window = match window.as_slice() {
                [lo, hi] => (*lo, *hi),
                _ => (1.0, f64::INFINITY),
            };
            let fit = fit_rate_from_traces(traces, window)?;
            println!("slope={:.6} intercept={:.6} r2={:.6} points={}", fit.slope, fit.intercept, fit.r_squared, fit.points);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

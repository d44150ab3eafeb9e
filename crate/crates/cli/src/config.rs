//! Experiment configuration files.
//!
//! One TOML file describes one experiment:
//!
//! ```toml
//! [experiment]
//! name = "quadratic-rsgda"
//! seeds = [0, 1, 2]
//!
//! [problem]
//! kind = "quadratic"
//! kappa = 5.0
//!
//! [solver]
//! algorithm = "rsgda"
//! max_iters = 10000
//!
//! [schedule]
//! regime = "rgda-constant"
//! p = 0.5
//!
//! [sweep]
//! p = [0.2, 0.5]
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rsgda::problems::{DroConfig, InterpConfig, InterpolatingFiniteSum, QuadraticConfig, QuadraticSaddle, ToyDro};
use rsgda::schedules::{Regime, StepSchedule};
use rsgda::semidual::{OtConfig, SemiDualProblem};
use rsgda::solvers::{Algorithm, SolverConfig};
use rsgda::ProblemOracle;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub problem: ProblemSpec,
    pub solver: SolverSpec,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_name")]
    pub name: String,
    pub seeds: Vec<u64>,
    /// Output directory; the command line and `RSGDA_OUT_DIR` take precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemSpec {
    Quadratic(QuadraticConfig),
    Interp(InterpConfig),
    Dro(DroConfig),
    Ot(OtConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Rsgda,
    Esgda,
    Sgda,
    Sgdmax,
    Rgda,
    /// Learning with a warm-started Sinkhorn subroutine in place of the
    /// ascent step (semi-dual OT only).
    Sinkhorn,
}

impl SolverKind {
    pub fn algorithm(self) -> Option<Algorithm> {
        match self {
            SolverKind::Rsgda => Some(Algorithm::Rsgda),
            SolverKind::Esgda => Some(Algorithm::Esgda),
            SolverKind::Sgda => Some(Algorithm::Sgda),
            SolverKind::Sgdmax => Some(Algorithm::Sgdmax),
            SolverKind::Rgda => Some(Algorithm::Rgda),
            SolverKind::Sinkhorn => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self.algorithm() {
            Some(a) => a.as_str(),
            None => "sinkhorn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub algorithm: SolverKind,
    pub max_iters: usize,
    pub batch_size: usize,
    pub loop_size_m: usize,
    pub max_oracle_delta: f64,
    pub fast_mode: bool,
    pub record_every: usize,
    pub checkpoint_every: usize,
    pub diagnostics: bool,
    /// Sinkhorn iterations per learning step.
    pub m_sin: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            algorithm: SolverKind::Rsgda,
            max_iters: 1000,
            batch_size: 1,
            loop_size_m: 1,
            max_oracle_delta: 1e-6,
            fast_mode: true,
            record_every: 1,
            checkpoint_every: 0,
            diagnostics: true,
            m_sin: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct ScheduleSpec {
    pub p: f64,
    pub strict: bool,
    #[serde(flatten)]
    pub regime: Regime,
}

impl TryFrom<toml::Table> for ScheduleSpec {
    type Error = String;

    fn try_from(mut table: toml::Table) -> std::result::Result<Self, String> {
        let p = match table.remove("p") {
            Some(v) => v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).ok_or("`p` must be a number")?,
            None => return Err("missing field `p`".into()),
        };
        let strict = match table.remove("strict") {
            Some(v) => v.as_bool().ok_or("`strict` must be a boolean")?,
            None => false,
        };
        let regime = Regime::deserialize(toml::Value::Table(table)).map_err(|e| e.to_string())?;
        Ok(Self { p, strict, regime })
    }
}

/// Sweep axes. Every given axis must be non-empty; the sweep points are
/// the Cartesian product of the given axes in the order p, alpha, eta, m,
/// m_sin.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_sin: Option<Vec<usize>>,
}

/// Values one sweep point fixes; `None` keeps the base configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepPoint {
    pub p: Option<f64>,
    pub alpha: Option<f64>,
    pub eta: Option<f64>,
    pub m: Option<usize>,
    pub m_sin: Option<usize>,
}

impl SweepPoint {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(p) = self.p {
            parts.push(format!("p={p}"));
        }
        if let Some(a) = self.alpha {
            parts.push(format!("alpha={a}"));
        }
        if let Some(e) = self.eta {
            parts.push(format!("eta={e}"));
        }
        if let Some(m) = self.m {
            parts.push(format!("m={m}"));
        }
        if let Some(m) = self.m_sin {
            parts.push(format!("m_sin={m}"));
        }
        parts.join(";")
    }
}

impl SweepSpec {
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut points = vec![SweepPoint::default()];
        fn expand<T: Copy>(points: Vec<SweepPoint>, axis: &Option<Vec<T>>, set: impl Fn(&mut SweepPoint, T)) -> Vec<SweepPoint> {
            match axis {
                None => points,
                Some(values) => points
                    .into_iter()
                    .flat_map(|pt| {
                        values.iter().map(|&x| {
                            let mut q = pt;
                            set(&mut q, x);
                            q
                        }).collect::<Vec<_>>()
                    })
                    .collect(),
            }
        }
        points = expand(points, &self.p, |q, x| q.p = Some(x));
        points = expand(points, &self.alpha, |q, x| q.alpha = Some(x));
        points = expand(points, &self.eta, |q, x| q.eta = Some(x));
        points = expand(points, &self.m, |q, x| q.m = Some(x));
        expand(points, &self.m_sin, |q, x| q.m_sin = Some(x))
    }
}

/// A constructed problem.
pub enum BuiltProblem {
    Quadratic(QuadraticSaddle),
    Interp(InterpolatingFiniteSum),
    Dro(ToyDro),
    Ot(SemiDualProblem),
}

impl BuiltProblem {
    pub fn oracle(&self) -> &dyn ProblemOracle {
        match self {
            BuiltProblem::Quadratic(p) => p,
            BuiltProblem::Interp(p) => p,
            BuiltProblem::Dro(p) => p,
            BuiltProblem::Ot(p) => p,
        }
    }
}

impl ProblemSpec {
    pub fn build(&self) -> Result<BuiltProblem> {
        Ok(match self {
            ProblemSpec::Quadratic(c) => BuiltProblem::Quadratic(QuadraticSaddle::generate(c)?),
            ProblemSpec::Interp(c) => BuiltProblem::Interp(InterpolatingFiniteSum::generate(c)?),
            ProblemSpec::Dro(c) => BuiltProblem::Dro(ToyDro::from_config(c)?),
            ProblemSpec::Ot(c) => BuiltProblem::Ot(SemiDualProblem::from_config(c)?),
        })
    }

    fn dataset_paths(&self) -> Vec<(&'static str, &str)> {
        match self {
            ProblemSpec::Dro(c) => c.data_path.iter().map(|p| ("problem.data_path", p.as_str())).collect(),
            ProblemSpec::Ot(c) => c
                .source_path
                .iter()
                .map(|p| ("problem.source_path", p.as_str()))
                .chain(c.target_path.iter().map(|p| ("problem.target_path", p.as_str())))
                .collect(),
            _ => Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("cannot parse experiment config")?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Checks everything that can be checked without running: seeds,
    /// sweep axes, dataset paths, and every sweep point's schedule and
    /// solver against the problem's capabilities.
    pub fn validate(&self) -> Result<()> {
        if self.experiment.seeds.is_empty() {
            bail!("experiment.seeds: the seed list is empty");
        }
        let sweep = &self.sweep;
        let axes = [
            ("sweep.p", sweep.p.as_ref().map(Vec::len)),
            ("sweep.alpha", sweep.alpha.as_ref().map(Vec::len)),
            ("sweep.eta", sweep.eta.as_ref().map(Vec::len)),
            ("sweep.m", sweep.m.as_ref().map(Vec::len)),
            ("sweep.m_sin", sweep.m_sin.as_ref().map(Vec::len)),
        ];
        for (name, len) in axes {
            if len == Some(0) {
                bail!("{name}: the sweep grid is empty");
            }
        }
        for (field, path) in self.problem.dataset_paths() {
            if !Path::new(path).exists() {
                bail!("{field}: dataset `{path}` does not exist");
            }
        }
        let solver = &self.solver;
        if solver.max_iters == 0 {
            bail!("solver.max_iters: must be at least 1");
        }
        if solver.algorithm == SolverKind::Sinkhorn && !matches!(self.problem, ProblemSpec::Ot(_)) {
            bail!("solver.algorithm: `sinkhorn` needs problem kind `ot`");
        }
        if sweep.m_sin.is_some() && solver.algorithm != SolverKind::Sinkhorn {
            bail!("sweep.m_sin: only meaningful with solver.algorithm = \"sinkhorn\"");
        }
        let built = self.problem.build().context("problem")?;
        for point in sweep.points() {
            self.solver_config(&built, point, self.experiment.seeds[0])
                .with_context(|| format!("sweep point [{}]", point.label()))?;
        }
        Ok(())
    }

    /// The schedule at a sweep point.
    pub fn schedule_at(&self, problem: &dyn ProblemOracle, point: SweepPoint) -> Result<StepSchedule> {
        let p = point.p.unwrap_or(self.schedule.p);
        let mut regime = self.schedule.regime;
        if point.alpha.is_some() || point.eta.is_some() {
            match &mut regime {
                Regime::Custom { alpha0, eta0, .. } => {
                    if let Some(a) = point.alpha {
                        *alpha0 = a;
                    }
                    if let Some(e) = point.eta {
                        *eta0 = e;
                    }
                }
                _ => bail!("sweep.alpha/sweep.eta: need schedule.regime = \"custom\""),
            }
        }
        StepSchedule::new(*problem.smoothness(), p, regime, self.schedule.strict).context("schedule")
    }

    /// The solver configuration at a sweep point and seed. Fails for the
    /// Sinkhorn learner, which is not a [`SolverConfig`] run, only when the
    /// schedule itself is invalid.
    pub fn solver_config(&self, problem: &BuiltProblem, point: SweepPoint, seed: u64) -> Result<Option<SolverConfig>> {
        let oracle = problem.oracle();
        let schedule = self.schedule_at(oracle, point)?;
        let s = &self.solver;
        let Some(algorithm) = s.algorithm.algorithm() else {
            if point.m_sin == Some(0) {
                bail!("sweep.m_sin: must be at least 1");
            }
            return Ok(None);
        };
        let mut cfg = SolverConfig::new(algorithm, schedule, s.max_iters, seed);
        cfg.batch_size = s.batch_size;
        cfg.loop_size_m = point.m.unwrap_or(s.loop_size_m);
        cfg.max_oracle_delta = s.max_oracle_delta;
        cfg.fast_mode = s.fast_mode;
        cfg.record_every = s.record_every;
        cfg.checkpoint_every = s.checkpoint_every;
        cfg.diagnostics = s.diagnostics;
        cfg.validate(oracle).context("solver")?;
        Ok(Some(cfg))
    }

    /// Output directory: explicit override, then `RSGDA_OUT_DIR`, then the
    /// config's own, then `out/<name>`.
    pub fn output_dir(&self, explicit: Option<&Path>) -> PathBuf {
        if let Some(p) = explicit {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(crate::OUT_DIR_ENV) {
            return PathBuf::from(p);
        }
        match &self.experiment.output_dir {
            Some(p) => PathBuf::from(p),
            None => Path::new("out").join(&self.experiment.name),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[experiment]
name = "t"
seeds = [1, 2, 3]

[problem]
kind = "quadratic"
kappa = 5.0
noise_theta_sd = 0.3

[solver]
algorithm = "rsgda"
max_iters = 50

[schedule]
regime = "custom"
p = 0.5
alpha0 = 0.01
eta0 = 0.1

[sweep]
p = [0.2, 0.5]
"#;

    #[test]
    fn parses_and_validates() {
        let cfg = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(cfg.experiment.seeds, vec![1, 2, 3]);
        assert!(matches!(&cfg.problem, ProblemSpec::Quadratic(q) if q.kappa == 5.0 && q.noise_theta_sd == 0.3));
        assert!(matches!(cfg.schedule.regime, Regime::Custom { alpha0, .. } if alpha0 == 0.01));
        assert_eq!(cfg.sweep.points().len(), 2);
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        let text = cfg.to_toml().unwrap();
        let again = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.to_toml().unwrap(), text);
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let cfg = ExperimentConfig::from_toml(&EXAMPLE.replace("seeds = [1, 2, 3]", "seeds = []")).unwrap();
        let err = format!("{:#}", cfg.validate().unwrap_err());
        assert!(err.contains("experiment.seeds"), "{err}");
    }

    #[test]
    fn parse_errors_name_the_field() {
        let err = format!("{:#}", ExperimentConfig::from_toml(&EXAMPLE.replace("max_iters = 50", "max_iters = \"x\"")).unwrap_err());
        assert!(err.contains("max_iters") && err.contains("line"), "{err}");
        let err = format!("{:#}", ExperimentConfig::from_toml(&EXAMPLE.replace("kappa = 5.0", "kapa = 5.0")).unwrap_err());
        assert!(err.contains("kapa"), "{err}");
        let err = format!("{:#}", ExperimentConfig::from_toml(&EXAMPLE.replace("eta0 = 0.1", "eta0 = 0.1\netaa = 1.0")).unwrap_err());
        assert!(err.contains("etaa"), "{err}");
    }

    #[test]
    fn sweep_grid_is_a_product() {
        let sweep = SweepSpec { p: Some(vec![0.1, 0.2]), m: Some(vec![1, 4, 9]), ..Default::default() };
        let pts = sweep.points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1], SweepPoint { p: Some(0.1), m: Some(4), ..Default::default() });
        let empty = SweepSpec { m: Some(vec![]), ..Default::default() };
        let cfg = ExperimentConfig { sweep: empty, ..ExperimentConfig::from_toml(EXAMPLE).unwrap() };
        assert!(format!("{:#}", cfg.validate().unwrap_err()).contains("sweep.m"));
    }

    #[test]
    fn capability_gate_applies() {
        let text = EXAMPLE.replace("kind = \"quadratic\"\nkappa = 5.0\nnoise_theta_sd = 0.3", "kind = \"dro\"")
            .replace("algorithm = \"rsgda\"", "algorithm = \"sgdmax\"");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert!(cfg.validate().is_err());
    }
}

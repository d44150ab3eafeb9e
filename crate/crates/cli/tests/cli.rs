use std::path::{Path, PathBuf};
use std::process::Command;

use rsgda_cli::config::ExperimentConfig;
use rsgda_cli::experiments::{compare_esgda_rsgda, run_experiment, sweep_sinkhorn_msin};
use rsgda_cli::output::{SUMMARY_COLUMNS, TRACE_COLUMNS};

const QUADRATIC: &str = r#"
[experiment]
name = "cli-test"
seeds = [3, 4, 5]

[problem]
kind = "quadratic"
noise_theta_sd = 0.3
noise_v_sd = 0.3

[solver]
algorithm = "rsgda"
max_iters = 200
record_every = 7

[schedule]
regime = "custom"
p = 0.5
alpha0 = 0.01
eta0 = 0.2

[sweep]
p = [0.2, 0.5]
"#;

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    names
}

/// File contents with the last (wall-time) column removed from every line.
fn without_wall_time(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn two_points_three_seeds_give_six_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(QUADRATIC).unwrap();
    let report = run_experiment(&cfg, dir.path(), Some(2)).unwrap();
    assert!(!report.errored());
    let names = files(dir.path());
    assert_eq!(names.iter().filter(|n| n.starts_with("trace_")).count(), 6);
    assert_eq!(names.iter().filter(|n| n.as_str() == "summary.csv").count(), 1);
    assert_eq!(names.len(), 7);
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), SUMMARY_COLUMNS.join(","));
    // Sorted by sweep point, then seed.
    let keys: Vec<String> = summary.lines().skip(1).map(|l| l.split(',').take(3).collect::<Vec<_>>().join(",")).collect();
    assert_eq!(keys, ["0,p=0.2,3", "0,p=0.2,4", "0,p=0.2,5", "1,p=0.5,3", "1,p=0.5,4", "1,p=0.5,5"]);
}

#[test]
fn rerun_is_byte_identical_outside_wall_time() {
    let cfg = ExperimentConfig::from_toml(QUADRATIC).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, a.path(), Some(1)).unwrap();
    run_experiment(&cfg, b.path(), Some(4)).unwrap();
    for name in files(a.path()).iter().filter(|n| n.starts_with("trace_")) {
        assert_eq!(without_wall_time(&a.path().join(name)), without_wall_time(&b.path().join(name)), "{name}");
    }
}

#[test]
fn trace_matches_golden_file() {
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/rgda_trace.csv");
    let cfg = ExperimentConfig::from_toml(
        r#"
[experiment]
seeds = [0]

[problem]
kind = "quadratic"

[solver]
algorithm = "rgda"
max_iters = 5

[schedule]
regime = "rgda-constant"
p = 0.5
strict = true
"#,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, dir.path(), Some(1)).unwrap();
    let produced = dir.path().join("trace_0_seed0.csv");
    let header = std::fs::read_to_string(&produced).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, TRACE_COLUMNS.join(","));
    if std::env::var_os("RSGDA_BLESS").is_some() {
        std::fs::copy(&produced, &golden).unwrap();
    }
    assert_eq!(without_wall_time(&produced), without_wall_time(&golden));
}

#[test]
fn compare_rejects_zero_loop_size() {
    let cfg = ExperimentConfig::from_toml(QUADRATIC).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = compare_esgda_rsgda(&cfg, &[1, 0], dir.path(), Some(1)).unwrap_err();
    assert!(format!("{err:#}").contains("at least 1"));
}

#[test]
fn single_msin_gives_single_curve() {
    let cfg = ExperimentConfig::from_toml(
        r#"
[experiment]
seeds = [0]

[problem]
kind = "ot"
source_points = 32
target_points = 8

[solver]
algorithm = "sinkhorn"
max_iters = 5
batch_size = 8

[schedule]
regime = "custom"
p = 0.5
alpha0 = 0.01
eta0 = 1.0
"#,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep_sinkhorn_msin(&cfg, &[1], dir.path(), Some(1)).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].rank, 1);
    assert_eq!(files(dir.path()), ["msin_summary.csv", "trace_msin1_seed0.csv"]);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rsgda"))
}

#[test]
fn exit_codes_and_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    std::fs::write(&config, QUADRATIC).unwrap();
    let out = dir.path().join("from-env");
    let status = bin()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--seed-override", "9", "--threads", "2", "--strict-steps", "off"])
        .env("RSGDA_OUT_DIR", &out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(files(&out), ["summary.csv", "trace_0_seed9.csv", "trace_1_seed9.csv"]);

    std::fs::write(&config, QUADRATIC.replace("seeds = [3, 4, 5]", "seeds = []")).unwrap();
    let output = bin().args(["run", "--config"]).arg(&config).arg("--out").arg(dir.path().join("x")).output().unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("experiment.seeds"));
}

#[test]
fn divergence_is_recorded_not_an_error() {
    let text = QUADRATIC.replace("alpha0 = 0.01", "alpha0 = 1000.0").replace("[sweep]\np = [0.2, 0.5]", "");
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    std::fs::write(&config, text).unwrap();
    let out = dir.path().join("out");
    let status = bin().args(["run", "--config"]).arg(&config).arg("--out").arg(&out).status().unwrap();
    assert!(status.success());
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().skip(1).all(|l| l.contains(",diverged,")), "{summary}");
}

//! End-to-end checks of the `kinoplan` binary: every subcommand, the CSV
//! shapes, and the exit-code contract (0 success, 1 validation, 2 I/O or
//! parse or usage error).

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use kinoplan::bench::{builtin_scenario, save_scenario, Scenario, TrialSpec};
use kinoplan::Mode;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kinoplan"))
}

fn work_dir(test: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("kinoplan-cli-tests").join(test);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// The shipped fixture cut down far enough for sub-second trials.
fn tiny_scenario() -> Scenario {
    let mut scenario = builtin_scenario("double_integrator").unwrap();
    scenario.planner.iterations = 120;
    scenario.trials = TrialSpec {
        modes: vec![Mode::Kino, Mode::Baseline],
        seeds: vec![1, 2],
    };
    scenario
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

#[test]
fn scenario_init_round_trips_through_load() {
    let dir = work_dir("init");
    for name in ["double_integrator", "quadrotor"] {
        let path = dir.join(format!("{name}.json"));
        let out = bin()
            .args(["scenario", "init", name, "--out"])
            .arg(&path)
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
        let loaded = kinoplan::bench::load_scenario(&path).unwrap();
        assert_eq!(loaded, builtin_scenario(name).unwrap());
    }
}

#[test]
fn plan_writes_csv_to_file_and_stdout() {
    let dir = work_dir("plan");
    let path = dir.join("tiny.json");
    save_scenario(&path, &tiny_scenario()).unwrap();

    let csv = dir.join("run.csv");
    let out = bin()
        .arg("plan")
        .arg(&path)
        .args(["--mode", "kino", "--seed", "1", "--out"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("mode=kino seed=1"));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("mode,seed,iteration,nodes,elapsed_s,best_cost")
    );
    let first = lines.next().expect("at least one record");
    assert!(first.starts_with("kino,1,"), "row: {first}");
    assert_eq!(first.split(',').count(), 6);

    // without --out the stream lands on stdout instead
    let out = bin()
        .arg("plan")
        .arg(&path)
        .args(["--mode", "baseline", "--seed", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = stdout_of(&out);
    assert!(text.starts_with("mode,seed,iteration,nodes,elapsed_s,best_cost\n"));
    assert!(text.lines().nth(1).unwrap().starts_with("baseline,2,"));
}

#[test]
fn compare_emits_the_quartile_table() {
    let dir = work_dir("compare");
    let path = dir.join("tiny.json");
    save_scenario(&path, &tiny_scenario()).unwrap();

    let csv = dir.join("cmp.csv");
    let out = bin()
        .arg("compare")
        .arg(&path)
        .args(["--modes", "kino,baseline", "--seeds", "1..2", "--out"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("axis,mode,grid_value,samples,q1,median,q3")
    );
    let body: Vec<&str> = lines.collect();
    assert!(!body.is_empty());
    assert!(body.iter().any(|l| l.starts_with("nodes,kino,")));
    assert!(body.iter().any(|l| l.starts_with("elapsed_s,baseline,")));

    // one summary line per trial on stderr
    assert_eq!(
        stderr_of(&out).lines().filter(|l| l.contains("seed=")).count(),
        4
    );
}

#[test]
fn compare_defaults_to_the_scenario_trial_list() {
    let dir = work_dir("compare-defaults");
    let path = dir.join("tiny.json");
    let mut scenario = tiny_scenario();
    scenario.trials.modes = vec![Mode::Kino];
    scenario.trials.seeds = vec![3];
    save_scenario(&path, &scenario).unwrap();

    let csv = dir.join("cmp.csv");
    let out = bin().arg("compare").arg(&path).arg("--out").arg(&csv).output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert_eq!(stderr_of(&out).lines().filter(|l| l.contains("seed=3")).count(), 1);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.lines().skip(1).all(|l| l.is_empty() || l.split(',').nth(1) == Some("kino")));
}

#[test]
fn validate_reports_every_check_and_exits_zero() {
    let out = bin().args(["validate", "double_integrator"]).output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("[pass] gramian_vs_quadrature"));
    assert!(text.contains("[pass] transversality"));
    assert!(!text.contains("[FAIL]"));
}

#[test]
fn broken_scenario_json_exits_two() {
    let dir = work_dir("broken");
    let path = dir.join("broken.json");
    fs::write(&path, "{ this is not json").unwrap();
    let out = bin()
        .arg("plan")
        .arg(&path)
        .args(["--mode", "kino", "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("broken.json"));
}

#[test]
fn missing_scenario_file_exits_two() {
    let out = bin()
        .args(["plan", "/nonexistent/path.json", "--mode", "kino", "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_builtin_exits_one() {
    let dir = work_dir("unknown-builtin");
    let out = bin()
        .args(["scenario", "init", "pendulum", "--out"])
        .arg(dir.join("x.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("pendulum"));

    let out = bin().args(["validate", "pendulum"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_mode_is_a_usage_error() {
    let dir = work_dir("unknown-mode");
    let path = dir.join("tiny.json");
    save_scenario(&path, &tiny_scenario()).unwrap();
    let out = bin()
        .arg("plan")
        .arg(&path)
        .args(["--mode", "warp", "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_scenario_contents_exit_one() {
    let dir = work_dir("invalid");
    let path = dir.join("bad-start.json");
    let mut scenario = tiny_scenario();
    scenario.start = vec![1.0, 1.0];
    save_scenario(&path, &scenario).unwrap();
    let out = bin()
        .arg("plan")
        .arg(&path)
        .args(["--mode", "kino", "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("start"));
}

use std::path::Path;

use bandit_harness::charts::load_trace_dir;
use bandit_harness::trace::read_trace;
use bandit_harness::{run_experiment, HarnessError, RunConfig, RunOptions, Summary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn config(body: &str) -> RunConfig {
    RunConfig::from_toml(body).unwrap()
}

fn run_in(cfg: &RunConfig, dir: &Path) -> Summary {
    let opts = RunOptions { out: Some(dir.to_path_buf()), ..Default::default() };
    run_experiment(cfg, &opts).unwrap().summary
}

const QUADRATIC_BASELINES: &str = r#"
name = "baselines"
horizon = 1000
replications = 20
seed = 11
[environment]
kind = "quadratic"
[[policies]]
kind = "uniform"
[[policies]]
kind = "oracle"
"#;

#[test]
fn oracle_has_zero_regret_and_uniform_matches_monte_carlo() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_in(&config(QUADRATIC_BASELINES), dir.path());

    let oracle = summary.policy("oracle").unwrap();
    assert!(oracle.final_regret.iter().all(|r| *r == 0.0));
    assert_eq!(oracle.optimal_assignment_rate, 1.0);

    // per-step uniform regret is E[max_a mu_a(x)] - mean_a mu_a(x), with x ~ N(0, I_2)
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 400_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let x0: f64 = StandardNormal.sample(&mut rng);
        let x1: f64 = StandardNormal.sample(&mut rng);
        let bowl = 0.5 * (x0 + 1.0).powi(2) + 0.5 * (x1 + 1.0).powi(2);
        let mu = [bowl, 1.0, 2.0 - bowl];
        let max = mu.iter().cloned().fold(f64::MIN, f64::max);
        acc += max - 1.0;
    }
    let expected = 1000.0 * acc / n as f64;
    let uniform = summary.policy("uniform").unwrap();
    let rel = (uniform.mean_final_regret - expected).abs() / expected;
    assert!(rel < 0.15, "uniform {} vs MC {expected}", uniform.mean_final_regret);
}

#[test]
fn zero_horizon_gives_empty_traces() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(QUADRATIC_BASELINES);
    cfg.horizon = 0;
    cfg.replications = 2;
    let summary = run_in(&cfg, dir.path());
    for p in &summary.policies {
        assert!(p.steps.iter().all(|s| *s == 0));
        assert!(p.mean_curve.is_empty());
        assert!(p.final_regret.iter().all(|r| *r == 0.0));
    }
    let rows = read_trace(&dir.path().join("trace_uniform_11.csv")).unwrap();
    assert!(rows.is_empty());
}

#[test]
fn trace_accounting_identities_hold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        r#"
name = "accounting"
horizon = 300
replications = 2
seed = 5
[environment]
kind = "quadratic"
[[policies]]
kind = "lints"
alpha = [1.0]
[[policies]]
kind = "uniform"
"#,
    );
    let summary = run_in(&cfg, dir.path());
    for p in &summary.policies {
        for (seed, final_regret) in p.seeds.iter().zip(&p.final_regret) {
            let rows = read_trace(&dir.path().join(format!("trace_{}_{seed}.csv", p.name))).unwrap();
            assert_eq!(rows.len(), 300);
            let mut cum = 0.0;
            for (i, r) in rows.iter().enumerate() {
                assert_eq!(r.t, i);
                assert!(r.regret >= 0.0);
                cum += r.regret;
                assert!((r.cumulative_regret - cum).abs() < 1e-9);
            }
            assert!((final_regret - cum).abs() < 1e-9);
        }
    }
}

#[test]
fn chart_mean_matches_independent_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        r#"
name = "charts"
horizon = 200
replications = 3
seed = 40
[environment]
kind = "quadratic"
[[policies]]
kind = "uniform"
"#,
    );
    let summary = run_in(&cfg, dir.path());
    let mut sums = vec![0.0; 200];
    for seed in 40..43 {
        let text = std::fs::read_to_string(dir.path().join(format!("trace_uniform_{seed}.csv"))).unwrap();
        for (i, line) in text.lines().skip(1).enumerate() {
            let last = line.rsplit(',').next().unwrap();
            sums[i] += last.parse::<f64>().unwrap() / 3.0;
        }
    }
    let p = summary.policy("uniform").unwrap();
    for (a, b) in p.mean_curve.iter().zip(&sums) {
        assert!((a - b).abs() < 1e-9);
    }
    let csv = std::fs::read_to_string(dir.path().join("regret.csv")).unwrap();
    let row = csv.lines().nth(200).unwrap();
    let mean: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((mean - sums[199]).abs() < 1e-6);
    let svg = std::fs::read_to_string(dir.path().join("regret.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert_eq!(load_trace_dir(dir.path()).unwrap()["uniform"].len(), 3);
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = config(
        r#"
name = "determinism"
horizon = 150
replications = 2
seed = 3
[environment]
kind = "quadratic"
[[policies]]
kind = "blts"
alpha = [1.0]
gamma = [0.1]
[[policies]]
kind = "bootstrap_lasso"
alpha = [1.0]
b_boot = 10
"#,
    );
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_in(&cfg, a.path());
    run_in(&cfg, b.path());
    for name in ["trace_blts_3.csv", "trace_blts_4.csv", "trace_bootstrap_lasso_4.csv", "summary.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn config_errors_surface_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        r#"
name = "bad"
horizon = 100
[environment]
kind = "quadratic"
[[policies]]
kind = "lints"
gamma = [0.1]
"#,
    );
    let opts = RunOptions { out: Some(dir.path().join("out")), ..Default::default() };
    let err = run_experiment(&cfg, &opts).err().unwrap();
    assert!(matches!(err, HarnessError::Config(_)));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn summary_survives_a_json_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(QUADRATIC_BASELINES);
    cfg.replications = 2;
    cfg.horizon = 50;
    let summary = run_in(&cfg, dir.path());
    let back = Summary::read(&dir.path().join("summary.json")).unwrap();
    assert_eq!(back.name, summary.name);
    assert_eq!(back.policies.len(), 2);
    assert_eq!(back.policies[0].final_regret, summary.policies[0].final_regret);
}

//! End-to-end runs of the `alphamine` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_alphamine"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn small_synth(noise: f64) -> Value {
    json!({
        "data": {"synth": {"n": 20, "days": 200, "noise_sigma": noise}},
        "splits": {"train_days": 120, "valid_days": 40, "test_days": 40},
        "capacity": 5,
        "net": {"embed_dim": 16, "hidden": 32, "layers": 1, "head_hidden": 16, "dropout": 0.1},
        "ppo": {"rollout_episodes_per_update": 16, "minibatch_size": 64}
    })
}

fn sha(path: &Path) -> String {
    format!("{:x}", Sha256::digest(fs::read(path).unwrap()))
}

fn checksums(dir: &Path) -> Vec<(String, String)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), sha(&p)))
        .collect();
    v.sort();
    v
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_is_deterministic_and_writes_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_synth(1.0));
    let a = tmp.path().join("a");
    ok(&["--config", s(&cfg), "--seed", "3", "--out", s(&a), "synth"]);
    let ca = checksums(&a);
    ok(&["--config", s(&cfg), "--seed", "3", "--out", s(&a), "synth"]);
    assert_eq!(ca, checksums(&a));
    let names: Vec<&str> = ca.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["config.json", "manifest.json", "panel.csv"]);

    let manifest = read_json(&a.join("manifest.json"));
    assert_eq!(manifest["seed"], 3);
    let planted: Vec<(String, f64)> = manifest["planted"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| {
            (
                p["expression"].as_str().unwrap().to_string(),
                p["weight"].as_f64().unwrap(),
            )
        })
        .collect();
    assert_eq!(
        planted,
        [
            ("Div(Mean($close,10),$close)".to_string(), 0.6),
            ("Div($volume,Mean($volume,20))".to_string(), 0.4)
        ]
    );

    let c = tmp.path().join("c");
    ok(&["--config", s(&cfg), "--seed", "4", "--out", s(&c), "synth"]);
    assert_ne!(sha(&a.join("panel.csv")), sha(&c.join("panel.csv")));
}

#[test]
fn planted_expressions_are_written_in_canonical_form() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_synth(0.5);
    cfg["data"]["synth"]["planted"] = json!([{"expression": "Mean( $close , 5 )", "weight": 1.0}]);
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("o");
    ok(&["--config", s(&cfg), "--out", s(&out), "synth"]);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["planted"][0]["expression"], "Mean($close,5)");
}

#[test]
fn invalid_planted_expression_fails_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_synth(1.0);
    cfg["data"]["synth"]["planted"] = json!([{"expression": "Mean($close,", "weight": 1.0}]);
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("o");
    let r = run(&["--config", s(&cfg), "--out", s(&out), "synth"]);
    assert!(!r.status.success());
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("Mean($close,"), "{err}");
    assert!(!out.exists());
}

#[test]
fn mine_writes_every_artifact_and_resumes_monotonically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_synth(1.0));
    let first = tmp.path().join("first");
    ok(&[
        "--config",
        s(&cfg),
        "--seed",
        "1",
        "--out",
        s(&first),
        "mine",
        "--max-env-steps",
        "2000",
    ]);
    for f in [
        "pool.json",
        "agent.json",
        "train_log.jsonl",
        "episodes.jsonl",
        "objective.csv",
        "config.json",
    ] {
        assert!(first.join(f).is_file(), "missing {f}");
    }
    let copied = read_json(&first.join("config.json"));
    assert_eq!(copied["seed"], 1);
    assert_eq!(copied["ppo"]["max_env_steps"], 2000);
    let log = fs::read_to_string(first.join("train_log.jsonl")).unwrap();
    let steps: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["env_steps"].as_u64().unwrap())
        .collect();
    assert!(!steps.is_empty());
    assert!(*steps.last().unwrap() <= 2000);
    assert!(steps.windows(2).all(|w| w[0] < w[1]));

    let second = tmp.path().join("second");
    let resume = first.join("agent.json");
    let out = ok(&[
        "--config",
        s(&cfg),
        "--seed",
        "1",
        "--out",
        s(&second),
        "mine",
        "--max-env-steps",
        "4000",
        "--resume",
        s(&resume),
    ]);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    let resumed = fs::read_to_string(second.join("train_log.jsonl")).unwrap();
    let more: Vec<u64> = resumed
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["env_steps"].as_u64().unwrap())
        .collect();
    assert!(more[0] > *steps.last().unwrap());
    assert!(more.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(summary["env_steps"].as_u64().unwrap(), *more.last().unwrap());
    assert!(*more.last().unwrap() <= 4000);
}

#[test]
fn seed_changes_the_mined_pool() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_synth(1.0));
    let objectives = |seed: &str| {
        let out = tmp.path().join(format!("s{seed}"));
        ok(&[
            "--config",
            s(&cfg),
            "--seed",
            seed,
            "--out",
            s(&out),
            "mine",
            "--max-env-steps",
            "1500",
        ]);
        fs::read_to_string(out.join("objective.csv")).unwrap()
    };
    assert_ne!(objectives("1"), objectives("2"));
}

fn pool_file(dir: &Path, alphas: &[(&str, f64)]) -> PathBuf {
    let p = dir.join("handmade_pool.json");
    let alphas: Vec<Value> = alphas
        .iter()
        .map(|(e, w)| json!({"expression": e, "weight": w}))
        .collect();
    let doc = json!({"version": 1, "capacity": 10, "objective": 0.0, "alphas": alphas});
    fs::write(&p, serde_json::to_string(&doc).unwrap()).unwrap();
    p
}

#[test]
fn planted_alpha_alone_scores_ic_one_without_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_synth(0.0);
    cfg["data"]["synth"]["planted"] = json!([{"expression": "Div(Mean($close,10),$close)", "weight": 1.0}]);
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let pool = pool_file(tmp.path(), &[("Div(Mean($close,10),$close)", 1.0)]);
    let out = tmp.path().join("o");
    for split in ["train", "valid", "test"] {
        let r = ok(&[
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "eval",
            "--pool",
            s(&pool),
            "--split",
            split,
        ]);
        let rec: Value = serde_json::from_slice(&r.stdout).unwrap();
        assert!((rec["ic"].as_f64().unwrap() - 1.0).abs() <= 1e-9, "{rec}");
        assert!((rec["rank_ic"].as_f64().unwrap() - 1.0).abs() <= 1e-9, "{rec}");
        assert_eq!(read_json(&out.join(format!("eval_{split}.json"))), rec);
    }
}

#[test]
fn eval_metrics_stay_in_range() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_synth(1.0));
    let pool = pool_file(
        tmp.path(),
        &[
            ("Std($high,5)", 0.7),
            ("Sub($open,$vwap)", -2.0),
            ("Corr($close,$volume,10)", 0.3),
        ],
    );
    let out = tmp.path().join("o");
    for seed in ["1", "2", "3"] {
        let r = ok(&[
            "--config",
            s(&cfg),
            "--seed",
            seed,
            "--out",
            s(&out),
            "eval",
            "--pool",
            s(&pool),
        ]);
        let rec: Value = serde_json::from_slice(&r.stdout).unwrap();
        for key in ["ic", "rank_ic"] {
            let v = rec[key].as_f64().unwrap();
            assert!((-1.0..=1.0).contains(&v), "{key} = {v}");
        }
        assert_eq!(rec["split"], "test");
        assert_eq!(rec["days"], 40);
    }
}

#[test]
fn empty_or_unevaluable_pools_fail_without_leaving_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_synth(1.0));
    let out = tmp.path().join("o");
    let empty = pool_file(tmp.path(), &[]);
    let r = run(&["--config", s(&cfg), "--out", s(&out), "eval", "--pool", s(&empty)]);
    assert!(!r.status.success());
    assert!(!out.exists());

    let bad = pool_file(tmp.path(), &[("Log(Sub($close,$close))", 1.0), ("$close", 1.0)]);
    let r = run(&["--config", s(&cfg), "--out", s(&out), "backtest", "--pool", s(&bad)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("Log(Sub($close,$close))"));
    assert!(!out.exists());

    // an existing output folder keeps its contents and gains nothing
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let r = run(&["--config", s(&cfg), "--out", s(&out), "report", "--pool", s(&empty)]);
    assert!(!r.status.success());
    let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, ["keep.txt"]);
}

#[test]
fn backtest_defaults_and_row_count() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_synth(1.0);
    cfg["data"]["synth"]["n"] = json!(60);
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let pool = pool_file(tmp.path(), &[("Div(Mean($close,10),$close)", 1.0)]);
    let out = tmp.path().join("o");
    ok(&["--config", s(&cfg), "--out", s(&out), "backtest", "--pool", s(&pool)]);
    let copied = read_json(&out.join("config.json"));
    assert_eq!(copied["backtest"]["k"], 50);
    assert_eq!(copied["backtest"]["n"], 5);
    let csv = fs::read_to_string(out.join("backtest_test.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "date,net_worth,turnover");
    assert_eq!(lines.count(), 40);
    let trades = fs::read_to_string(out.join("backtest_test_trades.jsonl")).unwrap();
    for line in trades.lines() {
        let t: Value = serde_json::from_str(line).unwrap();
        assert!(t["buys"].as_array().unwrap().len() <= 5);
        assert!(t["sells"].as_array().unwrap().len() <= 5);
    }

    ok(&[
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "backtest",
        "--pool",
        s(&pool),
        "--k",
        "10",
        "--n",
        "2",
        "--split",
        "valid",
    ]);
    let copied = read_json(&out.join("config.json"));
    assert_eq!(copied["backtest"]["k"], 10);
    assert_eq!(copied["backtest"]["n"], 2);
    assert!(out.join("backtest_valid.csv").is_file());
}

#[test]
fn constant_prices_keep_the_initial_worth() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("date,symbol,open,close,high,low,volume,vwap\n");
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    for d in 0..120u64 {
        let date = start + chrono::Days::new(d);
        for stock in 0..60 {
            let p = 5.0 + stock as f64;
            csv.push_str(&format!("{date},S{stock},{p},{p},{p},{p},{},{p}\n", 1000 + 37 * stock));
        }
    }
    fs::write(tmp.path().join("flat.csv"), csv).unwrap();
    let cfg = json!({
        "data": {"path": "flat.csv"},
        "splits": {"train_days": 60, "valid_days": 20, "test_days": 40},
    });
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let pool = pool_file(tmp.path(), &[("$volume", 1.0)]);
    let out = tmp.path().join("o");
    let r = ok(&[
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "backtest",
        "--pool",
        s(&pool),
        "--cost-bps",
        "0",
    ]);
    let summary: Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(summary["final_worth"].as_f64().unwrap(), 1.0);
    let csv = fs::read_to_string(out.join("backtest_test.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let worth: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(worth, 1.0);
    }
}

#[test]
fn report_writes_plot_series() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_synth(1.0);
    cfg["backtest"] = json!({"k": 10, "n": 2});
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("o");
    ok(&["--config", s(&cfg), "--out", s(&out), "mine", "--max-env-steps", "1000"]);
    let r = ok(&["--config", s(&cfg), "--out", s(&out), "report"]);
    let evals: Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(evals.as_array().unwrap().len(), 3);
    let curve = fs::read_to_string(out.join("objective_curve.csv")).unwrap();
    let log = fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert_eq!(curve.lines().count(), log.lines().count() + 1);
    assert!(out.join("backtest_test.csv").is_file());
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["eval"], evals);
}

#[test]
fn vocab_lists_every_action() {
    let r = ok(&["vocab"]);
    let v: Value = serde_json::from_slice(&r.stdout).unwrap();
    let text = v.to_string();
    assert!(text.contains("Corr") && text.contains("vwap"));
}

use std::path::Path;
use std::process::{Command, Output};

use ipmfair::cli::{read_points_csv, replication_aucs};
use ipmfair::data::read_table;

fn ipmfair(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipmfair"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .to_string()
}

#[test]
fn synth_is_deterministic_and_logs_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(ipmfair(d, &["synth", "--out", "a.csv", "--count", "3000", "--seed", "7"]).status.success());
    assert!(ipmfair(d, &["synth", "--out", "b.csv", "--count", "3000", "--seed", "7"]).status.success());
    let a = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.csv")).unwrap());

    let rows = read_table(&d.join("a.csv")).unwrap();
    assert_eq!(rows.header.join(","), "x1,x2,x3,x4,x5,x6,x7,x8,x9,x10,y,a");
    let slopes = read_table(&d.join("a.slopes.csv")).unwrap();
    for (i, row) in rows.rows.iter().enumerate() {
        let regime = if i < 2000 { 0.0 } else { 1.0 };
        let y = slopes
            .rows
            .iter()
            .filter(|s| s[0] == regime)
            .map(|s| s[3..].iter().zip(&row[..10]).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(y.to_bits(), row[10].to_bits(), "row {i}");
        assert_eq!(row[9], row[11]);
    }

    assert!(ipmfair(d, &["synth", "--out", "empty.csv", "--count", "0"]).status.success());
    assert_eq!(std::fs::read_to_string(d.join("empty.csv")).unwrap().lines().count(), 1);
}

fn write_config(dir: &Path, name: &str, protected: &str) {
    let cfg = format!(
        r#"{{
  "data": "cls.csv",
  "target_column": "y",
  "protected_column": "{protected}",
  "output_dir": "out",
  "model": {{"architecture": {{"kind": "linear"}}, "output": "sigmoid"}},
  "training": {{"lambda": 0.5, "target_batch_size": 32, "epochs": 4, "loss": "cross_entropy",
               "optimizer": {{"learning_rate": 0.01}}, "seed": 3}}
}}"#
    );
    std::fs::write(dir.join(name), cfg).unwrap();
}

#[test]
fn train_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(ipmfair(d, &["synth", "--task", "classification", "--out", "cls.csv", "--count", "800", "--seed", "1"])
        .status
        .success());
    write_config(d, "run.json", "a");
    let first = ipmfair(d, &["train", "--config", "run.json"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = ipmfair(d, &["train", "--config", "run.json", "--out", "again"]);
    assert_eq!(stdout(&first), stdout(&second));
    assert_eq!(
        std::fs::read(d.join("out/checkpoint.txt")).unwrap(),
        std::fs::read(d.join("again/checkpoint.txt")).unwrap()
    );
    let history = read_table(&d.join("out/history.csv")).unwrap();
    assert_eq!(history.header, ["batch", "samples", "loss", "penalty", "objective"]);
    assert_eq!(history.rows.len(), 4 * 600usize.div_ceil(32));
    let acc: f64 = value(&stdout(&first), "test_performance").parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    write_config(d, "bad.json", "gender");
    let bad = ipmfair(d, &["train", "--config", "bad.json"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("'gender'"));

    std::fs::write(d.join("broken.json"), "{\n  \"data\": \"cls.csv\",\n  oops\n}").unwrap();
    let broken = ipmfair(d, &["train", "--config", "broken.json"]);
    assert_eq!(broken.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&broken.stderr).contains("line 3"));
}

#[test]
fn online_regression_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth = ipmfair(d, &["synth", "--out", "reg.csv", "--count", "1500", "--no-shift", "--test-out", "test.csv", "--seed", "2"]);
    assert!(synth.status.success());
    std::fs::write(
        d.join("reg.json"),
        r#"{"data": "reg.csv", "test_data": "test.csv", "target_column": "y", "protected_column": "a",
            "model": {"architecture": {"kind": "mlp", "hidden_width": 20}, "output": "identity"},
            "training": {"lambda": 0.0, "target_batch_size": 4, "sample_budget": 1500, "loss": "squared_error",
                         "kernel": {"kind": "distance_induced"},
                         "optimizer": {"learning_rate": 0.01, "decay": 1.0}, "seed": 4}}"#,
    )
    .unwrap();
    let out = ipmfair(d, &["train", "--config", "reg.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r2: f64 = value(&stdout(&out), "test_performance").parse().unwrap();
    assert!(r2 > 0.0, "R² {r2}");
    assert_eq!(value(&stdout(&out), "performance_metric"), "r_squared");
}

#[test]
fn sweep_points_reproduce_printed_auc() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(ipmfair(d, &["synth", "--task", "classification", "--out", "cls.csv", "--count", "800", "--seed", "1"])
        .status
        .success());
    write_config(d, "run.json", "a");
    let out = ipmfair(d, &["sweep", "--config", "run.json", "--lambda-grid", "log:1e-3:10:4", "--jobs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_points_csv(&d.join("out/points.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.windows(2).all(|w| w[0].1.lambda < w[1].1.lambda));
    let (_, trap, stair) = replication_aucs(&rows).unwrap()[0];
    let text = stdout(&out);
    assert_eq!(value(&text, "auc_trapezoid[0]"), ipmfair::text::fmt_f64(trap.unwrap()));
    assert_eq!(value(&text, "auc_staircase[0]"), ipmfair::text::fmt_f64(stair));

    let again = ipmfair(d, &["sweep", "--config", "run.json", "--lambda-grid", "log:1e-3:10:4", "--jobs", "1", "--out", "b"]);
    assert!(again.status.success());
    assert_eq!(std::fs::read(d.join("out/points.csv")).unwrap(), std::fs::read(d.join("b/points.csv")).unwrap());

    let single = ipmfair(d, &["sweep", "--config", "run.json", "--lambda-grid", "0.5", "--out", "one"]);
    assert!(single.status.success());
    let rows = read_points_csv(&d.join("one/points.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    let p = rows[0].1;
    assert_eq!(value(&stdout(&single), "auc_staircase[0]"), ipmfair::text::fmt_f64(p.performance * (1.0 - p.unfairness)));
}

#[test]
fn ipm_prints_metrics_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("a.csv"), "v\n0\n").unwrap();
    std::fs::write(d.join("b.csv"), "v\n1\n").unwrap();
    let out = stdout(&ipmfair(d, &["ipm", "a.csv", "b.csv"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines.contains(&"kolmogorov 1.0000000000000000e0"));
    assert!(lines.contains(&"wasserstein1 1.0000000000000000e0"));
    assert!(lines.contains(&"energy 2.0000000000000000e0"));
    assert!(lines.contains(&"tv 1.0000000000000000e0"));

    let same = stdout(&ipmfair(d, &["ipm", "a.csv", "a.csv"]));
    assert!(same.lines().all(|l| l.ends_with(" 0.0000000000000000e0")), "{same}");

    std::fs::write(d.join("g.csv"), "s,g\n0,0\n2,0\n1,1\n3,1\n").unwrap();
    let grouped = stdout(&ipmfair(d, &["ipm", "g.csv", "--column", "s", "--group-column", "g", "--metric", "ks", "--metric", "l1"]));
    assert_eq!(grouped, "kolmogorov 5.0000000000000000e-1\nl1 1.0000000000000000e0\n");

    std::fs::write(d.join("bad.csv"), "v\n0\nx\n").unwrap();
    let bad = ipmfair(d, &["ipm", "bad.csv", "a.csv"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("row 3"));
}

#[test]
fn check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let batching = ipmfair(d, &["check", "--scope", "batching"]);
    assert_eq!(batching.status.code(), Some(0));
    assert!(stdout(&batching).contains("PASS beta at pa=0.5"));

    // The published closed form for the SP-constrained regression loss does
    // not match its own generative model, so this line is expected to fail.
    let examples = ipmfair(d, &["check", "--scope", "examples"]);
    assert_eq!(examples.status.code(), Some(1));
    let failed: Vec<String> = stdout(&examples).lines().filter(|l| l.starts_with("FAIL")).map(String::from).collect();
    assert_eq!(failed.len(), 1, "{failed:?}");
    assert!(failed[0].contains("SP loss Monte Carlo"));

    let mutated = ipmfair(d, &["check", "--scope", "estimators", "--mutate-delta"]);
    assert_eq!(mutated.status.code(), Some(1));
    assert!(stdout(&mutated).lines().any(|l| l.starts_with("FAIL corrected loss unbiased")));

    assert_eq!(ipmfair(d, &["check", "--scope", "estimators"]).status.code(), Some(0));
    assert_eq!(ipmfair(d, &["check", "--scope", "gradients"]).status.code(), Some(0));
    assert_eq!(ipmfair(d, &["check", "--scope", "nope"]).status.code(), Some(2));
    assert_eq!(ipmfair(d, &["frobnicate"]).status.code(), Some(2));
}

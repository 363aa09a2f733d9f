use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mhnes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhnes"))
        .args(args)
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(
        o.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn write_config(dir: &Path, method: &str) -> PathBuf {
    let text = format!(
        r#"{{
  "dataset": {{"synthetic": {{"classes": 3, "n_train": 24, "n_val": 12, "n_test": 12, "size": 8, "seed": 1}}}},
  "model": {{"in_channels": 1, "classes": 3, "backbone": {{"layers": 1, "width": 4}}, "M": 2, "L": 2, "nodes": 2,
            "head_width": 4, "ops": ["skip_connect", "sep_conv_3x3", "max_pool_3x3", "avg_pool_3x3"]}},
  "method": "{method}",
  "search": {{"epochs": 2, "batch": 6, "partial": 2, "pcdarts_warmstart": 1, "drnas_warmstart": 0, "eval_samples": 2}},
  "train": {{"epochs": 1, "batch": 8}},
  "pool_size": 2,
  "seeds": [0, 1],
  "severities": [0, 2]
}}"#
    );
    let path = dir.join(format!("{method}.json"));
    fs::write(&path, text).unwrap();
    path
}

fn count_lines(text: &str) -> Vec<String> {
    text.lines()
        .filter(|l| l.contains("per class"))
        .map(str::to_string)
        .collect()
}

#[test]
fn dataset_gen_then_inspect_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    let gen = ok(mhnes(&[
        "dataset",
        "gen",
        "--classes",
        "4",
        "--seed",
        "7",
        "--out",
        p(&d),
    ]));
    assert!(d.join("dataset.bin").is_file());
    let inspect = ok(mhnes(&["dataset", "inspect", p(&d)]));
    let (a, b) = (count_lines(&stdout(&gen)), count_lines(&stdout(&inspect)));
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
    assert!(a[0].contains("2000 examples"));
    assert!(a[0].contains("[500, 500, 500, 500]"));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mhnes(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mhnes(&["search"]).status.code(), Some(1));
    assert_eq!(mhnes(&["--help"]).status.code(), Some(0));
    let missing = dir.path().join("none.json");
    let o = mhnes(&["search", "--config", p(&missing)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not found"));

    let cfg = write_config(dir.path(), "pcdarts");
    let bad = fs::read_to_string(&cfg)
        .unwrap()
        .replace("\"batch\": 8", "\"batch\": 0");
    fs::write(&cfg, bad).unwrap();
    let o = mhnes(&["search", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.batch"));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "pcdarts");
    let text = fs::read_to_string(&cfg).unwrap().replace(
        r#"{"synthetic": {"classes": 3, "n_train": 24, "n_val": 12, "n_test": 12, "size": 8, "seed": 1}}"#,
        r#"{"file": "missing.bin"}"#,
    );
    fs::write(&cfg, text).unwrap();
    assert_eq!(
        mhnes(&["search", "--config", p(&cfg)]).status.code(),
        Some(2)
    );
}

#[test]
fn search_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "drnas");
    let s = dir.path().join("s");
    ok(mhnes(&[
        "search",
        "--config",
        p(&cfg),
        "--seed",
        "3",
        "--out",
        p(&s),
    ]));
    for f in [
        "genotype.json",
        "arch.json",
        "search_history.json",
        "budget.json",
    ] {
        assert!(s.join(f).is_file(), "{f}");
    }
    let t = dir.path().join("t");
    let o = ok(mhnes(&[
        "train",
        "--config",
        p(&cfg),
        "--genotype",
        p(&s.join("genotype.json")),
        "--out",
        p(&t),
    ]));
    assert_eq!(stdout(&o).lines().count(), 3);
    let e = dir.path().join("e");
    ok(mhnes(&[
        "eval",
        "--config",
        p(&cfg),
        "--model",
        p(&t.join("ensemble.json")),
        "--out",
        p(&e),
    ]));
    let strip = |path: PathBuf| -> Vec<String> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| l.split(',').skip(2).take(7).collect::<Vec<_>>().join(","))
            .collect()
    };
    // same model, same data, same shift seed: identical metrics
    assert_eq!(strip(t.join("metrics.csv")), strip(e.join("metrics.csv")));

    let h = dir.path().join("hamming.csv");
    ok(mhnes(&[
        "analyze",
        "hamming",
        p(&s.join("genotype.json")),
        p(&s.join("genotype.json")),
        "--out",
        p(&h),
    ]));
    let csv = fs::read_to_string(&h).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().ends_with(",0,0"));
}

#[test]
fn baseline_and_run_feed_report() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("b");
    let cfg = write_config(dir.path(), "deepens_sample");
    ok(mhnes(&["baseline", "--config", p(&cfg), "--out", p(&b)]));
    assert!(b.join("ensemble.json").is_file());
    assert_eq!(
        mhnes(&[
            "baseline",
            "--config",
            p(&write_config(dir.path(), "pcdarts"))
        ])
        .status
        .code(),
        Some(1)
    );

    let r = dir.path().join("r");
    let cfg = write_config(dir.path(), "randomnas");
    ok(mhnes(&["run", "--config", p(&cfg), "--out", p(&r)]));
    assert!(r.join("seed0/ensemble.json").is_file());
    assert!(r.join("seed1/manifest.json").is_file());

    let table = ok(mhnes(&[
        "report",
        p(&r.join("metrics.csv")),
        p(&b.join("metrics.csv")),
    ]));
    let text = stdout(&table);
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("randomnas") && text.contains("deepens_sample"));
    let out = dir.path().join("report.csv");
    ok(mhnes(&[
        "report",
        p(&r.join("metrics.csv")),
        "--split",
        "test",
        "--severity",
        "2",
        "--out",
        p(&out),
    ]));
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("randomnas,2,2,"));
}

#[test]
fn analyze_hessian_and_regret_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "pcdarts");
    let a = dir.path().join("a");
    ok(mhnes(&[
        "analyze",
        "hessian",
        "--config",
        p(&cfg),
        "--max-iter",
        "5",
        "--out",
        p(&a),
    ]));
    let trace = fs::read_to_string(a.join("eig_trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "epoch,eig,residual,iters");
    assert_eq!(trace.lines().count(), 3);

    ok(mhnes(&[
        "analyze",
        "regret",
        "--config",
        p(&cfg),
        "--sizes",
        "1,2",
        "--samples",
        "2",
        "--out",
        p(&a),
    ]));
    let regret = fs::read_to_string(a.join("regret.csv")).unwrap();
    assert_eq!(
        regret.lines().next().unwrap(),
        "M,sample_id,seed,val_nll,regret"
    );
    assert_eq!(regret.lines().count(), 5);
    assert_eq!(
        mhnes(&["analyze", "regret", "--config", p(&cfg), "--samples", "1"])
            .status
            .code(),
        Some(1)
    );
}

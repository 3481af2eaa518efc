use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "problem": {"rows": 3, "cols": 3, "n_zeta": 3},
  "n_train": 24,
  "n_val": 12,
  "n_test": 16,
  "instances": 2,
  "perturbations": [0.0, 0.5],
  "estimator": {"kind": "forest", "trees": 10, "max_depth": 3, "min_leaf": 3},
  "alpha_grid": [0.0, 0.5, 0.9]
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_prescript-opt"));
    c.env_remove("PRESCRIPT_OPT_JOBS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, TINY).unwrap();
    path
}

fn json_number(path: &Path, key: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v[key].as_f64().unwrap()
}

#[test]
fn generate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["generate", "--config", p(&cfg), "--seed", "7", "--perturbation", "0.4", "--out", p(dir)]);
    }
    for f in ["graph.json", "train.csv", "validation.csv", "test.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = tmp.path().join("c");
    ok(&["generate", "--config", p(&cfg), "--seed", "8", "--out", p(&c)]);
    assert_ne!(fs::read(a.join("train.csv")).unwrap(), fs::read(c.join("train.csv")).unwrap());
}

#[test]
fn stage_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let data = tmp.path().join("data");
    ok(&["generate", "--config", p(&cfg), "--out", p(&data)]);
    ok(&["fit", "--config", p(&cfg), "--data", p(&data)]);
    assert!(data.join("model.json").exists());

    let cal = tmp.path().join("cal");
    let stdout = ok(&[
        "calibrate", "--config", p(&cfg), "--data", p(&data), "--method", "drpcr", "--alphas", "0,0.5", "--out",
        p(&cal),
    ]);
    assert!(stdout.contains("alpha*"));
    let report = fs::read_to_string(cal.join("report.csv")).unwrap();
    assert!(report.starts_with("alpha,gamma_or_blank,validation_pcr\n"));
    assert_eq!(report.lines().count(), 3);
    assert!(cal.join("trace.csv").exists());

    let (drpcr, cso) = (tmp.path().join("drpcr"), tmp.path().join("cso"));
    ok(&["solve", "--config", p(&cfg), "--data", p(&data), "--method", "drpcr", "--alpha", "0", "--out", p(&drpcr)]);
    ok(&["solve", "--config", p(&cfg), "--data", p(&data), "--method", "cso", "--out", p(&cso)]);
    let a = json_number(&drpcr.join("solve.json"), "objective");
    let b = json_number(&cso.join("solve.json"), "objective");
    assert!((a - b).abs() <= 1e-6, "{a} vs {b}");

    let stdout = ok(&["evaluate", p(&cso.join("costs.csv"))]);
    let reported: f64 = stdout.trim().rsplit(',').next().unwrap().parse().unwrap();
    let stored: serde_json::Value = serde_json::from_str(&fs::read_to_string(cso.join("solve.json")).unwrap()).unwrap();
    assert_eq!(reported.to_string(), stored["pcr"].as_str().unwrap());
}

#[test]
fn run_writes_results_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("run");
    ok(&["run", "--config", p(&cfg), "--out", p(&out), "--jobs", "2"]);
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(
        lines.next(),
        Some("instance,method,perturbation,alpha,gamma,oos_pcr,wall_time_ms,status")
    );
    assert_eq!(lines.clone().count(), 2 * 4 * 2);
    assert!(lines.all(|l| l.ends_with(",ok")));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,perturbation,mean_pcr,q25,median,q75\n"));
    assert_eq!(summary.lines().count(), 1 + 4 * 2);
    assert!(out.join("pcr_trend.svg").exists() && out.join("pcr_box_m0.5.svg").exists());

    let stdout = ok(&["evaluate", "--check", p(&out)]);
    assert!(stdout.contains("16 rows match"));

    let svg = tmp.path().join("trend.svg");
    ok(&["plot", "--input", p(&out.join("summary.csv")), "--out", p(&svg)]);
    let text = fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches(r#"class="series""#).count(), 4);
    for m in ["cso", "drcso", "drcro", "drpcr"] {
        assert!(text.contains(&format!(r#"data-name="{m}""#)));
    }
    let boxes = tmp.path().join("boxes");
    ok(&["plot", "--input", p(&out.join("results.csv")), "--out", p(&boxes)]);
    assert!(boxes.join("pcr_box_m0.svg").exists());

    // Same config and seed, different worker count: identical bytes.
    let again = tmp.path().join("again");
    ok(&["run", "--config", p(&cfg), "--out", p(&again), "--jobs", "1"]);
    assert_eq!(fs::read(out.join("results.csv")).unwrap(), fs::read(again.join("results.csv")).unwrap());
}

#[test]
fn usage_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    assert!(!run(&["fit", "--data", p(&missing)]).status.success());
    assert!(!run(&["evaluate", p(&missing.join("costs.csv"))]).status.success());
    assert!(!run(&["evaluate"]).status.success());
    assert!(!run(&["frobnicate"]).status.success());
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"methods": ["saa"]}"#).unwrap();
    let out = run(&["run", "--config", p(&bad), "--out", p(&tmp.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("saa"));
    let plot_in = tmp.path().join("x.csv");
    fs::write(&plot_in, "a,b\n1,2\n").unwrap();
    assert!(!run(&["plot", "--input", p(&plot_in), "--out", p(&tmp.path().join("x.svg"))]).status.success());
}

#[test]
fn jobs_environment_override_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = bin()
        .args(["run", "--config", p(&cfg), "--out", p(&tmp.path().join("o")), "--jobs", "2"])
        .env("PRESCRIPT_OPT_JOBS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("PRESCRIPT_OPT_JOBS"));
}

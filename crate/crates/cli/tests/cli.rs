use std::path::PathBuf;
use std::process::{Command, Output};

struct Dir(PathBuf);

impl Dir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("eqrgmm-cli-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn path(&self, name: &str) -> String {
        self.0.join(name).display().to_string()
    }

    fn write(&self, name: &str, text: &str) -> String {
        std::fs::write(self.0.join(name), text).unwrap();
        self.path(name)
    }
}

impl Drop for Dir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqrgmm")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Fifty rows of `y = 1 + 2 x1 - x2 + noise` with a deterministic noise pattern.
fn tiny_csv() -> String {
    let mut s = String::from("x1,x2,y\n");
    for i in 0..50 {
        let x1 = (i % 10) as f64 * 0.5;
        let x2 = ((i * 3) % 7) as f64;
        let noise = ((i * 37) % 11) as f64 / 11.0 - 0.5;
        s.push_str(&format!("{x1},{x2},{}\n", 1.0 + 2.0 * x1 - x2 + noise));
    }
    s
}

#[test]
fn fit_and_generate_on_tiny_dataset() {
    let d = Dir::new("fit");
    let data = d.write("tiny.csv", &tiny_csv());
    let model = d.path("model.json");
    let o = run(&["fit", "--data", &data, "--out", &model]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let j: usize = stdout
        .split("J = ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .expect("J reported");
    assert!(j > 0);
    assert!(stdout.contains("timings:"));
    // The effective configuration is echoed with m resolved from n.
    assert!(stderr(&o).contains("m = 7"), "{}", stderr(&o));

    let out = d.path("gen.csv");
    let o = run(&["generate", "--model", &model, "--x", "1.5,-2", "--K", "5", "--seed", "4", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = std::fs::read_to_string(&out).unwrap();
    assert_eq!(first.lines().count(), 6);
    assert_eq!(first.lines().next(), Some("y"));
    run(&["generate", "--model", &model, "--x", "1.5,-2", "--K", "5", "--seed", "4", "--out", &out]);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), first);
}

#[test]
fn parse_and_validation_errors() {
    let d = Dir::new("errors");
    let missing = d.write("missing.csv", "x1,x3,y\n1,2,3\n");
    let o = run(&["fit", "--data", &missing, "--out", &d.path("m.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("'x2'"), "{}", stderr(&o));

    let bad = d.write("bad.csv", "x1,y\n1,2\n2,oops\n");
    let o = run(&["fit", "--data", &bad, "--out", &d.path("m.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let data = d.write("tiny.csv", &tiny_csv());
    let o = run(&["fit", "--data", &data, "--m", "1", "--out", &d.path("m.json")]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("'m'") && stderr(&o).contains("at least 2"), "{}", stderr(&o));

    let o = run(&["fit", "--data", &d.path("absent.csv"), "--out", &d.path("m.json")]);
    assert_eq!(o.status.code(), Some(5));

    let cfg = d.write("run.cfg", "tau_u = 0.05\n");
    let o = run(&["--config", &cfg, "fit", "--data", &data, "--out", &d.path("m.json")]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("'tau_u'"));

    let cfg = d.write("typo.cfg", "alpah = 0.1\n");
    let o = run(&["--config", &cfg, "fit", "--data", &data, "--out", &d.path("m.json")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn wrong_covariate_dimension_names_expected_arity() {
    let d = Dir::new("shape");
    let data = d.write("tiny.csv", &tiny_csv());
    let model = d.path("model.json");
    assert!(run(&["fit", "--data", &data, "--out", &model]).status.success());
    let o = run(&["generate", "--model", &model, "--x", "1,2,3", "--K", "5", "--out", &d.path("g.csv")]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("expected 2 covariates, got 3"), "{}", stderr(&o));
}

#[test]
fn ci_report_contents() {
    let d = Dir::new("ci");
    let data = d.write("tiny.csv", &tiny_csv());
    for (spec, kind) in [("mean", "mean"), ("quantile:0.8", "quantile"), ("survival:3.5", "survival")] {
        let out = d.path("ci.json");
        let o = run(&[
            "ci", "--data", &data, "--x", "1,2", "--estimand", spec, "--B", "10", "--K", "200", "--seed", "3", "--out",
            &out,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(report["estimates"].as_array().unwrap().len(), 10);
        assert_eq!(report["seed"], 3);
        assert_eq!(report["estimand"], spec);
        assert!(report["wall_time_seconds"].as_f64().unwrap() >= 0.0);
        assert!(report["lower"].as_f64().unwrap() <= report["upper"].as_f64().unwrap());
        assert_eq!(report["config"]["B"], "10");
        assert!(spec.starts_with(kind));
    }
    let o = run(&["ci", "--data", &data, "--x", "1,2", "--estimand", "median", "--out", &d.path("x.json")]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_eval_pipeline() {
    let d = Dir::new("pipeline");
    let data = d.path("train.csv");
    let model = d.path("model.json");
    let reference = d.path("ref.csv");
    let generated = d.path("gen.csv");
    let report = d.path("eval.json");
    for args in [
        vec!["simulate", "--scenario", "normal", "--n", "10000", "--seed", "1", "--out", &data],
        vec!["simulate", "--scenario", "normal", "--reference", "--x", "4,-1,3", "--reference-size", "100000", "--seed", "2", "--out", &reference],
        vec!["fit", "--data", &data, "--out", &model],
        vec!["generate", "--model", &model, "--x", "4,-1,3", "--K", "100000", "--seed", "3", "--out", &generated],
        vec!["eval", "--generated", &generated, "--reference", &reference, "--out", &report],
    ] {
        let o = run(&args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let ks = v["ks"].as_f64().unwrap();
    assert!(ks > 0.0 && ks <= 0.02, "KS {ks}");
    assert_eq!(v["n_generated"], 100_000);
}

#[test]
fn experiment_writes_tables() {
    let d = Dir::new("experiment");
    let out = d.path("exp");
    let o = run(&[
        "experiment", "--kind", "synthetic", "--family", "normal", "--N", "3", "--n", "2000", "--K", "5000",
        "--reference-size", "5000", "--coverage", "--estimands", "mean,quantile:0.8", "--B", "5", "--out-dir", &out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["config.txt", "report.json", "summary.csv", "replications.csv", "coverage.csv"] {
        assert!(d.0.join("exp").join(name).exists(), "{name}");
    }
    let summary = std::fs::read_to_string(d.0.join("exp/summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    let ks: f64 = row[5].parse().unwrap();
    assert!(ks > 0.0 && ks < 0.05, "{summary}");
    let coverage = std::fs::read_to_string(d.0.join("exp/coverage.csv")).unwrap();
    assert_eq!(coverage.lines().count(), 3);

    let o = run(&["experiment", "--kind", "weather", "--out-dir", &out]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn study_table_layout() {
    let d = Dir::new("study");
    let out = d.path("table.csv");
    let o = run(&["study", "--n-values", "500,1000", "--levels", "0.1,0.5,0.9", "--N", "3", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,tau=0.1,tau=0.5,tau=0.9");
    assert!(lines[1].starts_with("500,") && lines[2].starts_with("1000,"));
    let o = run(&["study", "--family", "inventory", "--out", &out]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let d = Dir::new("workers");
    let data = d.write("tiny.csv", &tiny_csv());
    let mut reports = Vec::new();
    for workers in ["1", "3"] {
        let out = d.path(&format!("ci{workers}.json"));
        let o = run(&[
            "ci", "--data", &data, "--x", "1,2", "--estimand", "mean", "--B", "12", "--K", "300", "--workers", workers,
            "--omit-timings", "--out", &out,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        reports.push(std::fs::read_to_string(&out).unwrap().replace(&format!("\"workers\": \"{workers}\""), ""));
    }
    assert_eq!(reports[0], reports[1]);
    assert!(!reports[0].contains("wall_time_seconds"));
}

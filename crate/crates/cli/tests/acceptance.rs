//! Acceptance gate. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --release --test acceptance -- 2 7`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use eqrgmm::bootstrap::{bootstrap_ci, BootstrapConfig, Estimand};
use eqrgmm::evaluate::gradient_stability_study;
use eqrgmm::experiment::{
    run_experiment, CoverageSettings, ExperimentConfig, INVENTORY_X_STAR, SYNTHETIC_X_STAR,
};
use eqrgmm::gradient::gradient_vector;
use eqrgmm::grid::{build_grid, uniform_levels};
use eqrgmm::interp::{eval_cubic, NodeData};
use eqrgmm::metamodel::{FitConfig, Variant};
use eqrgmm::quantreg::{fit_quantile, objective, QuantileSolver};
use eqrgmm::simulate::{gen_synthetic, Scenario, SyntheticFamily};
use eqrgmm::{Basis, Dataset, FittedProcess};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

/// Passes with `detail` when `ok`, fails with it otherwise.
fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// 1. Grid economy.
fn grid_economy() -> Check {
    let start = Instant::now();
    let grid = build_grid(100, 2.0, 0.1, 0.9).map_err(err)?;
    let central = grid.central_mask.iter().filter(|&&c| c).count();
    let uniform = uniform_levels(100).map_err(err)?.len();
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        grid.len() == 32 && central == 14 && uniform == 99 && elapsed < 1e-3,
        format!("J = {}, central = {central}, QRGMM levels = {uniform}, {:.1} us", grid.len(), elapsed * 1e6),
    )
}

fn accuracy(family: SyntheticFamily, replications: usize) -> Result<(f64, f64), String> {
    let mut cfg = ExperimentConfig::synthetic(Scenario::Synthetic(family));
    cfg.replications = replications;
    cfg.seed = 2024;
    let report = run_experiment(&cfg).map_err(err)?;
    Ok((report.ks.mean, report.wd.mean))
}

// 2. Normal family accuracy.
fn normal_accuracy() -> Check {
    let (ks, wd) = accuracy(SyntheticFamily::Normal, 20)?;
    verdict(ks <= 0.02 && wd <= 0.06, format!("mean KS = {ks:.5} (<= 0.02), mean WD = {wd:.5} (<= 0.06)"))
}

// 3. Halfnormal and Student's t.
fn other_families() -> Check {
    let (ks_h, _) = accuracy(SyntheticFamily::Halfnormal, 20)?;
    let (ks_t, _) = accuracy(SyntheticFamily::student_t(), 20)?;
    verdict(
        ks_h <= 0.02 && ks_t <= 0.02,
        format!("mean KS halfnormal = {ks_h:.5}, t = {ks_t:.5} (each <= 0.02)"),
    )
}

// 4. Speed ratio and regression share.
fn speed_ratio() -> Check {
    let data = gen_synthetic(SyntheticFamily::Normal, 10_000, 4).map_err(err)?;
    let fit = |variant| {
        let cfg = FitConfig {
            variant,
            m: Some(100),
            ..FitConfig::default()
        };
        FittedProcess::fit(&data, &cfg)
    };
    fit(Variant::Eqrgmm).map_err(err)?;
    let mut e_best = f64::INFINITY;
    let mut q_best = f64::INFINITY;
    let mut share = 0.0;
    for _ in 0..5 {
        let t = Instant::now();
        let e = fit(Variant::Eqrgmm).map_err(err)?;
        let e_time = t.elapsed().as_secs_f64();
        if e_time < e_best {
            e_best = e_time;
            share = e.timings.regression / e.timings.total();
        }
        let t = Instant::now();
        fit(Variant::Qrgmm).map_err(err)?;
        q_best = q_best.min(t.elapsed().as_secs_f64());
    }
    let ratio = e_best / q_best;
    verdict(
        ratio <= 0.5 && share >= 0.5,
        format!(
            "E-QRGMM {:.1} ms, QRGMM {:.1} ms, ratio {ratio:.3} (<= 0.5), regression share {share:.3} (>= 0.5)",
            e_best * 1e3,
            q_best * 1e3
        ),
    )
}

// 5. Bootstrap coverage.
fn coverage() -> Check {
    let mut cfg = ExperimentConfig::synthetic(Scenario::Synthetic(SyntheticFamily::Normal));
    cfg.replications = 50;
    cfg.seed = 5;
    cfg.k = 10_000;
    cfg.reference_size = 10_000;
    cfg.coverage = Some(CoverageSettings {
        estimands: vec![Estimand::Mean],
        b_count: 100,
        k: 10_000,
        alpha: 0.1,
    });
    let report = run_experiment(&cfg).map_err(err)?;
    let row = &report.coverage[0];
    let (cov, width) = (row.coverage.mean, row.width.mean);
    verdict(
        (0.80..=0.98).contains(&cov) && width <= 0.10,
        format!(
            "coverage {cov:.2} ({}/{}) in [0.80, 0.98], mean width {width:.4} (<= 0.10)",
            row.report.covered, row.report.n_replications
        ),
    )
}

// 6. Degenerate interval.
fn degenerate_ci() -> Check {
    let c = 7.25;
    let base = gen_synthetic(SyntheticFamily::Normal, 300, 6).map_err(err)?;
    let data = base.with_responses(vec![c; base.n()]).map_err(err)?;
    let cfg = BootstrapConfig {
        b_count: 20,
        k: 2000,
        seed: 6,
        ..BootstrapConfig::default()
    };
    let ci = bootstrap_ci(&data, &cfg, &SYNTHETIC_X_STAR, &Estimand::Mean).map_err(err)?;
    verdict(ci.lower == c && ci.upper == c, format!("interval [{}, {}] for constant {c}", ci.lower, ci.upper))
}

// 7. Gradient oracle at the median.
fn gradient_oracle() -> Check {
    let truth = std::f64::consts::TAU.sqrt();
    let mut estimates = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let y: Vec<f64> = (0..100_000).map(|_| std_normal(&mut rng)).collect();
        let data = Dataset::intercept_only(y).map_err(err)?;
        let beta = fit_quantile(&data, 0.5).map_err(err)?;
        estimates.push(gradient_vector(&data, &beta, 0.1).map_err(err)?.g[0]);
    }
    let avg = mean(&estimates);
    verdict(
        (avg - truth).abs() <= 0.15,
        format!("mean D(0.5) = {avg:.4}, sqrt(2 pi) = {truth:.4}, error {:.4} (<= 0.15)", (avg - truth).abs()),
    )
}

// 8. Interpolation exactness.
fn interpolation() -> Check {
    let start = Instant::now();
    let data = gen_synthetic(SyntheticFamily::Normal, 2000, 8).map_err(err)?;
    let model = FittedProcess::fit(&data, &FitConfig::default()).map_err(err)?;
    let x = SYNTHETIC_X_STAR;
    let design_x = Basis::Identity.expand(&x).map_err(err)?;
    let curve = model.curve(&x).map_err(err)?;

    let mut node_err: f64 = 0.0;
    for (tau, beta) in model.coeffs.levels.iter().zip(&model.coeffs.betas) {
        let want = dot(&design_x, beta);
        node_err = node_err.max((curve.eval(*tau) - want).abs() / want.abs().max(1e-300));
    }

    // One-sided Richardson differences from inside the central region.
    let mut deriv_err: f64 = 0.0;
    let levels = &model.grads.levels;
    for (j, (tau, g)) in levels.iter().zip(&model.grads.g).enumerate() {
        let want = dot(&design_x, g);
        let h = 1e-4;
        let mut sides = Vec::new();
        if j + 1 < levels.len() {
            sides.push(1.0);
        }
        if j > 0 {
            sides.push(-1.0);
        }
        for s in sides {
            let d = |h: f64| (curve.eval(tau + s * h) - curve.eval(*tau)) / (s * h);
            let rich = 2.0 * d(h / 2.0) - d(h);
            deriv_err = deriv_err.max((rich - want).abs() / want.abs());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut cubic_err: f64 = 0.0;
    for _ in 0..1000 {
        let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        let q = |t: f64| c[0] + t * (c[1] + t * (c[2] + t * c[3]));
        let dq = |t: f64| c[1] + t * (2.0 * c[2] + 3.0 * t * c[3]);
        let t0: f64 = rng.random_range(0.0..0.8);
        let t1 = t0 + rng.random_range(0.01..0.2);
        let tau = rng.random_range(t0..t1);
        let v = eval_cubic(tau, q(t0), q(t1), dq(t0), dq(t1), t0, t1);
        cubic_err = cubic_err.max((v - q(tau)).abs());
    }
    let knots = [0.1, 0.3, 0.5, 0.7, 0.9];
    let c = [1.0, -2.0, 3.0, 0.5];
    let q = |t: f64| c[0] + t * (c[1] + t * (c[2] + t * c[3]));
    let dq = |t: f64| c[1] + t * (2.0 * c[2] + 3.0 * t * c[3]);
    let nodes = NodeData::new(knots.to_vec(), knots.map(q).to_vec(), Some(knots.map(dq).to_vec())).map_err(err)?;
    for k in 0..=800 {
        let tau = 0.1 + 0.8 * k as f64 / 800.0;
        cubic_err = cubic_err.max((nodes.eval_hermite(tau) - q(tau)).abs());
    }

    let (lo, hi) = curve.central_region().ok_or("no central region")?;
    let eps = 1e-10;
    let jump = [lo, hi]
        .iter()
        .map(|&t| (curve.eval(t - eps) - curve.eval(t)).abs().max((curve.eval(t + eps) - curve.eval(t)).abs()))
        .fold(0.0, f64::max);

    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        node_err <= 1e-10 && deriv_err <= 1e-6 && cubic_err <= 1e-12 && jump <= 1e-7 && elapsed < 1.0,
        format!(
            "node rel err {node_err:.1e}, derivative rel err {deriv_err:.1e}, cubic err {cubic_err:.1e}, \
             boundary jump {jump:.1e} at eps 1e-10, {elapsed:.2} s"
        ),
    )
}

// 9. Solver properties.
fn solver_properties() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let solver = QuantileSolver::default();
    let mut worst = String::new();
    let mut balance_failures = 0;
    for _ in 0..200 {
        let p = rng.random_range(1..=5);
        let n = rng.random_range(10.max(2 * p)..=200);
        let tau: f64 = rng.random_range(0.05..0.95);
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = vec![1.0];
            row.extend((1..p).map(|_| std_normal(&mut rng)));
            y.push(dot(&row, &vec![1.0; p]) + std_normal(&mut rng));
            rows.push(row);
        }
        let data = Dataset::from_rows(&rows, y.clone()).map_err(err)?;
        let beta = solver.fit(&data, tau).map_err(err)?.beta;
        let resid: Vec<f64> = rows.iter().zip(&y).map(|(r, v)| v - dot(r, &beta)).collect();
        let tol = |v: f64| 1e-9 * (1.0 + v.abs());
        let below = resid.iter().zip(&y).filter(|(r, v)| **r < -tol(**v)).count();
        let at_or_below = resid.iter().zip(&y).filter(|(r, v)| **r <= tol(**v)).count();
        let nt = n as f64 * tau;
        if !(below as f64 <= nt && nt <= (at_or_below + p) as f64) {
            balance_failures += 1;
            worst = format!("n={n} p={p} tau={tau:.3}: below {below}, n tau {nt:.2}, at-or-below {at_or_below}");
        }
    }
    let mut brute_err: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=12);
        let tau: f64 = rng.random_range(0.01..0.99);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let data = Dataset::intercept_only(y.clone()).map_err(err)?;
        let fit = solver.fit(&data, tau).map_err(err)?;
        // Piecewise linear in the intercept with kinks at the data, so the
        // minimum is attained at a data point.
        let best = y
            .iter()
            .map(|&b| objective(&data, &[b], tau))
            .fold(f64::INFINITY, f64::min);
        brute_err = brute_err.max((fit.objective - best).abs() / (1.0 + best.abs()));
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        balance_failures == 0 && brute_err <= 1e-8 && elapsed < 10.0,
        format!(
            "balance failures {balance_failures}/200{}, brute-force rel err {brute_err:.1e}, {elapsed:.2} s",
            if worst.is_empty() { String::new() } else { format!(" ({worst})") }
        ),
    )
}

// 10. Inventory pipeline.
fn inventory() -> Check {
    let mut cfg = ExperimentConfig::inventory();
    cfg.replications = 5;
    cfg.reference_size = 10_000;
    cfg.seed = 10;
    let report = run_experiment(&cfg).map_err(err)?;
    debug_assert_eq!(cfg.x_star, INVENTORY_X_STAR);
    verdict(
        report.ks.mean <= 0.06,
        format!("mean KS = {:.5} (<= 0.06), WD = {:.3}, m = {}", report.ks.mean, report.wd.mean, report.m),
    )
}

// 11. Tail gradient instability.
fn gradient_instability() -> Check {
    let cells = gradient_stability_study(
        Scenario::Synthetic(SyntheticFamily::Normal),
        &[10_000],
        &[0.01, 0.5],
        30,
        11,
        0.1,
        0,
    )
    .map_err(err)?;
    let sd = |tau: f64| {
        cells
            .iter()
            .find(|c| c.tau == tau)
            .and_then(|c| c.std_rel_error)
            .ok_or(format!("no standard deviation at tau = {tau}"))
    };
    let (tail, mid) = (sd(0.01)?, sd(0.5)?);
    verdict(
        tail >= 2.0 * mid,
        format!("std at 0.01 = {tail:.4}, at 0.5 = {mid:.4}, ratio {:.2} (>= 2)", tail / mid),
    )
}

// 12. Determinism of every command.
struct Sandbox {
    dir: PathBuf,
}

impl Sandbox {
    fn new() -> Self {
        let dir = std::env::temp_dir().join(format!("eqrgmm-acceptance-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).expect("temp dir");
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn run(&self, args: &[&str]) -> Result<String, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_eqrgmm"))
            .args(args)
            .output()
            .map_err(err)?;
        if !out.status.success() {
            return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr))
    }
}

impl Drop for Sandbox {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir).into_iter().flatten().flatten().collect();
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            out.extend(read_tree(&path));
        } else {
            out.push((path.display().to_string(), std::fs::read(&path).unwrap_or_default()));
        }
    }
    out
}

fn determinism() -> Check {
    let sb = Sandbox::new();
    let data = sb.path("data.csv");
    let data = data.to_str().ok_or("path")?;
    sb.run(&["simulate", "--scenario", "normal", "--n", "400", "--seed", "12", "--out", data])?;

    let mut runs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for (tag, workers) in [("a", "1"), ("b", "2"), ("c", "1")] {
        let out = sb.path(tag);
        let o = |name: &str| out.join(name).display().to_string();
        let common = ["--seed", "12", "--workers", workers, "--omit-timings"];
        let with = |args: &[&str]| -> Vec<String> { args.iter().chain(&common).map(|s| s.to_string()).collect() };
        let mut log = String::new();
        let mut step = |args: Vec<String>| -> Result<(), String> {
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            log.push_str(&sb.run(&refs)?);
            Ok(())
        };
        step(with(&["simulate", "--scenario", "t", "--n", "300", "--out", &o("sim.csv")]))?;
        step(with(&["simulate", "--scenario", "inventory", "--n", "20", "--out", &o("inv.csv")]))?;
        step(with(&["simulate", "--scenario", "halfnormal", "--reference", "--reference-size", "500", "--out", &o("ref.csv")]))?;
        step(with(&["fit", "--data", data, "--out", &o("model.json")]))?;
        step(with(&["generate", "--model", &o("model.json"), "--x", "4,-1,3", "--K", "500", "--out", &o("gen.csv")]))?;
        step(with(&["eval", "--generated", &o("gen.csv"), "--reference", &o("ref.csv"), "--out", &o("eval.json")]))?;
        step(with(&["ci", "--data", data, "--x", "4,-1,3", "--estimand", "quantile:0.8", "--B", "8", "--K", "500", "--out", &o("ci.json")]))?;
        step(with(&[
            "experiment", "--kind", "synthetic", "--family", "normal", "--n", "400", "--N", "3", "--K", "500",
            "--reference-size", "500", "--coverage", "--B", "4", "--out-dir", &o("exp"),
        ]))?;
        step(with(&[
            "experiment", "--kind", "synthetic", "--n", "400", "--N", "2", "--K", "300", "--reference-size", "300",
            "--sweep", "6,10", "--out-dir", &o("sweep"),
        ]))?;
        step(with(&["study", "--n-values", "300,600", "--levels", "0.2,0.5", "--N", "4", "--out", &o("study.csv"), "--json", &o("study.json")]))?;
        let log = log.replace(&format!("{}/{tag}", sb.dir.display()), "<out>");
        let mut files: Vec<(String, Vec<u8>)> = read_tree(&out)
            .into_iter()
            .map(|(name, bytes)| (name.replace(&format!("{}/{tag}", sb.dir.display()), "<out>"), bytes))
            .collect();
        // The echoed worker count is the one intended difference.
        for (_, bytes) in &mut files {
            *bytes = String::from_utf8_lossy(bytes)
                .replace(&format!("\"workers\": \"{workers}\""), "\"workers\": \"*\"")
                .replace(&format!("workers = {workers}"), "workers = *")
                .into_bytes();
        }
        files.push(("<console>".into(), log.replace(&format!("workers = {workers}"), "workers = *").into_bytes()));
        runs.push(files);
    }
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    let mismatched: Vec<&str> = runs[0]
        .iter()
        .filter(|(name, bytes)| {
            runs[1..].iter().any(|r| r.iter().find(|(n, _)| n == name).map(|(_, b)| b) != Some(bytes))
        })
        .map(|(n, _)| n.as_str())
        .collect();
    let same_sets = runs.iter().all(|r| r.len() == runs[0].len());
    verdict(
        mismatched.is_empty() && same_sets,
        if mismatched.is_empty() {
            format!("{} outputs identical across 3 runs (workers 1, 2, 1)", names.len())
        } else {
            format!("outputs differ: {mismatched:?}")
        },
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Check); 12] = [
        (1, "grid economy", grid_economy),
        (2, "normal accuracy", normal_accuracy),
        (3, "halfnormal and t accuracy", other_families),
        (4, "speed ratio", speed_ratio),
        (5, "bootstrap coverage", coverage),
        (6, "degenerate interval", degenerate_ci),
        (7, "gradient oracle", gradient_oracle),
        (8, "interpolation exactness", interpolation),
        (9, "solver properties", solver_properties),
        (10, "inventory pipeline", inventory),
        (11, "gradient instability", gradient_instability),
        (12, "determinism", determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {id:>2} {status} {name}: {detail} [{secs:.1} s]");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

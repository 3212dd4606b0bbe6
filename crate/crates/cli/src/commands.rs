use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use eqrgmm::bootstrap::{timed_bootstrap_ci, BootstrapConfig, ConfidenceInterval, Estimand};
use eqrgmm::evaluate::{gradient_stability_study, ks_statistic, wasserstein_1d, StabilityCell};
use eqrgmm::experiment::{
    default_estimands, grid_sweep, run_experiment, scenario_dataset, scenario_reference, CoverageSettings,
    ExperimentConfig, ExperimentReport, MeanSe, SweepRow, INVENTORY_X_STAR, SYNTHETIC_X_STAR,
};
use eqrgmm::gradient::Bandwidth;
use eqrgmm::grid::default_m;
use eqrgmm::simulate::Scenario;
use eqrgmm::{Basis, FittedProcess};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io;

pub struct Context {
    pub cfg: RunConfig,
    pub omit_timings: bool,
}

impl Context {
    /// Fills in data-dependent defaults and prints the effective configuration.
    fn resolve(&mut self, n: usize, basis: Basis, m: Option<usize>) -> BTreeMap<String, String> {
        self.cfg.basis.get_or_insert(basis);
        let m = m.unwrap_or_else(|| default_m(n));
        self.cfg.m.get_or_insert(m);
        eprint!("{}", self.cfg.echo(Some(n)));
        self.cfg.resolved(Some(n))
    }

    fn echo_only(&self) -> BTreeMap<String, String> {
        eprint!("{}", self.cfg.echo(None));
        self.cfg.resolved(None)
    }
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    config: &'a BTreeMap<String, String>,
    #[serde(flatten)]
    body: T,
}

fn parse_x(text: &str) -> CliResult<Vec<f64>> {
    io::parse_list("x", text)
}

fn parse_scenario(name: &str) -> CliResult<Scenario> {
    Scenario::parse(name).map_err(|e| CliError::field("scenario", e))
}

pub fn fit(mut ctx: Context, data_path: &Path, out: &Path) -> CliResult<()> {
    let data = io::read_dataset(data_path)?;
    ctx.resolve(data.n(), Basis::Identity, None);
    let model = FittedProcess::fit(&data, &ctx.cfg.fit_config())?;
    model.save(out)?;
    println!("J = {} quantile levels ({} regressions)", model.levels().len(), model.meta.regressions);
    if !ctx.omit_timings {
        let t = model.timings;
        println!(
            "timings: regression {:.4}s, gradient {:.4}s, assembly {:.4}s, total {:.4}s",
            t.regression,
            t.gradient,
            t.assembly,
            t.total()
        );
    }
    println!("model written to {}", out.display());
    Ok(())
}

pub fn generate(ctx: Context, model_path: &Path, x: &str, out: &Path) -> CliResult<()> {
    let x = parse_x(x)?;
    ctx.echo_only();
    let model = FittedProcess::load(model_path)?;
    let sample = model.generate(&x, ctx.cfg.k, ctx.cfg.seed)?;
    io::write_sample(out, &sample)
}

#[derive(Serialize)]
struct CiBody<'a> {
    estimand: String,
    x: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_seconds: Option<f64>,
    #[serde(flatten)]
    interval: &'a ConfidenceInterval,
}

pub fn ci(mut ctx: Context, data_path: &Path, x: &str, estimand: &str, out: &Path) -> CliResult<()> {
    let x = parse_x(x)?;
    let est: Estimand = estimand.parse().map_err(|e| CliError::field("estimand", e))?;
    let data = io::read_dataset(data_path)?;
    let config = ctx.resolve(data.n(), Basis::Identity, None);
    let boot = BootstrapConfig {
        fit: ctx.cfg.fit_config(),
        b_count: ctx.cfg.b_count,
        k: ctx.cfg.k,
        alpha: ctx.cfg.alpha,
        seed: ctx.cfg.seed,
        workers: ctx.cfg.workers,
        max_retries: ctx.cfg.retries,
    };
    let (interval, secs) = timed_bootstrap_ci(&data, &boot, &x, &est)?;
    for r in &interval.retries {
        eprintln!("replicate {} retried (attempt {}): {}", r.replicate, r.attempt, r.cause);
    }
    let body = CiBody {
        estimand: est.to_string(),
        x: &x,
        wall_time_seconds: (!ctx.omit_timings).then_some(secs),
        interval: &interval,
    };
    io::write_json(out, &Report { config: &config, body })?;
    println!("{} interval: [{}, {}]", est, interval.lower, interval.upper);
    Ok(())
}

pub fn simulate(ctx: Context, scenario: &str, reference: bool, x: Option<&str>, out: &Path) -> CliResult<()> {
    let scenario = parse_scenario(scenario)?;
    ctx.echo_only();
    if reference {
        let x = match x {
            Some(text) => parse_x(text)?,
            None => default_x(scenario).to_vec(),
        };
        let sample = scenario_reference(scenario, &x, ctx.cfg.reference_size, ctx.cfg.seed)?;
        io::write_sample(out, &sample)
    } else {
        if x.is_some() {
            return Err(CliError::field("x", "only meaningful together with --reference"));
        }
        let data = scenario_dataset(scenario, ctx.cfg.n, ctx.cfg.seed)?;
        io::write_dataset(out, &data)
    }
}

fn default_x(scenario: Scenario) -> [f64; 3] {
    match scenario {
        Scenario::Inventory => INVENTORY_X_STAR,
        Scenario::Synthetic(_) => SYNTHETIC_X_STAR,
    }
}

#[derive(Serialize)]
struct EvalBody {
    ks: f64,
    wd: f64,
    n_generated: usize,
    n_reference: usize,
}

pub fn eval(ctx: Context, generated: &Path, reference: &Path, out: &Path) -> CliResult<()> {
    let config = ctx.echo_only();
    let a = io::read_sample(generated)?;
    let b = io::read_sample(reference)?;
    let body = EvalBody {
        ks: ks_statistic(&a, &b)?,
        wd: wasserstein_1d(&a, &b)?,
        n_generated: a.len(),
        n_reference: b.len(),
    };
    println!("KS = {}, WD = {}", body.ks, body.wd);
    io::write_json(out, &Report { config: &config, body })
}

pub struct ExperimentArgs {
    pub kind: String,
    pub family: String,
    pub x: Option<String>,
    pub coverage: bool,
    pub estimands: Option<String>,
    pub sweep: Option<String>,
    pub out_dir: PathBuf,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn experiment(mut ctx: Context, args: ExperimentArgs) -> CliResult<()> {
    let scenario = match args.kind.as_str() {
        "synthetic" => parse_scenario(&args.family)?,
        "inventory" => Scenario::Inventory,
        other => return Err(CliError::field("kind", format!("expected synthetic or inventory, got '{other}'"))),
    };
    if args.estimands.is_some() && !args.coverage {
        return Err(CliError::field("estimands", "only meaningful together with --coverage"));
    }
    let defaults = ExperimentConfig::for_scenario(scenario);
    let (basis, m) = (defaults.fit.basis, defaults.fit.m.filter(|_| scenario == Scenario::Inventory));
    let config = ctx.resolve(ctx.cfg.n, basis, m);
    let cfg = &ctx.cfg;
    let x_star = match &args.x {
        Some(text) => parse_x(text)?,
        None => defaults.x_star.clone(),
    };
    let coverage = if args.coverage {
        let estimands = match &args.estimands {
            Some(list) => list
                .split(',')
                .map(|s| s.trim().parse().map_err(|e| CliError::field("estimands", e)))
                .collect::<CliResult<Vec<Estimand>>>()?,
            None => default_estimands(scenario, &x_star, cfg.truth_size, cfg.seed)?,
        };
        Some(CoverageSettings {
            estimands,
            b_count: cfg.b_count,
            k: cfg.k,
            alpha: cfg.alpha,
        })
    } else {
        None
    };
    let exp = ExperimentConfig {
        scenario,
        n: cfg.n,
        fit: cfg.fit_config(),
        x_star,
        k: cfg.k,
        reference_size: cfg.reference_size,
        replications: cfg.replications,
        seed: cfg.seed,
        workers: cfg.workers,
        coverage,
        truth_size: cfg.truth_size,
    };
    let dir = &args.out_dir;
    io::write_text(&dir.join("config.txt"), &cfg.echo(Some(cfg.n)))?;

    if let Some(list) = &args.sweep {
        let m_values: Vec<usize> = io::parse_list("sweep", list)?;
        let mut rows = grid_sweep(&exp, &m_values)?;
        if ctx.omit_timings {
            rows.iter_mut().for_each(SweepRow::strip_timings);
        }
        write_sweep(dir, &rows)?;
        io::write_json(&dir.join("report.json"), &Report { config: &config, body: SweepBody { sweep: &rows } })?;
        for r in &rows {
            println!("{} m={} J={}: KS {:.5} WD {:.5}", r.variant, r.variant_m, r.grid_points, r.ks.mean, r.wd.mean);
        }
        return Ok(());
    }

    let mut report = run_experiment(&exp)?;
    if ctx.omit_timings {
        report.strip_timings();
    }
    write_experiment(dir, &report)?;
    io::write_json(&dir.join("report.json"), &Report { config: &config, body: &report })?;
    println!(
        "{} on {}: KS {:.5} ± {:.5}, WD {:.5} ± {:.5} over {} replications",
        report.variant, report.scenario, report.ks.mean, report.ks.se, report.wd.mean, report.wd.se, report.replications
    );
    for row in &report.coverage {
        println!(
            "coverage of {}: {:.3} ± {:.3}, width {:.5}",
            row.estimand, row.coverage.mean, row.coverage.se, row.width.mean
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepBody<'a> {
    sweep: &'a [SweepRow],
}

fn write_sweep(dir: &Path, rows: &[SweepRow]) -> CliResult<()> {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.variant.clone(),
                r.m.to_string(),
                r.variant_m.to_string(),
                r.grid_points.to_string(),
                r.ks.mean.to_string(),
                r.ks.se.to_string(),
                r.wd.mean.to_string(),
                r.wd.se.to_string(),
                fmt_opt(r.fit_time.map(|t| t.mean)),
                fmt_opt(r.fit_time.map(|t| t.se)),
                fmt_opt(r.regression_share),
            ]
        })
        .collect();
    io::write_table(
        &dir.join("sweep.csv"),
        &[
            "method", "m", "method_m", "grid_points", "ks_mean", "ks_se", "wd_mean", "wd_se", "time_mean", "time_se",
            "regression_share",
        ],
        &table,
    )
}

fn write_experiment(dir: &Path, report: &ExperimentReport) -> CliResult<()> {
    let ms = |v: Option<MeanSe>| (fmt_opt(v.map(|t| t.mean)), fmt_opt(v.map(|t| t.se)));
    let (t_mean, t_se) = ms(report.fit_time);
    io::write_table(
        &dir.join("summary.csv"),
        &[
            "method", "scenario", "n", "m", "grid_points", "ks_mean", "ks_se", "wd_mean", "wd_se", "time_mean",
            "time_se", "regression_share",
        ],
        &[vec![
            report.variant.clone(),
            report.scenario.clone(),
            report.n.to_string(),
            report.m.to_string(),
            report.grid_points.to_string(),
            report.ks.mean.to_string(),
            report.ks.se.to_string(),
            report.wd.mean.to_string(),
            report.wd.se.to_string(),
            t_mean,
            t_se,
            fmt_opt(report.regression_share),
        ]],
    )?;
    let reps: Vec<Vec<String>> = report
        .per_replication
        .iter()
        .map(|r| {
            let mut row = vec![
                r.index.to_string(),
                r.seed.to_string(),
                r.ks.to_string(),
                r.wd.to_string(),
                fmt_opt(r.timings.map(|t| t.total())),
            ];
            for (lo, hi) in &r.intervals {
                row.push(lo.to_string());
                row.push(hi.to_string());
            }
            row
        })
        .collect();
    let mut header: Vec<String> = ["replication", "seed", "ks", "wd", "fit_time"].map(String::from).to_vec();
    for c in &report.coverage {
        header.push(format!("{} lower", c.estimand));
        header.push(format!("{} upper", c.estimand));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    io::write_table(&dir.join("replications.csv"), &header, &reps)?;
    if !report.coverage.is_empty() {
        let rows: Vec<Vec<String>> = report
            .coverage
            .iter()
            .map(|c| {
                vec![
                    c.estimand.clone(),
                    c.report.truth.to_string(),
                    c.coverage.mean.to_string(),
                    c.coverage.se.to_string(),
                    c.width.mean.to_string(),
                    c.width.se.to_string(),
                ]
            })
            .collect();
        io::write_table(
            &dir.join("coverage.csv"),
            &["estimand", "truth", "coverage_mean", "coverage_se", "width_mean", "width_se"],
            &rows,
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct StudyBody<'a> {
    family: &'a str,
    cells: &'a [StabilityCell],
}

pub fn study(
    ctx: Context,
    family: &str,
    n_values: &str,
    levels: &str,
    out: &Path,
    json: Option<&Path>,
) -> CliResult<()> {
    let scenario = parse_scenario(family)?;
    let n_values: Vec<usize> = io::parse_list("n-values", n_values)?;
    let levels: Vec<f64> = io::parse_list("levels", levels)?;
    let config = ctx.echo_only();
    let cfg = &ctx.cfg;
    let Bandwidth::Fixed(delta_n) = cfg.bandwidth else {
        return Err(CliError::field("delta_n", "the study needs a fixed numeric half-width"));
    };
    let cells = gradient_stability_study(scenario, &n_values, &levels, cfg.replications, cfg.seed, delta_n, cfg.workers)?;

    let mut taus: Vec<f64> = cells.iter().map(|c| c.tau).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let mut header = vec!["n".to_string()];
    header.extend(taus.iter().map(|t| format!("tau={t}")));
    let mut rows = Vec::new();
    let mut ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
    ns.dedup();
    for n in ns {
        let mut row = vec![n.to_string()];
        for &t in &taus {
            let cell = cells.iter().find(|c| c.n == n && c.tau == t);
            row.push(fmt_opt(cell.and_then(|c| c.std_rel_error)));
        }
        rows.push(row);
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    io::write_table(out, &header, &rows)?;
    if let Some(path) = json {
        io::write_json(
            path,
            &Report {
                config: &config,
                body: StudyBody {
                    family: scenario.name(),
                    cells: &cells,
                },
            },
        )?;
    }
    for c in cells.iter().filter(|c| c.successes < c.reps) {
        eprintln!(
            "n = {}, tau = {}: gradient estimated in {} of {} replications",
            c.n, c.tau, c.successes, c.reps
        );
    }
    Ok(())
}

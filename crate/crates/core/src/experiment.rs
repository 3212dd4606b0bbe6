//! Replicated experiments: data generation, fitting, generation at a fixed
//! covariate, distances to a reference sample and, optionally, bootstrap
//! interval coverage. Replication `r` uses `derive_seed(seed, Replication, r)`
//! for everything it draws.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::bootstrap::{bootstrap_ci, BootstrapConfig, Estimand};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluate::{coverage_width, ks_statistic, wasserstein_1d, CoverageReport};
use crate::grid::build_grid;
use crate::metamodel::{FitConfig, FitTimings, FittedProcess, Variant};
use crate::parallel::with_workers;
use crate::rng::{derive_seed, Stream};
use crate::simulate::{
    gen_synthetic, inventory_dataset, inventory_reference, sample_conditional, true_mean, true_quantile,
    true_survival, InventoryConfig, Scenario,
};

/// Synthetic evaluation point `(x1, x2, x3)`.
pub const SYNTHETIC_X_STAR: [f64; 3] = [4.0, -1.0, 3.0];
/// Inventory evaluation point `(s, S, mu)`.
pub const INVENTORY_X_STAR: [f64; 3] = [320.0, 420.0, 330.0];

/// Sample mean with its standard error (`sd / sqrt(N)`, `sd` with
/// denominator `N - 1`; zero when `N = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("mean of an empty list"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        };
        Ok(Self { mean, se })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSettings {
    pub estimands: Vec<Estimand>,
    pub b_count: usize,
    pub k: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub fit: FitConfig,
    pub x_star: Vec<f64>,
    /// Generated observations per replication.
    pub k: usize,
    pub reference_size: usize,
    pub replications: usize,
    pub seed: u64,
    pub workers: usize,
    pub coverage: Option<CoverageSettings>,
    /// Simulator runs used for inventory ground truth in coverage studies.
    pub truth_size: usize,
}

impl ExperimentConfig {
    /// Defaults of the synthetic study: `n = 10^4`, `m = 100`, `K = 10^5`,
    /// reference of `10^5` exact draws.
    pub fn synthetic(scenario: Scenario) -> Self {
        Self {
            scenario,
            n: 10_000,
            fit: FitConfig {
                m: Some(100),
                ..FitConfig::default()
            },
            x_star: SYNTHETIC_X_STAR.to_vec(),
            k: 100_000,
            reference_size: 100_000,
            replications: 100,
            seed: 0,
            workers: 0,
            coverage: None,
            truth_size: 100_000,
        }
    }

    /// Defaults of the inventory study: inventory basis, `m = 300`.
    pub fn inventory() -> Self {
        Self {
            scenario: Scenario::Inventory,
            fit: FitConfig {
                m: Some(300),
                basis: Basis::Inventory,
                ..FitConfig::default()
            },
            x_star: INVENTORY_X_STAR.to_vec(),
            ..Self::synthetic(Scenario::Inventory)
        }
    }

    /// Fills in the scenario-specific defaults.
    pub fn for_scenario(scenario: Scenario) -> Self {
        match scenario {
            Scenario::Inventory => Self::inventory(),
            s => Self::synthetic(s),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 || self.k == 0 || self.reference_size == 0 {
            return Err(Error::domain("replications, K and reference size must all be positive"));
        }
        self.fit.validate(self.n)?;
        if self.x_star.len() != 3 {
            return Err(Error::Shape {
                expected: 3,
                got: self.x_star.len(),
            });
        }
        self.fit.basis.expand(&self.x_star)?;
        if let Some(c) = &self.coverage {
            if c.estimands.is_empty() {
                return Err(Error::domain("coverage study needs at least one estimand"));
            }
            BootstrapConfig {
                fit: self.fit.clone(),
                b_count: c.b_count,
                k: c.k,
                alpha: c.alpha,
                ..BootstrapConfig::default()
            }
            .validate(self.n)?;
        }
        Ok(())
    }
}

/// Training data of one replication.
pub fn scenario_dataset(scenario: Scenario, n: usize, seed: u64) -> Result<Dataset> {
    match scenario {
        Scenario::Synthetic(f) => gen_synthetic(f, n, seed),
        Scenario::Inventory => inventory_dataset(n, seed),
    }
}

/// Ground-truth sample at `x_star`: exact draws for synthetic families,
/// independent simulator runs for the inventory model.
pub fn scenario_reference(scenario: Scenario, x_star: &[f64], k: usize, seed: u64) -> Result<Vec<f64>> {
    match scenario {
        Scenario::Synthetic(f) => sample_conditional(f, x_star, k, seed),
        Scenario::Inventory => {
            let cfg = InventoryConfig::with_policy(x_star[0], x_star[1], x_star[2]);
            inventory_reference(&cfg, k, seed)
        }
    }
}

/// Mean, conditional 0.8-quantile, and survival beyond the true
/// 0.8-quantile.
pub fn default_estimands(scenario: Scenario, x_star: &[f64], truth_size: usize, seed: u64) -> Result<Vec<Estimand>> {
    let q80 = match scenario {
        Scenario::Synthetic(f) => true_quantile(f, 0.8, x_star)?,
        Scenario::Inventory => Estimand::quantile(0.8)?.estimate(&truth_sample(scenario, x_star, truth_size, seed)?)?,
    };
    Ok(vec![Estimand::Mean, Estimand::quantile(0.8)?, Estimand::survival(q80)?])
}

fn truth_sample(scenario: Scenario, x_star: &[f64], truth_size: usize, seed: u64) -> Result<Vec<f64>> {
    // Index far from any replication index.
    scenario_reference(scenario, x_star, truth_size, derive_seed(seed, Stream::Reference, u32::MAX as u64))
}

/// True value of `est` at `x_star`; estimated from a large simulator sample
/// when no closed form exists.
pub fn true_value(scenario: Scenario, est: &Estimand, x_star: &[f64], truth_size: usize, seed: u64) -> Result<f64> {
    match scenario {
        Scenario::Synthetic(f) => match *est {
            Estimand::Mean => true_mean(f, x_star),
            Estimand::Quantile { level } => true_quantile(f, level, x_star),
            Estimand::Survival { threshold } => true_survival(f, threshold, x_star),
        },
        Scenario::Inventory => est.estimate(&truth_sample(scenario, x_star, truth_size, seed)?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub index: usize,
    pub seed: u64,
    pub ks: f64,
    pub wd: f64,
    pub grid_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<FitTimings>,
    /// One `(lower, upper)` per coverage estimand.
    pub intervals: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub estimand: String,
    pub coverage: MeanSe,
    pub width: MeanSe,
    pub report: CoverageReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub variant: String,
    pub n: usize,
    pub m: usize,
    pub grid_points: usize,
    pub k: usize,
    pub reference_size: usize,
    pub replications: usize,
    pub seed: u64,
    pub ks: MeanSe,
    pub wd: MeanSe,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_time: Option<MeanSe>,
    /// Share of fitting time spent in quantile regressions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regression_share: Option<f64>,
    pub coverage: Vec<CoverageRow>,
    pub per_replication: Vec<ReplicationResult>,
}

impl ExperimentReport {
    /// Drops wall-clock measurements so that reports compare byte for byte.
    pub fn strip_timings(&mut self) {
        self.fit_time = None;
        self.regression_share = None;
        for r in &mut self.per_replication {
            r.timings = None;
        }
    }
}

fn run_replication(cfg: &ExperimentConfig, estimands: &[Estimand], r: usize) -> Result<ReplicationResult> {
    let seed = derive_seed(cfg.seed, Stream::Replication, r as u64);
    let data = scenario_dataset(cfg.scenario, cfg.n, seed)?;
    let model = FittedProcess::fit(&data, &cfg.fit)?;
    let generated = model.generate(&cfg.x_star, cfg.k, seed)?;
    let reference = scenario_reference(cfg.scenario, &cfg.x_star, cfg.reference_size, seed)?;
    let mut intervals = Vec::new();
    if let Some(c) = &cfg.coverage {
        let boot = BootstrapConfig {
            fit: cfg.fit.clone(),
            b_count: c.b_count,
            k: c.k,
            alpha: c.alpha,
            seed,
            workers: 0,
            max_retries: 0,
        };
        for est in estimands {
            let ci = bootstrap_ci(&data, &boot, &cfg.x_star, est)?;
            intervals.push((ci.lower, ci.upper));
        }
    }
    Ok(ReplicationResult {
        index: r,
        seed,
        ks: ks_statistic(&generated, &reference)?,
        wd: wasserstein_1d(&generated, &reference)?,
        grid_points: model.meta.regressions,
        timings: Some(model.timings),
        intervals,
    })
}

/// Runs all replications and summarizes them. Aborts on the first failing
/// replication (in index order) with its index.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let estimands = cfg.coverage.as_ref().map(|c| c.estimands.clone()).unwrap_or_default();
    let truths: Vec<f64> = estimands
        .iter()
        .map(|e| true_value(cfg.scenario, e, &cfg.x_star, cfg.truth_size, cfg.seed))
        .collect::<Result<_>>()?;
    let outcomes: Vec<Result<ReplicationResult>> = with_workers(cfg.workers, || {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| run_replication(cfg, &estimands, r))
            .collect()
    })?;
    let mut rows = Vec::with_capacity(cfg.replications);
    for (r, outcome) in outcomes.into_iter().enumerate() {
        rows.push(outcome.map_err(|e| Error::Replicate {
            replicate: r,
            source: Box::new(e),
        })?);
    }
    let pick = |f: &dyn Fn(&ReplicationResult) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    let timings: Vec<FitTimings> = rows.iter().filter_map(|r| r.timings).collect();
    let total: f64 = timings.iter().map(|t| t.total()).sum();
    let regression: f64 = timings.iter().map(|t| t.regression).sum();

    let mut coverage = Vec::new();
    for (j, (est, truth)) in estimands.iter().zip(&truths).enumerate() {
        let intervals: Vec<(f64, f64)> = rows.iter().map(|r| r.intervals[j]).collect();
        let hits: Vec<f64> = intervals
            .iter()
            .map(|(lo, hi)| f64::from(u8::from(*lo <= *truth && *truth <= *hi)))
            .collect();
        let widths: Vec<f64> = intervals.iter().map(|(lo, hi)| hi - lo).collect();
        coverage.push(CoverageRow {
            estimand: est.to_string(),
            coverage: MeanSe::of(&hits)?,
            width: MeanSe::of(&widths)?,
            report: coverage_width(&intervals, *truth)?,
        });
    }

    Ok(ExperimentReport {
        scenario: cfg.scenario.name().to_string(),
        variant: cfg.fit.variant.name().to_string(),
        n: cfg.n,
        m: cfg.fit.resolved_m(cfg.n),
        grid_points: rows[0].grid_points,
        k: cfg.k,
        reference_size: cfg.reference_size,
        replications: cfg.replications,
        seed: cfg.seed,
        ks: MeanSe::of(&pick(&|r| r.ks))?,
        wd: MeanSe::of(&pick(&|r| r.wd))?,
        fit_time: Some(MeanSe::of(&timings.iter().map(|t| t.total()).collect::<Vec<_>>())?),
        regression_share: Some(if total > 0.0 { regression / total } else { 1.0 }),
        coverage,
        per_replication: rows,
    })
}

/// One line of the grid sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    /// The E-QRGMM tail resolution this row is paired with.
    pub m: usize,
    /// Resolution passed to the fitted variant.
    pub variant_m: usize,
    pub grid_points: usize,
    pub ks: MeanSe,
    pub wd: MeanSe,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_time: Option<MeanSe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regression_share: Option<f64>,
}

impl SweepRow {
    fn from_report(report: &ExperimentReport, m: usize, variant_m: usize) -> Self {
        Self {
            variant: report.variant.clone(),
            m,
            variant_m,
            grid_points: report.grid_points,
            ks: report.ks,
            wd: report.wd,
            fit_time: report.fit_time,
            regression_share: report.regression_share,
        }
    }

    pub fn strip_timings(&mut self) {
        self.fit_time = None;
        self.regression_share = None;
    }
}

/// For every `m`, E-QRGMM on the mixed grid `T(m)` and QRGMM on a uniform
/// grid with about as many levels (`m_qrgmm = J`, i.e. `J - 1` levels). Both
/// variants see the same datasets and reference samples.
pub fn grid_sweep(base: &ExperimentConfig, m_values: &[usize]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &m in m_values {
        let grid = build_grid(m, base.fit.c, base.fit.tau_l, base.fit.tau_u)?;
        let mut cfg = base.clone();
        cfg.coverage = None;
        cfg.fit.variant = Variant::Eqrgmm;
        cfg.fit.m = Some(m);
        rows.push(SweepRow::from_report(&run_experiment(&cfg)?, m, m));
        let m_q = grid.len();
        cfg.fit.variant = Variant::Qrgmm;
        cfg.fit.m = Some(m_q);
        rows.push(SweepRow::from_report(&run_experiment(&cfg)?, m, m_q));
    }
    Ok(rows)
}

//! Two-sample distribution distances, interval calibration summaries and the
//! gradient stability study.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::error::{check_level, Error, Result};
use crate::gradient::gradient_vector;
use crate::metamodel::FitTimings;
use crate::parallel::with_workers;
use crate::quantreg::fit_path;
use crate::rng::{derive_seed, Stream};
use crate::simulate::{gen_synthetic, true_coefficient_gradient, Scenario};

fn sorted_nonempty(sample: &[f64], name: &str) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::domain(format!("{name} is empty")));
    }
    if sample.iter().any(|v| v.is_nan()) {
        return Err(Error::domain(format!("{name} contains NaN")));
    }
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Walks the merged breakpoints of two sorted samples, calling
/// `visit(previous_breakpoint, breakpoint, fa, fb)` with the right-continuous
/// ECDF values in force just before `breakpoint`.
fn sweep(a: &[f64], b: &[f64], mut visit: impl FnMut(f64, f64, f64, f64)) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = f64::NEG_INFINITY;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        visit(prev, v, i as f64 / na, j as f64 / nb);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        prev = v;
    }
    visit(prev, f64::INFINITY, 1.0, 1.0);
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_t |F_a(t) - F_b(t)|`.
pub fn ks_statistic(sample_a: &[f64], sample_b: &[f64]) -> Result<f64> {
    let a = sorted_nonempty(sample_a, "first sample")?;
    let b = sorted_nonempty(sample_b, "second sample")?;
    let mut d = 0.0f64;
    // The ECDF difference changes only at breakpoints, so checking the value
    // in force just after each one (i.e. before the next) covers the supremum.
    sweep(&a, &b, |_, _, fa, fb| d = d.max((fa - fb).abs()));
    Ok(d)
}

/// One-dimensional Wasserstein-1 distance, the area between the two ECDFs.
pub fn wasserstein_1d(sample_a: &[f64], sample_b: &[f64]) -> Result<f64> {
    let a = sorted_nonempty(sample_a, "first sample")?;
    let b = sorted_nonempty(sample_b, "second sample")?;
    let mut area = 0.0;
    sweep(&a, &b, |prev, v, fa, fb| {
        if prev.is_finite() && v.is_finite() {
            area += (fa - fb).abs() * (v - prev);
        }
    });
    Ok(area)
}

/// Distances between a generated sample and a reference sample, with the
/// cost of producing the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: f64,
    pub wd: f64,
    pub fit_time_seconds: f64,
    pub timings: FitTimings,
    pub n_generated: usize,
    pub n_reference: usize,
}

impl EvalReport {
    pub fn compare(generated: &[f64], reference: &[f64], timings: FitTimings) -> Result<Self> {
        Ok(Self {
            ks: ks_statistic(generated, reference)?,
            wd: wasserstein_1d(generated, reference)?,
            fit_time_seconds: timings.total(),
            timings,
            n_generated: generated.len(),
            n_reference: reference.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub coverage: f64,
    pub width: f64,
    pub n_replications: usize,
    pub covered: usize,
    pub truth: f64,
}

/// Fraction of intervals containing `truth` and their mean width.
pub fn coverage_width(intervals: &[(f64, f64)], truth: f64) -> Result<CoverageReport> {
    if intervals.is_empty() {
        return Err(Error::domain("no intervals to summarize"));
    }
    let covered = intervals.iter().filter(|(lo, hi)| *lo <= truth && truth <= *hi).count();
    let n = intervals.len();
    Ok(CoverageReport {
        coverage: covered as f64 / n as f64,
        width: intervals.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / n as f64,
        n_replications: n,
        covered,
        truth,
    })
}

/// Spread of the relative gradient error at one `(n, tau)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCell {
    pub n: usize,
    pub tau: f64,
    pub reps: usize,
    /// Replications where the gradient could be estimated.
    pub successes: usize,
    pub mean_rel_error: Option<f64>,
    /// Sample standard deviation (denominator `successes - 1`).
    pub std_rel_error: Option<f64>,
    /// Set when a single observation makes the standard deviation meaningless.
    pub single_observation: bool,
}

/// Relative L1 error `||g_hat - g||_1 / ||g||_1` of the estimated coefficient
/// gradient over `reps` independent datasets, for every `n` and `tau`.
pub fn gradient_stability_study(
    scenario: Scenario,
    n_values: &[usize],
    levels: &[f64],
    reps: usize,
    seed: u64,
    delta_n: f64,
    workers: usize,
) -> Result<Vec<StabilityCell>> {
    let family = scenario.oracle()?;
    if reps == 0 {
        return Err(Error::domain("need at least one replication"));
    }
    if !(delta_n > 0.0 && delta_n.is_finite()) {
        return Err(Error::domain(format!("smoothing half-width must be positive, got {delta_n}")));
    }
    for &tau in levels {
        check_level(tau, "study level")?;
    }
    let mut sorted_levels = levels.to_vec();
    sorted_levels.sort_by(f64::total_cmp);
    sorted_levels.dedup();
    let truths: Vec<[f64; 4]> = sorted_levels
        .iter()
        .map(|&t| true_coefficient_gradient(family, t))
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for &n in n_values {
        let n_seed = derive_seed(seed, Stream::Study, n as u64);
        // errors[r][j]: relative error of replication r at level j.
        let errors: Vec<Vec<Option<f64>>> = with_workers(workers, || {
            (0..reps)
                .into_par_iter()
                .map(|r| -> Result<Vec<Option<f64>>> {
                    let raw = gen_synthetic(family, n, derive_seed(n_seed, Stream::Study, r as u64))?;
                    let design = Basis::Identity.design(&raw)?;
                    let path = fit_path(&design, &sorted_levels)?;
                    Ok(path
                        .betas
                        .iter()
                        .zip(&truths)
                        .map(|(beta, truth)| {
                            gradient_vector(&design, beta, delta_n).ok().map(|g| {
                                let num: f64 = g.g.iter().zip(truth).map(|(u, v)| (u - v).abs()).sum();
                                let den: f64 = truth.iter().map(|v| v.abs()).sum();
                                num / den
                            })
                        })
                        .collect())
                })
                .collect::<Result<Vec<_>>>()
        })??;
        for &tau in levels {
            let j = sorted_levels.iter().position(|&l| l == tau).expect("level present");
            let values: Vec<f64> = errors.iter().filter_map(|row| row[j]).collect();
            let k = values.len();
            let mean = (k > 0).then(|| values.iter().sum::<f64>() / k as f64);
            let std = match (k, mean) {
                (0, _) => None,
                (1, _) => Some(0.0),
                (_, Some(m)) => Some((values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()),
                _ => None,
            };
            cells.push(StabilityCell {
                n,
                tau,
                reps,
                successes: k,
                mean_rel_error: mean,
                std_rel_error: std,
                single_observation: k == 1,
            });
        }
    }
    Ok(cells)
}

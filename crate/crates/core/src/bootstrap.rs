//! Bootstrap percentile confidence intervals for functionals of the
//! conditional distribution at a fixed covariate.
//!
//! Replicate `b` draws its resample and its generated observations from
//! streams keyed by `derive_seed(seed, Replicate, b)`, so each replicate is a
//! pure function of the master seed and its index.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_level, Error, Result};
use crate::metamodel::{FitConfig, FittedProcess};
use crate::parallel::with_workers;
use crate::rng::{derive_seed, stream, Stream};

/// Most retries allowed for a replicate whose resample cannot be fitted.
pub const MAX_RETRIES: u32 = 3;

/// Empirical quantile of sorted values: linear interpolation between order
/// statistics at 1-based position `(k - 1) q + 1`.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::domain("empirical quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!("quantile probability must lie in [0, 1], got {q}")));
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 == sorted.len() {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// A scalar functional of the conditional distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimand {
    Mean,
    Quantile { level: f64 },
    Survival { threshold: f64 },
}

impl Estimand {
    pub fn quantile(level: f64) -> Result<Self> {
        check_level(level, "estimand quantile level")?;
        Ok(Estimand::Quantile { level })
    }

    pub fn survival(threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::domain(format!("survival threshold must be finite, got {threshold}")));
        }
        Ok(Estimand::Survival { threshold })
    }

    /// Plug-in estimate from a sample: arithmetic mean, empirical quantile,
    /// or the fraction strictly above the threshold.
    pub fn estimate(&self, sample: &[f64]) -> Result<f64> {
        if sample.is_empty() {
            return Err(Error::domain("cannot estimate from an empty sample"));
        }
        match *self {
            Estimand::Mean => Ok(sample.iter().sum::<f64>() / sample.len() as f64),
            Estimand::Quantile { level } => empirical_quantile(&sorted_copy(sample), level),
            Estimand::Survival { threshold } => {
                Ok(sample.iter().filter(|&&v| v > threshold).count() as f64 / sample.len() as f64)
            }
        }
    }
}

impl FromStr for Estimand {
    type Err = Error;

    /// `mean`, `quantile:<level>` or `survival:<threshold>`.
    fn from_str(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec == "mean" {
            return Ok(Estimand::Mean);
        }
        let number = |text: &str, what: &str| {
            text.trim()
                .parse::<f64>()
                .map_err(|_| Error::domain(format!("invalid {what} '{text}' in estimand '{spec}'")))
        };
        match spec.split_once(':') {
            Some(("quantile", v)) => Estimand::quantile(number(v, "quantile level")?),
            Some(("survival", v)) => Estimand::survival(number(v, "survival threshold")?),
            _ => Err(Error::domain(format!(
                "unknown estimand '{spec}' (expected mean, quantile:<level> or survival:<threshold>)"
            ))),
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimand::Mean => write!(f, "mean"),
            Estimand::Quantile { level } => write!(f, "quantile:{level}"),
            Estimand::Survival { threshold } => write!(f, "survival:{threshold}"),
        }
    }
}

/// Convenience wrapper for [`Estimand::estimate`].
pub fn estimate(est: &Estimand, sample: &[f64]) -> Result<f64> {
    est.estimate(sample)
}

/// `n` rows drawn uniformly with replacement from the resampling stream of
/// `seed`.
pub fn resample(data: &Dataset, seed: u64) -> Dataset {
    let n = data.n();
    let mut rng = stream(seed, Stream::Resample, 0);
    let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    data.select_rows(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub fit: FitConfig,
    /// Number of bootstrap replicates `B`.
    pub b_count: usize,
    /// Observations generated per replicate `K`.
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Worker threads; `0` uses all available cores.
    pub workers: usize,
    /// Retries with a fresh resample when a replicate fails to fit.
    pub max_retries: u32,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            b_count: 100,
            k: 100_000,
            alpha: 0.1,
            seed: 0,
            workers: 0,
            max_retries: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.b_count < 2 {
            return Err(Error::domain(format!("need at least 2 replicates, got {}", self.b_count)));
        }
        if self.k == 0 {
            return Err(Error::domain("need at least one generated observation per replicate"));
        }
        if self.max_retries > MAX_RETRIES {
            return Err(Error::domain(format!(
                "at most {MAX_RETRIES} retries per replicate, got {}",
                self.max_retries
            )));
        }
        self.fit.validate(n)
    }
}

/// A failed replicate attempt that was retried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryEvent {
    pub replicate: usize,
    pub attempt: u32,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub b_count: usize,
    /// One estimate per replicate, in replicate order.
    pub estimates: Vec<f64>,
    pub seed: u64,
    pub retries: Vec<RetryEvent>,
}

impl ConfidenceInterval {
    /// Percentile interval of a vector of replicate estimates.
    pub fn from_estimates(estimates: Vec<f64>, alpha: f64, seed: u64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let sorted = sorted_copy(&estimates);
        Ok(Self {
            lower: empirical_quantile(&sorted, alpha / 2.0)?,
            upper: empirical_quantile(&sorted, 1.0 - alpha / 2.0)?,
            alpha,
            b_count: estimates.len(),
            estimates,
            seed,
            retries: Vec::new(),
        })
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Estimate from one replicate: resample, refit, generate `k` observations at
/// `x_star` and apply the estimand. `replicate_seed` keys both streams.
pub fn bootstrap_replicate(
    raw: &Dataset,
    fit: &FitConfig,
    x_star: &[f64],
    est: &Estimand,
    k: usize,
    replicate_seed: u64,
) -> Result<f64> {
    let sample = resample(raw, replicate_seed);
    let model = FittedProcess::fit(&sample, fit)?;
    let generated = model.generate(x_star, k, replicate_seed)?;
    est.estimate(&generated)
}

fn run_replicate(
    raw: &Dataset,
    cfg: &BootstrapConfig,
    x_star: &[f64],
    est: &Estimand,
    b: usize,
) -> (Result<f64>, Vec<RetryEvent>) {
    let base = derive_seed(cfg.seed, Stream::Replicate, b as u64);
    let mut retries = Vec::new();
    let mut attempt = 0;
    loop {
        let seed = if attempt == 0 {
            base
        } else {
            derive_seed(base, Stream::Replicate, attempt as u64)
        };
        match bootstrap_replicate(raw, &cfg.fit, x_star, est, cfg.k, seed) {
            Ok(v) => return (Ok(v), retries),
            Err(e) if attempt < cfg.max_retries && e.is_fit_failure() => {
                attempt += 1;
                retries.push(RetryEvent {
                    replicate: b,
                    attempt,
                    cause: e.to_string(),
                });
            }
            Err(e) => {
                return (
                    Err(Error::Replicate {
                        replicate: b,
                        source: Box::new(e),
                    }),
                    retries,
                )
            }
        }
    }
}

/// Percentile bootstrap interval for `est` at `x_star` (raw covariates).
///
/// Replicates run in parallel but results are assembled in replicate order,
/// so the interval is identical for every worker count. A failing replicate
/// aborts the whole computation with its index, unless retries are enabled
/// and the failure is a fitting failure, in which case the replicate is
/// redrawn from a fresh stream and the retry is recorded.
pub fn bootstrap_ci(raw: &Dataset, cfg: &BootstrapConfig, x_star: &[f64], est: &Estimand) -> Result<ConfidenceInterval> {
    cfg.validate(raw.n())?;
    if x_star.len() != raw.p() {
        return Err(Error::Shape {
            expected: raw.p(),
            got: x_star.len(),
        });
    }
    let outcomes: Vec<(Result<f64>, Vec<RetryEvent>)> = with_workers(cfg.workers, || {
        (0..cfg.b_count)
            .into_par_iter()
            .map(|b| run_replicate(raw, cfg, x_star, est, b))
            .collect()
    })?;
    let mut estimates = Vec::with_capacity(cfg.b_count);
    let mut retries = Vec::new();
    for (outcome, log) in outcomes {
        retries.extend(log);
        estimates.push(outcome?);
    }
    let mut ci = ConfidenceInterval::from_estimates(estimates, cfg.alpha, cfg.seed)?;
    ci.retries = retries;
    Ok(ci)
}

/// Interval together with the wall time it took.
pub fn timed_bootstrap_ci(
    raw: &Dataset,
    cfg: &BootstrapConfig,
    x_star: &[f64],
    est: &Estimand,
) -> Result<(ConfidenceInterval, f64)> {
    let start = Instant::now();
    let ci = bootstrap_ci(raw, cfg, x_star, est)?;
    Ok((ci, start.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Basis;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn estimand_examples() {
        assert_eq!(Estimand::Mean.estimate(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(Estimand::quantile(0.5).unwrap().estimate(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
        assert_eq!(Estimand::survival(2.0).unwrap().estimate(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.5);
        assert!(Estimand::Mean.estimate(&[]).is_err());
    }

    #[test]
    fn estimand_grammar() {
        assert_eq!("mean".parse::<Estimand>().unwrap(), Estimand::Mean);
        assert_eq!("quantile:0.8".parse::<Estimand>().unwrap(), Estimand::Quantile { level: 0.8 });
        assert_eq!("survival:12.3".parse::<Estimand>().unwrap(), Estimand::Survival { threshold: 12.3 });
        assert!("quantile:1.5".parse::<Estimand>().is_err());
        assert!("quantile:abc".parse::<Estimand>().is_err());
        assert!("median".parse::<Estimand>().is_err());
        for e in [Estimand::Mean, Estimand::Quantile { level: 0.25 }, Estimand::Survival { threshold: -3.5 }] {
            assert_eq!(e.to_string().parse::<Estimand>().unwrap(), e);
        }
    }

    #[test]
    fn empirical_quantile_rule() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&v, 1.0).unwrap(), 4.0);
        assert_eq!(empirical_quantile(&v, 0.5).unwrap(), 2.5);
        assert!((empirical_quantile(&v, 0.1).unwrap() - 1.3).abs() < 1e-12);
        assert_eq!(empirical_quantile(&[7.0], 0.3).unwrap(), 7.0);
    }

    #[test]
    fn single_row_resample() {
        let data = Dataset::new(vec![2.0], vec![3.0], 1).unwrap();
        let r = resample(&data, 9);
        assert_eq!(r, data);
    }

    #[test]
    fn resample_is_deterministic_and_keeps_pairs() {
        let data = Dataset::new((0..50).map(f64::from).collect(), (0..50).map(|i| 2.0 * i as f64).collect(), 1).unwrap();
        let a = resample(&data, 4);
        assert_eq!(a, resample(&data, 4));
        assert_ne!(a, resample(&data, 5));
        for (x, y) in a.rows().zip(a.responses()) {
            assert_eq!(*y, 2.0 * x[0]);
        }
    }

    #[test]
    fn resample_inclusion_fraction() {
        let n = 10_000;
        let data = Dataset::new((0..n).map(|i| i as f64).collect(), vec![0.0; n], 1).unwrap();
        let r = resample(&data, 77);
        let mut seen = vec![false; n];
        for x in r.rows() {
            seen[x[0] as usize] = true;
        }
        let frac = seen.iter().filter(|&&s| s).count() as f64 / n as f64;
        assert!((frac - (1.0 - (-1.0f64).exp())).abs() < 0.02, "{frac}");
    }

    #[test]
    fn percentile_bounds_on_hundred_estimates() {
        let estimates: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let ci = ConfidenceInterval::from_estimates(estimates, 0.1, 0).unwrap();
        // Sorted values are 0..99; positions 99 * 0.05 + 1 and 99 * 0.95 + 1.
        assert!((ci.lower - 4.95).abs() < 1e-12);
        assert!((ci.upper - 94.05).abs() < 1e-12);
    }

    fn small_config(b_count: usize, k: usize, seed: u64, workers: usize) -> BootstrapConfig {
        BootstrapConfig {
            fit: FitConfig {
                m: Some(10),
                ..FitConfig::default()
            },
            b_count,
            k,
            alpha: 0.1,
            seed,
            workers,
            max_retries: 0,
        }
    }

    fn linear_data(n: usize, seed: u64) -> Dataset {
        let mut rng = stream(seed, Stream::Synthetic, 0);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let y = x.iter().map(|v| 1.0 + 2.0 * v + rng.random::<f64>()).collect();
        Dataset::new(x, y, 1).unwrap()
    }

    #[test]
    fn constant_responses_give_degenerate_interval() {
        let data = Dataset::new(vec![1.0; 40], vec![5.0; 40], 1).unwrap();
        let mut cfg = small_config(5, 1000, 3, 1);
        cfg.fit.basis = Basis::Raw;
        let ci = bootstrap_ci(&data, &cfg, &[1.0], &Estimand::Mean).unwrap();
        assert_eq!((ci.lower, ci.upper), (5.0, 5.0));
    }

    #[test]
    fn interval_is_identical_across_worker_counts() {
        let data = linear_data(300, 1);
        let one = bootstrap_ci(&data, &small_config(8, 500, 42, 1), &[0.5], &Estimand::Mean).unwrap();
        let three = bootstrap_ci(&data, &small_config(8, 500, 42, 3), &[0.5], &Estimand::Mean).unwrap();
        assert_eq!(one, three);
        assert!(one.lower <= one.upper);
        let other = bootstrap_ci(&data, &small_config(8, 500, 43, 1), &[0.5], &Estimand::Mean).unwrap();
        assert_ne!(one.estimates, other.estimates);
    }

    #[test]
    fn permuted_replicate_seeds_give_same_interval() {
        let data = linear_data(200, 2);
        let cfg = small_config(6, 300, 8, 1);
        let seeds: Vec<u64> = (0..6).map(|b| derive_seed(cfg.seed, Stream::Replicate, b)).collect();
        let forward: Vec<f64> = seeds
            .iter()
            .map(|&s| bootstrap_replicate(&data, &cfg.fit, &[0.5], &Estimand::Mean, cfg.k, s).unwrap())
            .collect();
        let mut backward: Vec<f64> = seeds
            .iter()
            .rev()
            .map(|&s| bootstrap_replicate(&data, &cfg.fit, &[0.5], &Estimand::Mean, cfg.k, s).unwrap())
            .collect();
        backward.reverse();
        assert_eq!(forward, backward);
        let ci = bootstrap_ci(&data, &cfg, &[0.5], &Estimand::Mean).unwrap();
        assert_eq!(ci.estimates, forward);
        let shuffled: Vec<f64> = [3, 0, 5, 1, 4, 2].iter().map(|&i| forward[i]).collect();
        let alt = ConfidenceInterval::from_estimates(shuffled, cfg.alpha, cfg.seed).unwrap();
        assert_eq!((alt.lower, alt.upper), (ci.lower, ci.upper));
    }

    #[test]
    fn failing_replicate_reports_index() {
        // A binary covariate that is almost always zero makes some resamples
        // rank deficient.
        let mut x = vec![0.0; 30];
        x[7] = 1.0;
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let data = Dataset::new(x, y, 1).unwrap();
        let cfg = small_config(20, 10, 1, 1);
        match bootstrap_ci(&data, &cfg, &[0.0], &Estimand::Mean) {
            Err(Error::Replicate { replicate, source }) => {
                assert!(replicate < 20);
                assert!(matches!(source.root_cause(), Error::DegenerateDesign { .. }), "{source}");
            }
            other => panic!("expected a replicate failure, got {other:?}"),
        }
    }

    #[test]
    fn retries_are_logged_and_capped() {
        let mut x = vec![0.0; 30];
        x[7] = 1.0;
        x[19] = 1.0;
        x[25] = 1.0;
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let data = Dataset::new(x, y, 1).unwrap();
        let mut cfg = small_config(10, 10, 1, 1);
        cfg.max_retries = 3;
        match bootstrap_ci(&data, &cfg, &[0.0], &Estimand::Mean) {
            Ok(ci) => {
                assert!(!ci.retries.is_empty());
                assert!(ci.retries.iter().all(|r| r.attempt <= 3));
            }
            Err(Error::Replicate { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
        cfg.max_retries = 4;
        assert!(cfg.validate(30).is_err());
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let data = linear_data(50, 3);
        let mut cfg = small_config(1, 10, 0, 1);
        assert!(bootstrap_ci(&data, &cfg, &[0.5], &Estimand::Mean).is_err());
        cfg.b_count = 5;
        cfg.alpha = 1.0;
        assert!(bootstrap_ci(&data, &cfg, &[0.5], &Estimand::Mean).is_err());
        cfg.alpha = 0.1;
        assert!(matches!(
            bootstrap_ci(&data, &cfg, &[0.5, 1.0], &Estimand::Mean),
            Err(Error::Shape { .. })
        ));
    }

    proptest! {
        #[test]
        fn percentile_consistency_and_alpha_monotonicity(
            estimates in proptest::collection::vec(-100.0f64..100.0, 2..200),
            a1 in 0.01f64..0.5,
            a2 in 0.01f64..0.5,
        ) {
            let (small, large) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let wide = ConfidenceInterval::from_estimates(estimates.clone(), small, 0).unwrap();
            let narrow = ConfidenceInterval::from_estimates(estimates.clone(), large, 0).unwrap();
            prop_assert!(wide.lower <= narrow.lower && narrow.upper <= wide.upper);
            prop_assert!(wide.lower <= wide.upper);
            let sorted = sorted_copy(&wide.estimates);
            prop_assert_eq!(wide.lower, empirical_quantile(&sorted, small / 2.0).unwrap());
            prop_assert_eq!(wide.upper, empirical_quantile(&sorted, 1.0 - small / 2.0).unwrap());
        }
    }
}

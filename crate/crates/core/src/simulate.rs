//! Data-generating processes: location-scale synthetic families with known
//! quantile functions, and a periodic-review (s, S) inventory simulator.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};

use crate::data::Dataset;
use crate::error::{check_level, Error, Result};
use crate::rng::{stream, Stream};

/// Conditional law `Y | x = mu(x) + sigma(x) * E` for a base variable `E`.
///
/// Raw covariates are `(x1, x2, x3)` with `x1 ~ U(0, 10)`, `x2 ~ U(-5, 5)`,
/// `x3 ~ U(0, 5)`; `mu(x) = 5 + x1 + 2 x2 + 0.5 x3` and
/// `sigma(x) = 1 + 0.1 x1 + 0.2 x2 + 0.05 x3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticFamily {
    /// `E ~ N(0, 1)`.
    Normal,
    /// `E = |Z|`, so `mu(x)` is the left end of the support.
    Halfnormal,
    /// `E ~ t_nu`; `sigma(x)` is a scale multiplier, not the standard deviation.
    StudentT { nu: f64 },
}

/// A data source for experiments: one of the synthetic families or the
/// inventory simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scenario {
    Synthetic(SyntheticFamily),
    Inventory,
}

impl Scenario {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "inventory" => Ok(Scenario::Inventory),
            other => SyntheticFamily::parse(other).map(Scenario::Synthetic),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Synthetic(f) => f.name(),
            Scenario::Inventory => "inventory",
        }
    }

    /// The synthetic family, for computations that need an analytic oracle.
    pub fn oracle(&self) -> Result<SyntheticFamily> {
        match self {
            Scenario::Synthetic(f) => Ok(*f),
            Scenario::Inventory => Err(Error::UnsupportedOracle(
                "the inventory simulator has no closed-form quantile function".into(),
            )),
        }
    }
}

/// Coefficients of `mu(x)` on `(1, x1, x2, x3)`.
pub const LOCATION: [f64; 4] = [5.0, 1.0, 2.0, 0.5];
/// Coefficients of `sigma(x)` on `(1, x1, x2, x3)`.
pub const SCALE: [f64; 4] = [1.0, 0.1, 0.2, 0.05];

impl SyntheticFamily {
    pub fn student_t() -> Self {
        SyntheticFamily::StudentT { nu: 5.0 }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "normal" => Ok(SyntheticFamily::Normal),
            "halfnormal" => Ok(SyntheticFamily::Halfnormal),
            "t" | "student_t" | "studentt" => Ok(Self::student_t()),
            other => Err(Error::domain(format!(
                "unknown synthetic family '{other}' (expected normal, halfnormal or t)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SyntheticFamily::Normal => "normal",
            SyntheticFamily::Halfnormal => "halfnormal",
            SyntheticFamily::StudentT { .. } => "t",
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            SyntheticFamily::StudentT { nu } if !(*nu >= 3.0) => Err(Error::domain(format!(
                "Student t degrees of freedom must be at least 3, got {nu}"
            ))),
            _ => Ok(()),
        }
    }

    fn student(nu: f64) -> StudentsT {
        StudentsT::new(0.0, 1.0, nu).expect("validated degrees of freedom")
    }

    /// Quantile of the base variable `E`.
    pub fn base_quantile(&self, tau: f64) -> f64 {
        let normal = Normal::standard();
        match *self {
            SyntheticFamily::Normal => normal.inverse_cdf(tau),
            SyntheticFamily::Halfnormal => normal.inverse_cdf(0.5 * (1.0 + tau)),
            SyntheticFamily::StudentT { nu } => Self::student(nu).inverse_cdf(tau),
        }
    }

    /// Density of the base variable `E` at `e`.
    pub fn base_density(&self, e: f64) -> f64 {
        let normal = Normal::standard();
        match *self {
            SyntheticFamily::Normal => normal.pdf(e),
            SyntheticFamily::Halfnormal if e < 0.0 => 0.0,
            SyntheticFamily::Halfnormal => 2.0 * normal.pdf(e),
            SyntheticFamily::StudentT { nu } => Self::student(nu).pdf(e),
        }
    }

    pub fn base_cdf(&self, e: f64) -> f64 {
        let normal = Normal::standard();
        match *self {
            SyntheticFamily::Normal => normal.cdf(e),
            SyntheticFamily::Halfnormal if e <= 0.0 => 0.0,
            SyntheticFamily::Halfnormal => 2.0 * normal.cdf(e) - 1.0,
            SyntheticFamily::StudentT { nu } => Self::student(nu).cdf(e),
        }
    }

    pub fn base_mean(&self) -> f64 {
        match self {
            SyntheticFamily::Halfnormal => (2.0 / std::f64::consts::PI).sqrt(),
            _ => 0.0,
        }
    }

    fn sample_base<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SyntheticFamily::Normal => rng.sample(StandardNormal),
            SyntheticFamily::Halfnormal => rng.sample::<f64, _>(StandardNormal).abs(),
            SyntheticFamily::StudentT { nu } => StudentT::new(nu).expect("validated").sample(rng),
        }
    }
}

fn raw_covariates(x: &[f64]) -> Result<[f64; 3]> {
    match x {
        &[a, b, c] => Ok([a, b, c]),
        _ => Err(Error::Shape {
            expected: 3,
            got: x.len(),
        }),
    }
}

pub fn location(x: &[f64; 3]) -> f64 {
    LOCATION[0] + LOCATION[1] * x[0] + LOCATION[2] * x[1] + LOCATION[3] * x[2]
}

pub fn scale(x: &[f64; 3]) -> f64 {
    SCALE[0] + SCALE[1] * x[0] + SCALE[2] * x[1] + SCALE[3] * x[2]
}

fn location_scale(x: &[f64]) -> Result<(f64, f64)> {
    let x = raw_covariates(x)?;
    let sigma = scale(&x);
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("scale sigma(x) = {sigma} is not positive at x = {x:?}")));
    }
    Ok((location(&x), sigma))
}

/// `n` rows of raw covariates `(x1, x2, x3)` with responses drawn from the
/// family's conditional law.
pub fn gen_synthetic(family: SyntheticFamily, n: usize, seed: u64) -> Result<Dataset> {
    family.check()?;
    if n == 0 {
        return Err(Error::domain("sample size must be at least 1"));
    }
    let mut rng = stream(seed, Stream::Synthetic, 0);
    let mut covariates = Vec::with_capacity(3 * n);
    let mut responses = Vec::with_capacity(n);
    for _ in 0..n {
        let x = [
            rng.random_range(0.0..10.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(0.0..5.0),
        ];
        let (mu, sigma) = location_scale(&x)?;
        covariates.extend_from_slice(&x);
        responses.push(mu + sigma * family.sample_base(&mut rng));
    }
    Dataset::new_unchecked_rank(covariates, responses, 3)
}

/// `k` exact draws from the conditional law at raw covariate `x`.
pub fn sample_conditional(family: SyntheticFamily, x: &[f64], k: usize, seed: u64) -> Result<Vec<f64>> {
    family.check()?;
    let (mu, sigma) = location_scale(x)?;
    let mut rng = stream(seed, Stream::Reference, 0);
    Ok((0..k).map(|_| mu + sigma * family.sample_base(&mut rng)).collect())
}

/// `Q(tau | x) = mu(x) + sigma(x) * q_E(tau)`.
pub fn true_quantile(family: SyntheticFamily, tau: f64, x: &[f64]) -> Result<f64> {
    family.check()?;
    check_level(tau, "quantile level")?;
    let (mu, sigma) = location_scale(x)?;
    Ok(mu + sigma * family.base_quantile(tau))
}

pub fn true_mean(family: SyntheticFamily, x: &[f64]) -> Result<f64> {
    family.check()?;
    let (mu, sigma) = location_scale(x)?;
    Ok(mu + sigma * family.base_mean())
}

/// `P(Y > threshold | x)`.
pub fn true_survival(family: SyntheticFamily, threshold: f64, x: &[f64]) -> Result<f64> {
    family.check()?;
    let (mu, sigma) = location_scale(x)?;
    Ok(1.0 - family.base_cdf((threshold - mu) / sigma))
}

/// Conditional density of `Y` at its `tau`-quantile.
pub fn true_quantile_density(family: SyntheticFamily, tau: f64, x: &[f64]) -> Result<f64> {
    family.check()?;
    check_level(tau, "quantile level")?;
    let (_, sigma) = location_scale(x)?;
    Ok(family.base_density(family.base_quantile(tau)) / sigma)
}

/// `d beta(tau) / d tau` on the design `(1, x1, x2, x3)`.
pub fn true_coefficient_gradient(family: SyntheticFamily, tau: f64) -> Result<[f64; 4]> {
    family.check()?;
    check_level(tau, "quantile level")?;
    let slope = 1.0 / family.base_density(family.base_quantile(tau));
    Ok(SCALE.map(|s| s * slope))
}

/// `(1, s + S, S - s, 1 / (S - s), mu)`.
pub fn basis_expand_inventory(s: f64, big_s: f64, mu: f64) -> Result<[f64; 5]> {
    if !(big_s > s) {
        return Err(Error::domain(format!(
            "order-up-to level S = {big_s} must exceed the reorder point s = {s}"
        )));
    }
    Ok([1.0, s + big_s, big_s - s, 1.0 / (big_s - s), mu])
}

/// Parameters of the (s, S) inventory simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InventoryConfig {
    /// Reorder point.
    pub s: f64,
    /// Order-up-to level.
    pub big_s: f64,
    /// Mean of the exponential per-period demand.
    pub mu: f64,
    /// Mean of the Poisson lead time, in periods.
    pub theta: f64,
    /// Holding cost per unit of positive on-hand stock per period.
    pub holding: f64,
    pub fixed_cost: f64,
    pub unit_cost: f64,
    pub horizon: usize,
    pub initial_inventory: f64,
}

impl Default for InventoryConfig {
    fn default() -> Self {
        Self {
            s: 320.0,
            big_s: 420.0,
            mu: 330.0,
            theta: 6.0,
            holding: 0.5,
            fixed_cost: 36.0,
            unit_cost: 1.0,
            horizon: 1000,
            initial_inventory: 1000.0,
        }
    }
}

/// Covariate ranges of the inventory dataset (inclusive integer bounds).
pub const INVENTORY_S_RANGE: (i64, i64) = (270, 340);
pub const INVENTORY_BIG_S_RANGE: (i64, i64) = (380, 450);
pub const INVENTORY_MU_RANGE: (i64, i64) = (310, 340);

impl InventoryConfig {
    pub fn with_policy(s: f64, big_s: f64, mu: f64) -> Self {
        Self {
            s,
            big_s,
            mu,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s < self.big_s) {
            return Err(Error::domain(format!("need s < S, got s = {}, S = {}", self.s, self.big_s)));
        }
        if !(self.mu > 0.0) {
            return Err(Error::domain(format!("mean demand must be positive, got {}", self.mu)));
        }
        if !(self.theta >= 0.0) {
            return Err(Error::domain(format!("mean lead time must be nonnegative, got {}", self.theta)));
        }
        if self.horizon == 0 {
            return Err(Error::domain("horizon must be at least one period"));
        }
        Ok(())
    }
}

/// Per-run trace used by tests that audit the flow balance.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InventoryTally {
    pub average_cost: f64,
    pub units_ordered: f64,
    pub units_demanded: f64,
    pub orders: usize,
}

fn poisson_inverse<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut p = (-theta).exp();
    let mut cdf = p;
    let mut k = 0usize;
    while u > cdf && k < 10_000 {
        k += 1;
        p *= theta / k as f64;
        cdf += p;
        if p == 0.0 {
            break;
        }
    }
    k
}

/// Runs one trajectory and returns its tally.
///
/// Each period: due orders arrive; the inventory position (on hand plus on
/// order, backlog counted as negative on hand) is reviewed and, if below `s`,
/// an order up to `S` is placed with a Poisson lead time (lead time zero
/// arrives immediately); then demand is served or backlogged; finally holding
/// cost is charged on positive on-hand stock.
pub fn inventory_run<R: Rng + ?Sized>(cfg: &InventoryConfig, rng: &mut R) -> Result<InventoryTally> {
    cfg.validate()?;
    let mut on_hand = cfg.initial_inventory;
    let mut pipeline: Vec<(usize, f64)> = Vec::new();
    let mut cost = 0.0;
    let mut tally = InventoryTally::default();
    for t in 0..cfg.horizon {
        pipeline.retain(|&(due, qty)| {
            if due <= t {
                on_hand += qty;
                false
            } else {
                true
            }
        });
        let position = on_hand + pipeline.iter().map(|&(_, q)| q).sum::<f64>();
        if position < cfg.s {
            let qty = cfg.big_s - position;
            let lead = poisson_inverse(cfg.theta, rng);
            cost += cfg.fixed_cost + cfg.unit_cost * qty;
            tally.units_ordered += qty;
            tally.orders += 1;
            if lead == 0 {
                on_hand += qty;
            } else {
                pipeline.push((t + lead, qty));
            }
        }
        let u: f64 = rng.random();
        let demand = -cfg.mu * (1.0 - u).ln();
        tally.units_demanded += demand;
        on_hand -= demand;
        if on_hand > 0.0 {
            cost += cfg.holding * on_hand;
        }
    }
    tally.average_cost = cost / cfg.horizon as f64;
    Ok(tally)
}

/// Average cost per period of one run.
pub fn inventory_simulate(cfg: &InventoryConfig, seed: u64) -> Result<f64> {
    inventory_run(cfg, &mut stream(seed, Stream::Reference, 0)).map(|t| t.average_cost)
}

/// `k` independent runs at a fixed policy; run `r` uses reference stream `r`,
/// so run 0 equals [`inventory_simulate`] with the same seed.
pub fn inventory_reference(cfg: &InventoryConfig, k: usize, seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    (0..k as u64)
        .into_par_iter()
        .map(|r| inventory_run(cfg, &mut stream(seed, Stream::Reference, r)).map(|t| t.average_cost))
        .collect()
}

/// `n` integer-valued `(s, S, mu)` points drawn uniformly from the covariate
/// ranges, each simulated once with its own row stream. Returns raw
/// covariates `(s, S, mu)` and average costs.
pub fn inventory_dataset(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::domain("sample size must be at least 1"));
    }
    let mut rng = stream(seed, Stream::InventoryCovariates, 0);
    let points: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            [
                rng.random_range(INVENTORY_S_RANGE.0..=INVENTORY_S_RANGE.1) as f64,
                rng.random_range(INVENTORY_BIG_S_RANGE.0..=INVENTORY_BIG_S_RANGE.1) as f64,
                rng.random_range(INVENTORY_MU_RANGE.0..=INVENTORY_MU_RANGE.1) as f64,
            ]
        })
        .collect();
    let responses: Vec<f64> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let cfg = InventoryConfig::with_policy(x[0], x[1], x[2]);
            inventory_run(&cfg, &mut stream(seed, Stream::InventoryRow, i as u64)).map(|t| t.average_cost)
        })
        .collect::<Result<_>>()?;
    Dataset::new_unchecked_rank(points.concat(), responses, 3)
}

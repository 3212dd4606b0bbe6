//! Pathwise estimates of the quantile-process derivative.
//!
//! Differentiating the population first-order condition of quantile
//! regression gives `d beta / d tau = Lambda(tau)^{-1} E[x]`, where
//! `Lambda(tau)` is the density-weighted second moment of the covariates at
//! zero residual. It is estimated with an indicator window of half-width
//! `delta_n`:
//!
//! ```text
//! Lambda_hat = 1 / (2 delta_n n) * sum_i x_i x_i^T 1{|y_i - x_i^T beta_hat| < delta_n}
//! g          = Lambda_hat^{-1} x_bar,        D_hat(tau | x) = x^T g
//! ```
//!
//! Only central grid levels get gradients; tail windows are too sparse.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{dot, Dataset};
use crate::error::{Error, Result};
use crate::grid::GridDesign;
use crate::linalg::{spd_solve, weighted_gram};
use crate::quantreg::QuantileCoefficients;

/// Relative size of the fallback ridge, times `trace / p`.
pub const RIDGE_FACTOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaEstimate {
    pub matrix: DMatrix<f64>,
    /// Observations strictly inside the window.
    pub window_count: usize,
}

/// Windowed second-moment matrix at coefficients `beta`.
pub fn estimate_lambda(data: &Dataset, beta: &[f64], delta_n: f64) -> Result<LambdaEstimate> {
    check_bandwidth(delta_n)?;
    if beta.len() != data.p() || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::domain("coefficient vector must be finite with one entry per covariate"));
    }
    let indicator: Vec<f64> = data
        .rows()
        .zip(data.responses())
        .map(|(x, y)| {
            let r = y - dot(x, beta);
            if -delta_n < r && r < delta_n {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let window_count = indicator.iter().filter(|&&v| v > 0.0).count();
    let scale = 1.0 / (2.0 * delta_n * data.n() as f64);
    let matrix = weighted_gram(data, Some(&indicator)) * scale;
    Ok(LambdaEstimate {
        matrix,
        window_count,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub g: Vec<f64>,
    pub window_count: usize,
}

/// `g = Lambda_hat^{-1} x_bar`, so that `D_hat(tau | x) = x^T g`.
pub fn gradient_vector(data: &Dataset, beta: &[f64], delta_n: f64) -> Result<GradientVector> {
    let lambda = estimate_lambda(data, beta, delta_n)?;
    let p = data.p();
    if lambda.window_count < p {
        return Err(Error::DegenerateWindow {
            count: lambda.window_count,
            required: p,
        });
    }
    let xbar = DVector::from_vec(data.column_means());
    let solved = spd_solve(&lambda.matrix, &xbar).or_else(|| {
        let eps = RIDGE_FACTOR * lambda.matrix.trace() / p as f64;
        let mut ridged = lambda.matrix.clone();
        for i in 0..p {
            ridged[(i, i)] += eps;
        }
        spd_solve(&ridged, &xbar)
    });
    match solved {
        Some(g) => Ok(GradientVector {
            g: g.iter().copied().collect(),
            window_count: lambda.window_count,
        }),
        None => Err(Error::DegenerateWindow {
            count: lambda.window_count,
            required: p,
        }),
    }
}

/// Gradient coefficient vectors at the central grid levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCoefficients {
    pub levels: Vec<f64>,
    /// Row `j` is `Lambda_hat(levels[j])^{-1} x_bar`.
    pub g: Vec<Vec<f64>>,
    pub delta_n: f64,
    pub window_counts: Vec<usize>,
}

impl GradientCoefficients {
    pub fn empty(delta_n: f64) -> Self {
        Self {
            levels: Vec::new(),
            g: Vec::new(),
            delta_n,
            window_counts: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// One gradient vector per central level of `grid`.
pub fn gradient_table(
    data: &Dataset,
    coeffs: &QuantileCoefficients,
    grid: &GridDesign,
    delta_n: f64,
) -> Result<GradientCoefficients> {
    check_bandwidth(delta_n)?;
    let mut table = GradientCoefficients::empty(delta_n);
    for tau in grid.central_levels() {
        let beta = coeffs.beta_at(tau).ok_or_else(|| {
            Error::domain(format!("no quantile coefficients fitted at central level {tau}"))
        })?;
        let gv = gradient_vector(data, beta, delta_n).map_err(|e| e.at_level(tau))?;
        table.levels.push(tau);
        table.g.push(gv.g);
        table.window_counts.push(gv.window_count);
    }
    Ok(table)
}

/// How the smoothing half-width is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum Bandwidth {
    /// A fixed half-width on the response scale.
    Fixed(f64),
    /// `1.06 * sd(residuals) * n^(-1/5)`, with residuals taken at the central
    /// level closest to the median.
    Residual,
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Fixed(0.1)
    }
}

impl Bandwidth {
    pub fn resolve(&self, data: &Dataset, coeffs: &QuantileCoefficients, grid: &GridDesign) -> Result<f64> {
        match *self {
            Bandwidth::Fixed(d) => {
                check_bandwidth(d)?;
                Ok(d)
            }
            Bandwidth::Residual => {
                let central = grid.central_levels();
                let tau = central
                    .iter()
                    .copied()
                    .min_by(|a, b| (a - 0.5).abs().total_cmp(&(b - 0.5).abs()))
                    .ok_or_else(|| Error::domain("grid has no central levels"))?;
                let beta = coeffs
                    .beta_at(tau)
                    .ok_or_else(|| Error::domain(format!("no coefficients at level {tau}")))?;
                let resid: Vec<f64> = data
                    .rows()
                    .zip(data.responses())
                    .map(|(x, y)| y - dot(x, beta))
                    .collect();
                let n = resid.len() as f64;
                let mean = resid.iter().sum::<f64>() / n;
                let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                let delta = 1.06 * var.sqrt() * n.powf(-0.2);
                if delta > 0.0 {
                    Ok(delta)
                } else {
                    Err(Error::domain("residual bandwidth rule produced a zero half-width"))
                }
            }
        }
    }
}

fn check_bandwidth(delta_n: f64) -> Result<()> {
    if delta_n > 0.0 && delta_n.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("smoothing half-width must be positive, got {delta_n}")))
    }
}

//! Linear quantile regression.
//!
//! The pinball-loss problem
//!
//! ```text
//! min_beta  sum_i rho_tau(y_i - x_i^T beta),   rho_tau(u) = (tau - 1{u <= 0}) u
//! ```
//!
//! is solved through its bounded linear-programming dual
//!
//! ```text
//! min  -y^T a   s.t.  X^T a = (1 - tau) X^T 1,   0 <= a <= 1
//! ```
//!
//! with a Mehrotra predictor-corrector interior-point method (the
//! Frisch-Newton scheme). The regression coefficients are the negated
//! equality multipliers. Each Newton step needs one `p x p` factorization of
//! `X^T Theta X`, so a fit costs `O(n p^2)` per iteration.
//!
//! Large problems are first reduced: observations whose residual under a
//! preliminary fit lies far from the target quantile have their dual
//! variable fixed at the bound their sign implies, and only the remaining
//! band of observations enters the interior-point iterations. The reduced
//! solution is accepted only if every fixed observation keeps its sign, which
//! makes it optimal for the full problem; misclassified observations are
//! returned to the band and the reduced problem is solved again.
//!
//! When the optimum is not unique the interior-point iterates approach the
//! analytic center of the optimal face. After convergence the solution is
//! snapped to the basic solution through the `p` smallest residuals whenever
//! that basic solution is at least as good in objective; on a flat face
//! either point is a valid minimizer.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{dot, Dataset};
use crate::error::{check_level, Error, Result};
use crate::linalg::{find_dependent_column, spd_solve, weighted_gram, SpdFactor};

/// `(tau - 1{u <= 0}) * u`.
pub fn pinball_loss(u: f64, tau: f64) -> Result<f64> {
    check_level(tau, "quantile level")?;
    if !u.is_finite() {
        return Err(Error::domain(format!("residual must be finite, got {u}")));
    }
    Ok(rho(u, tau))
}

#[inline]
fn rho(u: f64, tau: f64) -> f64 {
    if u <= 0.0 {
        (tau - 1.0) * u
    } else {
        tau * u
    }
}

/// Total pinball loss of `beta` on `data`.
pub fn objective(data: &Dataset, beta: &[f64], tau: f64) -> f64 {
    data.rows()
        .zip(data.responses())
        .map(|(x, y)| rho(y - dot(x, beta), tau))
        .sum()
}

/// Quantile coefficient vectors along a grid of levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileCoefficients {
    pub levels: Vec<f64>,
    /// Row `j` is `beta(levels[j])`.
    pub betas: Vec<Vec<f64>>,
}

impl QuantileCoefficients {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn beta_at(&self, level: f64) -> Option<&[f64]> {
        self.levels
            .iter()
            .position(|&l| l == level)
            .map(|j| self.betas[j].as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once the duality gap is below `tolerance * (1 + |objective|)`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Fraction of the distance to the boundary taken per step.
    pub step_fraction: f64,
    /// Solve a reduced problem on a band of observations when `n` is large.
    pub preprocess: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 200,
            step_fraction: 0.99995,
            preprocess: true,
        }
    }
}

/// Outcome of a single-level fit.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFit {
    pub beta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub gap: f64,
}

/// Interior-point quantile regression solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuantileSolver {
    pub options: SolverOptions,
}

impl QuantileSolver {
    pub fn new(options: SolverOptions) -> Self {
        Self { options }
    }

    /// Fits a single level, checking the design rank first.
    pub fn fit(&self, data: &Dataset, tau: f64) -> Result<QuantileFit> {
        check_level(tau, "quantile level")?;
        check_rank(data)?;
        self.solve(data, tau, None)
    }

    /// Fits every level in increasing order. Each level starts from the
    /// previous level's coefficients, extrapolated when two are available.
    pub fn fit_path(&self, data: &Dataset, levels: &[f64]) -> Result<QuantileCoefficients> {
        check_levels(levels)?;
        check_rank(data)?;
        let mut betas: Vec<Vec<f64>> = Vec::with_capacity(levels.len());
        for (j, &tau) in levels.iter().enumerate() {
            // Linear extrapolation from the two previous levels.
            let start = match j {
                0 => None,
                1 => Some(betas[0].clone()),
                _ => {
                    let t = (tau - levels[j - 1]) / (levels[j - 1] - levels[j - 2]);
                    Some(
                        betas[j - 1]
                            .iter()
                            .zip(&betas[j - 2])
                            .map(|(b1, b0)| b1 + t * (b1 - b0))
                            .collect(),
                    )
                }
            };
            let fit = self
                .solve(data, tau, start.as_deref())
                .map_err(|e| e.at_level(tau))?;
            betas.push(fit.beta);
        }
        Ok(QuantileCoefficients {
            levels: levels.to_vec(),
            betas,
        })
    }

    /// Solves without the rank check. `start` seeds the dual iterate.
    pub fn solve(&self, data: &Dataset, tau: f64, start: Option<&[f64]>) -> Result<QuantileFit> {
        let start = start.filter(|b| b.len() == data.p() && b.iter().all(|v| v.is_finite()));
        if self.options.preprocess {
            if let Some(fit) = self.solve_reduced(data, tau, start) {
                return Ok(fit);
            }
        }
        let beta0 = match start {
            Some(b) => b.to_vec(),
            None => least_squares(data)?,
        };
        let mut b = vec![0.0; data.p()];
        for row in data.rows() {
            for (bk, xk) in b.iter_mut().zip(row) {
                *bk += (1.0 - tau) * xk;
            }
        }
        let mut fit = self.interior_point(data, tau, &b, &Fixed::none(data.p()), &beta0)?;
        polish(data, tau, &mut fit);
        Ok(fit)
    }

    /// Band reduction. Returns `None` when the problem is too small to
    /// benefit or the reduction could not be verified; the caller then
    /// solves the full problem.
    fn solve_reduced(&self, data: &Dataset, tau: f64, start: Option<&[f64]>) -> Option<QuantileFit> {
        let n = data.n();
        let p = data.p();
        let mut band = (((p as f64).sqrt() * (n as f64).powf(2.0 / 3.0)).ceil() as usize).max(5 * p);
        if 2 * band >= n {
            return None;
        }
        let mut guess = match start {
            Some(b) => b.to_vec(),
            None => {
                // Systematic subsample, no randomness involved.
                let rows: Vec<usize> = (0..band).map(|k| k * n / band).collect();
                let sub = data.select_rows(&rows);
                let solver = QuantileSolver::new(SolverOptions {
                    preprocess: false,
                    ..self.options
                });
                solver.solve(&sub, tau, None).ok()?.beta
            }
        };
        let y = data.responses();
        while 2 * band < n {
            let residuals: Vec<f64> = data.rows().zip(y).map(|(x, yi)| yi - dot(x, &guess)).collect();
            let centre = ((tau * n as f64).round() as usize).min(n);
            let hi = (centre.saturating_sub(band / 2) + band).min(n);
            let lo = hi - band;
            let mut scratch = residuals.clone();
            let low_cut = *scratch.select_nth_unstable_by(lo, f64::total_cmp).1;
            let high_cut = *scratch.select_nth_unstable_by(hi - 1, f64::total_cmp).1;
            // -1 fixed below (dual at 0), 1 fixed above (dual at 1), 0 free.
            let mut side: Vec<i8> = residuals
                .iter()
                .map(|&r| {
                    if r < low_cut {
                        -1
                    } else if r > high_cut {
                        1
                    } else {
                        0
                    }
                })
                .collect();

            for _ in 0..3 {
                let Some(fit) = self.solve_band(data, tau, &side, &guess) else {
                    break;
                };
                let mut bad = Vec::new();
                for (i, (x, yi)) in data.rows().zip(y).enumerate() {
                    let r = yi - dot(x, &fit.beta);
                    if (side[i] < 0 && r > 0.0) || (side[i] > 0 && r < 0.0) {
                        bad.push(i);
                    }
                }
                guess = fit.beta.clone();
                if bad.is_empty() {
                    let mut fit = fit;
                    fit.objective = objective(data, &fit.beta, tau);
                    polish(data, tau, &mut fit);
                    return Some(fit);
                }
                if bad.len() > band / 10 {
                    break;
                }
                for i in bad {
                    side[i] = 0;
                }
            }
            band *= 2;
        }
        None
    }

    fn solve_band(&self, data: &Dataset, tau: f64, side: &[i8], start: &[f64]) -> Option<QuantileFit> {
        let p = data.p();
        let y = data.responses();
        let free = side.iter().filter(|&&v| v == 0).count();
        let mut covariates = Vec::with_capacity(free * p);
        let mut responses = Vec::with_capacity(free);
        let mut b = vec![0.0; p];
        let mut fixed = Fixed::none(p);
        for (i, x) in data.rows().enumerate() {
            for (bk, xk) in b.iter_mut().zip(x) {
                *bk += (1.0 - tau) * xk;
            }
            let weight = match side[i] {
                0 => {
                    covariates.extend_from_slice(x);
                    responses.push(y[i]);
                    continue;
                }
                s if s > 0 => {
                    for (bk, xk) in b.iter_mut().zip(x) {
                        *bk -= xk;
                    }
                    tau
                }
                _ => tau - 1.0,
            };
            fixed.constant += weight * y[i];
            for (c, xk) in fixed.linear.iter_mut().zip(x) {
                *c += weight * xk;
            }
        }
        let reduced = Dataset::new(covariates, responses, p).ok()?;
        // A misclassified band makes the reduced problem infeasible, which
        // shows up as stalled iterations; give up early and widen the band.
        let solver = QuantileSolver::new(SolverOptions {
            max_iterations: self.options.max_iterations.min(BAND_ITERATIONS),
            ..self.options
        });
        solver.interior_point(&reduced, tau, &b, &fixed, start).ok()
    }

    /// Interior-point iterations for `min -y^T a` subject to `X^T a = b`,
    /// `0 <= a <= 1`. `fixed` adds the pinball loss of observations held
    /// out of the problem to the reported objective.
    fn interior_point(&self, data: &Dataset, tau: f64, b: &[f64], fixed: &Fixed, beta0: &[f64]) -> Result<QuantileFit> {
        let opts = self.options;
        let n = data.n();
        let x = data.covariates();
        let y = data.responses();
        let p = data.p();
        let beta0 = beta0.to_vec();

        // Primal: a in [0, 1] with slack s = 1 - a. Dual: y_lp = -beta with
        // reduced costs z (for a >= 0) and w (for a <= 1).
        let mut a = primal_start(data, tau, b);
        let mut s: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        let mut ylp: Vec<f64> = beta0.iter().map(|v| -v).collect();
        let mut z = vec![0.0; n];
        let mut w = vec![0.0; n];
        // Dual start from the residuals of the starting coefficients, pushed
        // off the boundary by a tenth of their mean magnitude.
        let residuals: Vec<f64> = data.rows().zip(y).map(|(xi, yi)| yi - dot(xi, &beta0)).collect();
        let shift = (0.1 * residuals.iter().map(|r| r.abs()).sum::<f64>() / n as f64).max(1e-8);
        for i in 0..n {
            z[i] = (-residuals[i]).max(0.0) + shift;
            w[i] = residuals[i].max(0.0) + shift;
        }

        let b_norm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let y_norm = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let mut theta = vec![0.0; n];
        let mut q = vec![0.0; n];
        let mut rd = vec![0.0; n];
        let mut dx_aff = vec![0.0; n];
        let mut dz_aff = vec![0.0; n];
        let mut dw_aff = vec![0.0; n];
        let mut r_xz = vec![0.0; n];
        let mut r_sw = vec![0.0; n];
        let mut dx = vec![0.0; n];
        let mut dz = vec![0.0; n];
        let mut dw = vec![0.0; n];

        let mut gap = f64::INFINITY;
        for iteration in 0..=opts.max_iterations {
            // Residuals of the equality constraints.
            let mut rp = b.to_vec();
            for (i, row) in data.rows().enumerate() {
                for (r, xk) in rp.iter_mut().zip(row) {
                    *r -= xk * a[i];
                }
            }
            let mut rd_norm = 0.0f64;
            for i in 0..n {
                let xi = &x[i * p..(i + 1) * p];
                rd[i] = -y[i] - dot(xi, &ylp) - z[i] + w[i];
                rd_norm = rd_norm.max(rd[i].abs());
            }
            let rp_norm = rp.iter().fold(0.0f64, |m, v| m.max(v.abs()));

            gap = dot(&a, &z) + dot(&s, &w);
            let beta: Vec<f64> = ylp.iter().map(|v| -v).collect();
            let obj = objective(data, &beta, tau) + fixed.constant - dot(&fixed.linear, &beta);
            if gap <= opts.tolerance * (1.0 + obj.abs())
                && rp_norm <= 1e-9 * (1.0 + b_norm)
                && rd_norm <= 1e-9 * (1.0 + y_norm)
            {
                return Ok(QuantileFit {
                    beta,
                    objective: obj,
                    iterations: iteration,
                    gap,
                });
            }
            if iteration == opts.max_iterations || !gap.is_finite() {
                break;
            }

            for i in 0..n {
                theta[i] = 1.0 / (z[i] / a[i] + w[i] / s[i]);
            }
            let factor = match SpdFactor::new(&weighted_gram(data, Some(&theta))) {
                Some(f) => f,
                None => break,
            };

            // Predictor (affine scaling) direction.
            for i in 0..n {
                r_xz[i] = -a[i] * z[i];
                r_sw[i] = -s[i] * w[i];
            }
            newton_direction(
                data, &factor, &theta, &rp, &rd, &a, &s, &z, &w, &r_xz, &r_sw, &mut q, &mut dx_aff,
                &mut dz_aff, &mut dw_aff,
            );
            let (ap, ad) = step_lengths(&a, &s, &z, &w, &dx_aff, &dz_aff, &dw_aff, 1.0);
            let mut mu_aff = 0.0;
            for i in 0..n {
                mu_aff += (a[i] + ap * dx_aff[i]) * (z[i] + ad * dz_aff[i])
                    + (s[i] - ap * dx_aff[i]) * (w[i] + ad * dw_aff[i]);
            }
            let sigma = (mu_aff / gap).clamp(0.0, 1.0).powi(3);
            let mu = sigma * gap / (2 * n) as f64;

            // Corrector with second-order terms.
            for i in 0..n {
                r_xz[i] = mu - a[i] * z[i] - dx_aff[i] * dz_aff[i];
                r_sw[i] = mu - s[i] * w[i] + dx_aff[i] * dw_aff[i];
            }
            let dy = newton_direction(
                data, &factor, &theta, &rp, &rd, &a, &s, &z, &w, &r_xz, &r_sw, &mut q, &mut dx,
                &mut dz, &mut dw,
            );
            let (ap, ad) = step_lengths(&a, &s, &z, &w, &dx, &dz, &dw, opts.step_fraction);
            for i in 0..n {
                a[i] += ap * dx[i];
                s[i] -= ap * dx[i];
                z[i] += ad * dz[i];
                w[i] += ad * dw[i];
            }
            for (v, d) in ylp.iter_mut().zip(dy.iter()) {
                *v += ad * d;
            }
        }
        Err(Error::Convergence {
            iterations: opts.max_iterations,
            gap,
        })
    }
}

const BAND_ITERATIONS: usize = 60;

/// Primal starting point: `(1 - tau) 1` corrected toward `X^T a = b` by a
/// least-squares step, kept strictly inside the box.
fn primal_start(data: &Dataset, tau: f64, b: &[f64]) -> Vec<f64> {
    let n = data.n();
    let mut a = vec![1.0 - tau; n];
    let mut c = DVector::from_column_slice(b);
    for row in data.rows() {
        for (ck, xk) in c.iter_mut().zip(row) {
            *ck -= (1.0 - tau) * xk;
        }
    }
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if c.amax() <= 1e-12 * scale {
        return a;
    }
    let Some(u) = spd_solve(&weighted_gram(data, None), &c) else {
        return a;
    };
    let lo = 0.5 * tau.min(1.0 - tau);
    for (ai, row) in a.iter_mut().zip(data.rows()) {
        let step: f64 = row.iter().zip(u.iter()).map(|(x, v)| x * v).sum();
        *ai = (*ai + step).clamp(lo, 1.0 - lo);
    }
    a
}

/// Pinball loss of observations removed from the problem, as an affine
/// function `constant - linear^T beta`.
struct Fixed {
    constant: f64,
    linear: Vec<f64>,
}

impl Fixed {
    fn none(p: usize) -> Self {
        Self {
            constant: 0.0,
            linear: vec![0.0; p],
        }
    }
}

/// Solves one Newton system and writes `dx`, `dz`, `dw`; returns `dy`.
#[allow(clippy::too_many_arguments)]
fn newton_direction(
    data: &Dataset,
    factor: &SpdFactor,
    theta: &[f64],
    rp: &[f64],
    rd: &[f64],
    a: &[f64],
    s: &[f64],
    z: &[f64],
    w: &[f64],
    r_xz: &[f64],
    r_sw: &[f64],
    q: &mut [f64],
    dx: &mut [f64],
    dz: &mut [f64],
    dw: &mut [f64],
) -> DVector<f64> {
    let p = data.p();
    let mut rhs = DVector::from_column_slice(rp);
    for (i, row) in data.rows().enumerate() {
        q[i] = r_xz[i] / a[i] - r_sw[i] / s[i] - rd[i];
        let tq = theta[i] * q[i];
        for k in 0..p {
            rhs[k] -= row[k] * tq;
        }
    }
    let dy = factor.solve(&rhs);
    for (i, row) in data.rows().enumerate() {
        let xdy: f64 = row.iter().zip(dy.iter()).map(|(u, v)| u * v).sum();
        dx[i] = theta[i] * (xdy + q[i]);
        dz[i] = (r_xz[i] - z[i] * dx[i]) / a[i];
        dw[i] = (r_sw[i] + w[i] * dx[i]) / s[i];
    }
    dy
}

/// Largest steps keeping `(a, s)` and `(z, w)` nonnegative, scaled by
/// `fraction` and capped at one.
#[allow(clippy::too_many_arguments)]
fn step_lengths(
    a: &[f64],
    s: &[f64],
    z: &[f64],
    w: &[f64],
    dx: &[f64],
    dz: &[f64],
    dw: &[f64],
    fraction: f64,
) -> (f64, f64) {
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    for i in 0..a.len() {
        if dx[i] < 0.0 {
            primal = primal.min(-a[i] / dx[i]);
        } else if dx[i] > 0.0 {
            primal = primal.min(s[i] / dx[i]);
        }
        if dz[i] < 0.0 {
            dual = dual.min(-z[i] / dz[i]);
        }
        if dw[i] < 0.0 {
            dual = dual.min(-w[i] / dw[i]);
        }
    }
    ((fraction * primal).min(1.0), (fraction * dual).min(1.0))
}

/// Replaces the interior solution by the basic solution through the `p`
/// smallest absolute residuals when that is no worse in objective.
fn polish(data: &Dataset, tau: f64, fit: &mut QuantileFit) {
    let p = data.p();
    let mut order: Vec<(f64, usize)> = data
        .rows()
        .zip(data.responses())
        .enumerate()
        .map(|(i, (x, y))| ((y - dot(x, &fit.beta)).abs(), i))
        .collect();
    if order.len() > p {
        order.select_nth_unstable_by(p - 1, |u, v| u.0.total_cmp(&v.0));
    }
    let basis = &order[..p];
    let xb = DMatrix::from_fn(p, p, |r, c| data.row(basis[r].1)[c]);
    let yb = DVector::from_iterator(p, basis.iter().map(|&(_, i)| data.responses()[i]));
    let Some(beta) = xb.lu().solve(&yb) else {
        return;
    };
    if beta.iter().any(|v| !v.is_finite()) {
        return;
    }
    let beta: Vec<f64> = beta.iter().copied().collect();
    let obj = objective(data, &beta, tau);
    if obj <= fit.objective {
        fit.beta = beta;
        fit.objective = obj;
    }
}

/// Ordinary least squares coefficients.
pub fn least_squares(data: &Dataset) -> Result<Vec<f64>> {
    let gram = weighted_gram(data, None);
    let mut xty = DVector::zeros(data.p());
    for (row, y) in data.rows().zip(data.responses()) {
        for (k, v) in row.iter().enumerate() {
            xty[k] += v * y;
        }
    }
    spd_solve(&gram, &xty)
        .map(|b| b.iter().copied().collect())
        .ok_or_else(|| Error::DegenerateDesign {
            column: find_dependent_column(&gram).unwrap_or(0),
        })
}

/// Rejects designs without full column rank.
pub fn check_rank(data: &Dataset) -> Result<()> {
    match find_dependent_column(&weighted_gram(data, None)) {
        Some(column) => Err(Error::DegenerateDesign { column }),
        None => Ok(()),
    }
}

fn check_levels(levels: &[f64]) -> Result<()> {
    for &l in levels {
        check_level(l, "quantile level")?;
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("quantile levels must be strictly increasing"));
    }
    Ok(())
}

/// `beta(tau)` with default solver settings.
pub fn fit_quantile(data: &Dataset, tau: f64) -> Result<Vec<f64>> {
    QuantileSolver::default().fit(data, tau).map(|f| f.beta)
}

/// Coefficients at every level of a strictly increasing grid.
pub fn fit_path(data: &Dataset, levels: &[f64]) -> Result<QuantileCoefficients> {
    QuantileSolver::default().fit_path(data, levels)
}

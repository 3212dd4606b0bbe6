//! Interpolation of the estimated quantile process at a fixed covariate.
//!
//! Outside the central region the process is piecewise linear with constant
//! plateaus beyond the first and last nodes. Inside `[tau_l, tau_u]` it is a
//! cubic Hermite interpolant of node values and estimated derivatives. The
//! linear branch also passes through the two boundary nodes, so the branches
//! meet continuously at `tau_l` and `tau_u`.
//!
//! No monotone rearrangement is applied: estimated derivatives can be
//! negative and the resulting curve may cross at finite sample sizes. The one
//! exception is a segment whose end values agree to rounding: it is
//! evaluated as a straight line, since a quantile function that takes the
//! same value at both ends of an interval is constant on it.

use crate::error::{Error, Result};

/// Relative difference below which two adjacent node values count as equal.
pub const FLAT_TOLERANCE: f64 = 1e-10;

/// Cubic Hermite basis `(h00, h10, h01, h11)` at `xi` in `[0, 1]`.
pub fn hermite_basis(xi: f64) -> Result<[f64; 4]> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::domain(format!("Hermite coordinate must lie in [0, 1], got {xi}")));
    }
    Ok(hermite(xi))
}

#[inline]
fn hermite(xi: f64) -> [f64; 4] {
    let xi2 = xi * xi;
    let xi3 = xi2 * xi;
    [
        2.0 * xi3 - 3.0 * xi2 + 1.0,
        xi3 - 2.0 * xi2 + xi,
        -2.0 * xi3 + 3.0 * xi2,
        xi3 - xi2,
    ]
}

/// Cubic Hermite value on `[tau_j, tau_j1]`.
pub fn eval_cubic(tau: f64, qj: f64, qj1: f64, dj: f64, dj1: f64, tau_j: f64, tau_j1: f64) -> f64 {
    let width = tau_j1 - tau_j;
    let [h00, h10, h01, h11] = hermite((tau - tau_j) / width);
    h00 * qj + h10 * width * dj + h01 * qj1 + h11 * width * dj1
}

/// Piecewise-linear interpolation with flat extrapolation. `levels` must be
/// strictly increasing and nonempty.
pub fn eval_linear(tau: f64, levels: &[f64], values: &[f64]) -> f64 {
    let k = levels.partition_point(|&l| l <= tau);
    if k == 0 {
        return values[0];
    }
    let j = k - 1;
    if j + 1 == levels.len() || tau == levels[j] {
        return values[j];
    }
    let t = (tau - levels[j]) / (levels[j + 1] - levels[j]);
    values[j] + t * (values[j + 1] - values[j])
}

/// Node values (and optionally derivatives) of the process at one covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeData {
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
    pub derivs: Option<Vec<f64>>,
}

impl NodeData {
    pub fn new(levels: Vec<f64>, values: Vec<f64>, derivs: Option<Vec<f64>>) -> Result<Self> {
        if levels.is_empty() || levels.len() != values.len() {
            return Err(Error::domain("node levels and values must be nonempty and of equal length"));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("node levels must be strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("node values must be finite"));
        }
        if let Some(d) = &derivs {
            if d.len() != levels.len() || d.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain("node derivatives must be finite, one per level"));
            }
        }
        Ok(Self {
            levels,
            values,
            derivs,
        })
    }

    pub fn eval_linear(&self, tau: f64) -> f64 {
        eval_linear(tau, &self.levels, &self.values)
    }

    /// Cubic Hermite interpolation between the bracketing nodes; flat outside
    /// the node range. Requires derivatives.
    pub fn eval_hermite(&self, tau: f64) -> f64 {
        let derivs = self
            .derivs
            .as_deref()
            .expect("cubic evaluation needs node derivatives");
        let levels = &self.levels;
        let k = levels.partition_point(|&l| l <= tau);
        if k == 0 {
            return self.values[0];
        }
        let j = k - 1;
        if j + 1 == levels.len() || tau == levels[j] {
            return self.values[j];
        }
        let (q0, q1) = (self.values[j], self.values[j + 1]);
        if (q1 - q0).abs() <= FLAT_TOLERANCE * q0.abs().max(q1.abs()).max(1.0) {
            let t = (tau - levels[j]) / (levels[j + 1] - levels[j]);
            return q0 + t * (q1 - q0);
        }
        eval_cubic(tau, q0, q1, derivs[j], derivs[j + 1], levels[j], levels[j + 1])
    }
}

/// The full interpolated quantile curve `tau -> Q_hat(tau | x)` at one
/// covariate value.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessCurve {
    linear: NodeData,
    central: Option<(NodeData, f64, f64)>,
}

impl ProcessCurve {
    /// Linear interpolation over all nodes.
    pub fn linear(nodes: NodeData) -> Self {
        Self {
            linear: nodes,
            central: None,
        }
    }

    /// Mixed curve: `central` carries the nodes in `[tau_l, tau_u]` with
    /// derivatives, `tails` the remaining nodes.
    pub fn mixed(tails: NodeData, central: NodeData) -> Result<Self> {
        if central.derivs.is_none() || central.levels.len() < 2 {
            return Err(Error::domain("central region needs at least two nodes with derivatives"));
        }
        let tau_l = central.levels[0];
        let tau_u = *central.levels.last().expect("nonempty");
        let n = central.levels.len();
        let mut pairs: Vec<(f64, f64)> = tails.levels.iter().copied().zip(tails.values.iter().copied()).collect();
        pairs.push((tau_l, central.values[0]));
        pairs.push((tau_u, central.values[n - 1]));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        let (levels, values) = pairs.into_iter().unzip();
        let linear = NodeData::new(levels, values, None)?;
        Ok(Self {
            linear,
            central: Some((central, tau_l, tau_u)),
        })
    }

    pub fn eval(&self, tau: f64) -> f64 {
        match &self.central {
            Some((nodes, lo, hi)) if tau >= *lo && tau <= *hi => nodes.eval_hermite(tau),
            _ => self.linear.eval_linear(tau),
        }
    }

    pub fn central_region(&self) -> Option<(f64, f64)> {
        self.central.as_ref().map(|(_, lo, hi)| (*lo, *hi))
    }
}

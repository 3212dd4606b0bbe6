//! Quantile-level grids.
//!
//! The mixed design keeps the uniform `1/m` spacing in the tails and places
//! only `m' + 1` equally spaced levels on the central region
//! `[tau_l, tau_u]`, with `m' = ceil(c * m^(2/5))`. The central levels are
//! where gradients are estimated and cubic Hermite interpolation is used.
//!
//! With very small `m` every `j/m` may fall inside the central region; the
//! tails are then empty and the generator plateaus at the boundary node
//! values outside `[tau_l, tau_u]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Levels closer than this are treated as the same level.
pub const MERGE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDesign {
    pub m: usize,
    pub c: f64,
    pub tau_l: f64,
    pub tau_u: f64,
    pub m_prime: usize,
    pub levels: Vec<f64>,
    pub central_mask: Vec<bool>,
}

/// `ceil(c * m^(2/5))`.
pub fn central_intervals(m: usize, c: f64) -> usize {
    (c * (m as f64).powf(0.4)).ceil() as usize
}

/// Builds the mixed tail/central grid.
pub fn build_grid(m: usize, c: f64, tau_l: f64, tau_u: f64) -> Result<GridDesign> {
    if m < 2 {
        return Err(Error::domain(format!("grid resolution m must be at least 2, got {m}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::domain(format!("central density constant c must be positive, got {c}")));
    }
    if !(tau_l > 0.0 && tau_l < tau_u && tau_u < 1.0) {
        return Err(Error::domain(format!(
            "central region requires 0 < tau_l < tau_u < 1, got [{tau_l}, {tau_u}]"
        )));
    }
    let m_prime = central_intervals(m, c).max(1);

    let mut tagged: Vec<(f64, bool)> = Vec::with_capacity(m + m_prime);
    for j in 1..m {
        let tau = j as f64 / m as f64;
        if tau < tau_l || tau > tau_u {
            tagged.push((tau, false));
        }
    }
    let width = tau_u - tau_l;
    for k in 0..=m_prime {
        let tau = if k == m_prime {
            tau_u
        } else {
            tau_l + k as f64 * width / m_prime as f64
        };
        tagged.push((tau, true));
    }
    tagged.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut levels: Vec<f64> = Vec::with_capacity(tagged.len());
    let mut central_mask: Vec<bool> = Vec::with_capacity(tagged.len());
    for (tau, central) in tagged {
        match levels.last() {
            Some(&last) if tau - last < MERGE_TOLERANCE => {
                let j = levels.len() - 1;
                if central && !central_mask[j] {
                    levels[j] = tau;
                    central_mask[j] = true;
                }
            }
            _ => {
                levels.push(tau);
                central_mask.push(central);
            }
        }
    }

    Ok(GridDesign {
        m,
        c,
        tau_l,
        tau_u,
        m_prime,
        levels,
        central_mask,
    })
}

/// The uniform grid `{j/m : j = 1..m-1}` used by the linear-only baseline.
pub fn uniform_levels(m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::domain(format!("grid resolution m must be at least 2, got {m}")));
    }
    Ok((1..m).map(|j| j as f64 / m as f64).collect())
}

impl GridDesign {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn central_levels(&self) -> Vec<f64> {
        self.select(true)
    }

    pub fn tail_levels(&self) -> Vec<f64> {
        self.select(false)
    }

    fn select(&self, central: bool) -> Vec<f64> {
        self.levels
            .iter()
            .zip(&self.central_mask)
            .filter(|(_, &c)| c == central)
            .map(|(&l, _)| l)
            .collect()
    }
}

/// Default tail resolution: `sqrt(n)` rounded to the nearest integer, at least 2.
pub fn default_m(n: usize) -> usize {
    ((n as f64).sqrt().round() as usize).max(2)
}

//! Maps raw covariates to regression design rows.
//!
//! Raw covariate vectors never carry the intercept; every basis that needs one
//! adds it.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::simulate::basis_expand_inventory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `(x_1, ..., x_p) -> (1, x_1, ..., x_p)`.
    Identity,
    /// `(s, S, mu) -> (1, s + S, S - s, 1 / (S - s), mu)`.
    Inventory,
    /// Covariates are used verbatim; the caller supplies the full design.
    Raw,
}

impl Basis {
    pub fn id(&self) -> &'static str {
        match self {
            Basis::Identity => "identity",
            Basis::Inventory => "inventory",
            Basis::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Basis::Identity),
            "inventory" => Ok(Basis::Inventory),
            "raw" => Ok(Basis::Raw),
            other => Err(Error::domain(format!(
                "unknown basis '{other}' (expected identity, inventory or raw)"
            ))),
        }
    }

    /// Design dimension for a raw input of dimension `raw_dim`.
    pub fn design_dim(&self, raw_dim: usize) -> Result<usize> {
        match self {
            Basis::Identity => Ok(raw_dim + 1),
            Basis::Inventory if raw_dim == 3 => Ok(5),
            Basis::Inventory => Err(Error::Shape {
                expected: 3,
                got: raw_dim,
            }),
            Basis::Raw => Ok(raw_dim),
        }
    }

    pub fn expand(&self, raw: &[f64]) -> Result<Vec<f64>> {
        match self {
            Basis::Identity => {
                let mut row = Vec::with_capacity(raw.len() + 1);
                row.push(1.0);
                row.extend_from_slice(raw);
                Ok(row)
            }
            Basis::Inventory => match raw {
                &[s, big_s, mu] => Ok(basis_expand_inventory(s, big_s, mu)?.to_vec()),
                _ => Err(Error::Shape {
                    expected: 3,
                    got: raw.len(),
                }),
            },
            Basis::Raw => Ok(raw.to_vec()),
        }
    }

    /// Applies [`Basis::expand`] to every row.
    pub fn design(&self, raw: &Dataset) -> Result<Dataset> {
        let p = self.design_dim(raw.p())?;
        let mut covariates = Vec::with_capacity(raw.n() * p);
        for row in raw.rows() {
            covariates.extend(self.expand(row)?);
        }
        Dataset::new(covariates, raw.responses().to_vec(), p)
    }
}

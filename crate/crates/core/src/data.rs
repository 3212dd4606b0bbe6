//! Covariate/response tables.
//!
//! A [`Dataset`] is used both for raw covariates (as read from CSV) and for
//! design matrices after a basis expansion; the [`Basis`](crate::basis::Basis)
//! converts one into the other.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` rows of (covariate vector, scalar response), stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    covariates: Vec<f64>,
    responses: Vec<f64>,
    p: usize,
}

impl Dataset {
    /// Builds a dataset from row-major covariates. Requires `n >= p >= 1` and
    /// finite entries.
    pub fn new(covariates: Vec<f64>, responses: Vec<f64>, p: usize) -> Result<Self> {
        let data = Self::new_unchecked_rank(covariates, responses, p)?;
        if data.n() < p {
            return Err(Error::domain(format!(
                "dataset needs at least p = {p} rows, got {}",
                data.n()
            )));
        }
        Ok(data)
    }

    /// Like [`Dataset::new`] but allows fewer rows than columns; used for raw
    /// tables that only become designs after expansion.
    pub fn new_unchecked_rank(covariates: Vec<f64>, responses: Vec<f64>, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::domain("covariate dimension must be at least 1"));
        }
        if responses.is_empty() {
            return Err(Error::domain("dataset must contain at least one row"));
        }
        if covariates.len() != responses.len() * p {
            return Err(Error::domain(format!(
                "covariate buffer holds {} values, expected {} rows x {p} columns",
                covariates.len(),
                responses.len()
            )));
        }
        if let Some(i) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite covariate in row {}, column {}",
                i / p,
                i % p
            )));
        }
        if let Some(i) = responses.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite response in row {i}")));
        }
        Ok(Self {
            covariates,
            responses,
            p,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], responses: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::domain(format!(
                "row {i} has {} covariates, expected {p}",
                rows[i].len()
            )));
        }
        Self::new(rows.concat(), responses, p)
    }

    /// Intercept-only design (a single column of ones).
    pub fn intercept_only(responses: Vec<f64>) -> Result<Self> {
        let covariates = vec![1.0; responses.len()];
        Self::new(covariates, responses, 1)
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.covariates.chunks_exact(self.p)
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Column means of the covariates.
    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.p];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.n() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// New dataset made of the given row indices (repeats allowed).
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        let mut covariates = Vec::with_capacity(indices.len() * self.p);
        let mut responses = Vec::with_capacity(indices.len());
        for &i in indices {
            covariates.extend_from_slice(self.row(i));
            responses.push(self.responses[i]);
        }
        Dataset {
            covariates,
            responses,
            p: self.p,
        }
    }

    /// Same covariates with different responses.
    pub fn with_responses(&self, responses: Vec<f64>) -> Result<Dataset> {
        Dataset::new_unchecked_rank(self.covariates.clone(), responses, self.p)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

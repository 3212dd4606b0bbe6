//! End-to-end generative metamodels.
//!
//! Offline, quantile regressions are fitted on a grid of levels (and, for the
//! Hermite variant, gradients at the central levels). Online, observations at
//! a covariate `x*` are produced by inverse transform: draw `u ~ U(0, 1)` and
//! return the interpolated quantile curve at `u`.
//!
//! # Model file
//!
//! Models are stored as a single JSON document:
//!
//! ```text
//! {
//!   "format": "eqrgmm-model",
//!   "version": 1,
//!   "variant": "eqrgmm" | "qrgmm",
//!   "basis": "identity" | "inventory" | "raw",
//!   "raw_dim": <int>,
//!   "grid": {"kind": "mixed", ...GridDesign} | {"kind": "uniform", "m": <int>},
//!   "coeffs": {"levels": [...], "betas": [[...], ...]},
//!   "grads": {"levels": [...], "g": [[...], ...], "delta_n": <f64>, "window_counts": [...]},
//!   "clamp_negative_gradients": <bool>,
//!   "meta": {"n": <int>, "p": <int>, "regressions": <int>}
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so loading a saved model
//! reproduces generation bit for bit. Readers accept any file whose
//! `version` equals [`MODEL_FORMAT_VERSION`]. Fit timings are not stored.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::data::{dot, Dataset};
use crate::error::{Error, Result};
use crate::gradient::{gradient_table, Bandwidth, GradientCoefficients};
use crate::grid::{build_grid, default_m, uniform_levels, GridDesign};
use crate::interp::{NodeData, ProcessCurve};
use crate::quantreg::{QuantileCoefficients, QuantileSolver};
use crate::rng::{stream, Stream};

pub const MODEL_FORMAT: &str = "eqrgmm-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Mixed grid, Hermite interpolation on the central region.
    Eqrgmm,
    /// Uniform grid, linear interpolation everywhere.
    Qrgmm,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Eqrgmm => "E-QRGMM",
            Variant::Qrgmm => "QRGMM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub variant: Variant,
    /// Tail resolution; `None` uses `round(sqrt(n))`.
    pub m: Option<usize>,
    pub c: f64,
    pub tau_l: f64,
    pub tau_u: f64,
    pub bandwidth: Bandwidth,
    pub basis: Basis,
    pub clamp_negative_gradients: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Eqrgmm,
            m: None,
            c: 2.0,
            tau_l: 0.1,
            tau_u: 0.9,
            bandwidth: Bandwidth::default(),
            basis: Basis::Identity,
            clamp_negative_gradients: false,
        }
    }
}

impl FitConfig {
    pub fn resolved_m(&self, n: usize) -> usize {
        self.m.unwrap_or_else(|| default_m(n))
    }

    /// Checks the grid parameters without fitting anything.
    pub fn validate(&self, n: usize) -> Result<()> {
        let m = self.resolved_m(n);
        match self.variant {
            Variant::Eqrgmm => build_grid(m, self.c, self.tau_l, self.tau_u).map(|_| ()),
            Variant::Qrgmm => uniform_levels(m).map(|_| ()),
        }?;
        if let Bandwidth::Fixed(d) = self.bandwidth {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::domain(format!("smoothing half-width must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grid {
    Mixed(GridDesign),
    Uniform { m: usize },
}

/// Wall-clock seconds spent in each fitting stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTimings {
    pub regression: f64,
    pub gradient: f64,
    pub assembly: f64,
}

impl FitTimings {
    pub fn total(&self) -> f64 {
        self.regression + self.gradient + self.assembly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub n: usize,
    pub p: usize,
    /// Number of quantile regressions solved.
    pub regressions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedProcess {
    pub variant: Variant,
    pub basis: Basis,
    pub raw_dim: usize,
    pub grid: Grid,
    pub coeffs: QuantileCoefficients,
    pub grads: GradientCoefficients,
    pub clamp_negative_gradients: bool,
    pub meta: FitMeta,
    #[serde(skip)]
    pub timings: FitTimings,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: FittedProcess,
}

impl FittedProcess {
    /// Fits on raw covariates, expanding them with `config.basis`.
    pub fn fit(raw: &Dataset, config: &FitConfig) -> Result<Self> {
        let design = config.basis.design(raw)?;
        Self::fit_design(&design, raw.p(), config)
    }

    /// Fits on an already expanded design; `raw_dim` is the arity that
    /// [`generate`](Self::generate) will expect.
    pub fn fit_design(design: &Dataset, raw_dim: usize, config: &FitConfig) -> Result<Self> {
        if config.basis.design_dim(raw_dim)? != design.p() {
            return Err(Error::Shape {
                expected: config.basis.design_dim(raw_dim)?,
                got: design.p(),
            });
        }
        let m = config.resolved_m(design.n());
        let solver = QuantileSolver::default();
        let mut timings = FitTimings::default();
        let (grid, levels) = match config.variant {
            Variant::Eqrgmm => {
                let g = build_grid(m, config.c, config.tau_l, config.tau_u)?;
                let levels = g.levels.clone();
                (Grid::Mixed(g), levels)
            }
            Variant::Qrgmm => (Grid::Uniform { m }, uniform_levels(m)?),
        };

        let start = Instant::now();
        let coeffs = solver.fit_path(design, &levels)?;
        timings.regression = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let grads = match &grid {
            Grid::Mixed(g) => {
                let delta = config.bandwidth.resolve(design, &coeffs, g)?;
                gradient_table(design, &coeffs, g, delta)?
            }
            Grid::Uniform { .. } => GradientCoefficients::empty(0.0),
        };
        timings.gradient = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let model = FittedProcess {
            variant: config.variant,
            basis: config.basis,
            raw_dim,
            grid,
            meta: FitMeta {
                n: design.n(),
                p: design.p(),
                regressions: coeffs.len(),
            },
            coeffs,
            grads,
            clamp_negative_gradients: config.clamp_negative_gradients,
            timings,
        };
        model.check_consistency()?;
        let mut model = model;
        model.timings.assembly = start.elapsed().as_secs_f64();
        Ok(model)
    }

    fn check_consistency(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::ModelFormat(msg.to_string()));
        if self.coeffs.betas.len() != self.coeffs.levels.len()
            || self.coeffs.betas.iter().any(|b| b.len() != self.meta.p)
        {
            return bad("coefficient matrix shape does not match its levels");
        }
        match &self.grid {
            Grid::Mixed(g) => {
                if g.levels != self.coeffs.levels {
                    return bad("coefficient levels differ from the grid levels");
                }
                if g.central_levels() != self.grads.levels {
                    return bad("gradient levels differ from the central grid levels");
                }
                if self.grads.g.len() != self.grads.levels.len()
                    || self.grads.g.iter().any(|g| g.len() != self.meta.p)
                {
                    return bad("gradient matrix shape does not match its levels");
                }
            }
            Grid::Uniform { m } => {
                if uniform_levels(*m)? != self.coeffs.levels {
                    return bad("coefficient levels differ from the uniform grid");
                }
                if !self.grads.is_empty() {
                    return bad("linear-only models carry no gradients");
                }
            }
        }
        if self.basis.design_dim(self.raw_dim)? != self.meta.p {
            return bad("basis output dimension differs from the coefficient dimension");
        }
        Ok(())
    }

    pub fn levels(&self) -> &[f64] {
        &self.coeffs.levels
    }

    /// The quantile curve at raw covariate `x_raw`.
    pub fn curve(&self, x_raw: &[f64]) -> Result<ProcessCurve> {
        if x_raw.len() != self.raw_dim {
            return Err(Error::Shape {
                expected: self.raw_dim,
                got: x_raw.len(),
            });
        }
        let x = self.basis.expand(x_raw)?;
        let values: Vec<f64> = self.coeffs.betas.iter().map(|b| dot(&x, b)).collect();
        match &self.grid {
            Grid::Uniform { .. } => Ok(ProcessCurve::linear(NodeData::new(
                self.coeffs.levels.clone(),
                values,
                None,
            )?)),
            Grid::Mixed(g) => {
                let mut tail_levels = Vec::new();
                let mut tail_values = Vec::new();
                let mut central_levels = Vec::new();
                let mut central_values = Vec::new();
                for ((&tau, &central), v) in g.levels.iter().zip(&g.central_mask).zip(values) {
                    if central {
                        central_levels.push(tau);
                        central_values.push(v);
                    } else {
                        tail_levels.push(tau);
                        tail_values.push(v);
                    }
                }
                let derivs: Vec<f64> = self
                    .grads
                    .g
                    .iter()
                    .map(|g| {
                        let d = dot(&x, g);
                        if self.clamp_negative_gradients {
                            d.max(0.0)
                        } else {
                            d
                        }
                    })
                    .collect();
                let tails = if tail_levels.is_empty() {
                    NodeData {
                        levels: tail_levels,
                        values: tail_values,
                        derivs: None,
                    }
                } else {
                    NodeData::new(tail_levels, tail_values, None)?
                };
                ProcessCurve::mixed(tails, NodeData::new(central_levels, central_values, Some(derivs))?)
            }
        }
    }

    /// `Q_hat(tau | x_raw)`.
    pub fn eval(&self, tau: f64, x_raw: &[f64]) -> Result<f64> {
        crate::error::check_level(tau, "quantile level")?;
        Ok(self.curve(x_raw)?.eval(tau))
    }

    /// `k` observations at `x_raw` by inverse transform, using the generation
    /// stream of `seed`.
    pub fn generate(&self, x_raw: &[f64], k: usize, seed: u64) -> Result<Vec<f64>> {
        let curve = self.curve(x_raw)?;
        let mut rng = stream(seed, Stream::Generate, 0);
        Ok((0..k).map(|_| curve.eval(rng.random::<f64>())).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format").and_then(|v| v.as_str()) {
            Some(MODEL_FORMAT) => {}
            other => {
                return Err(Error::ModelFormat(format!(
                    "not a model file (format tag {other:?})"
                )))
            }
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(u64::from(MODEL_FORMAT_VERSION)) {
            return Err(Error::ModelFormat(format!(
                "unsupported model version {version:?}, this build reads version {MODEL_FORMAT_VERSION}"
            )));
        }
        let file: ModelFile = serde_json::from_value(value)?;
        file.model.check_consistency()?;
        Ok(file.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Hermite variant on an expanded design (covariates used verbatim).
pub fn fit_eqrgmm(data: &Dataset, m: usize, c: f64, tau_l: f64, tau_u: f64, delta_n: f64) -> Result<FittedProcess> {
    let config = FitConfig {
        variant: Variant::Eqrgmm,
        m: Some(m),
        c,
        tau_l,
        tau_u,
        bandwidth: Bandwidth::Fixed(delta_n),
        basis: Basis::Raw,
        clamp_negative_gradients: false,
    };
    FittedProcess::fit_design(data, data.p(), &config)
}

/// Linear-only baseline on an expanded design.
pub fn fit_qrgmm(data: &Dataset, m: usize) -> Result<FittedProcess> {
    let config = FitConfig {
        variant: Variant::Qrgmm,
        m: Some(m),
        basis: Basis::Raw,
        ..FitConfig::default()
    };
    FittedProcess::fit_design(data, data.p(), &config)
}

/// `Q_hat(tau | x)` for a fitted model.
pub fn eval_process(tau: f64, x_raw: &[f64], model: &FittedProcess) -> Result<f64> {
    model.eval(tau, x_raw)
}

/// `k` generated observations at `x_star`.
pub fn generate(model: &FittedProcess, x_star: &[f64], k: usize, seed: u64) -> Result<Vec<f64>> {
    model.generate(x_star, k, seed)
}

//! Quantile regression based generative metamodels with gradient-enhanced
//! cubic interpolation over the central quantile region.

pub mod basis;
pub mod bootstrap;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod gradient;
pub mod grid;
pub mod interp;
pub mod linalg;
pub mod metamodel;
pub mod parallel;
pub mod quantreg;
pub mod rng;
pub mod simulate;

pub use basis::Basis;
pub use data::Dataset;
pub use error::{Error, Result};
pub use metamodel::{FitConfig, FittedProcess, Variant};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the domain where the operation is defined.
    #[error("parameter out of domain: {0}")]
    Domain(String),

    /// The design matrix does not have full column rank.
    #[error("degenerate design: column {column} is linearly dependent on the others")]
    DegenerateDesign { column: usize },

    #[error("interior-point solver did not converge in {iterations} iterations (duality gap {gap:e})")]
    Convergence { iterations: usize, gap: f64 },

    /// Too few observations fell inside the indicator window to estimate the
    /// local second-moment matrix.
    #[error("degenerate gradient window: {count} observations inside, at least {required} needed")]
    DegenerateWindow { count: usize, required: usize },

    #[error("at quantile level {level}: {source}")]
    AtLevel {
        level: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("bootstrap replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch: expected {expected} covariates, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("unsupported oracle: {0}")]
    UnsupportedOracle(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn at_level(self, level: f64) -> Self {
        Error::AtLevel {
            level,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping level and replicate annotations.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::AtLevel { source, .. } | Error::Replicate { source, .. } => source.root_cause(),
            other => other,
        }
    }

    /// Numerical failure of a fit on otherwise valid input.
    pub fn is_fit_failure(&self) -> bool {
        matches!(
            self.root_cause(),
            Error::DegenerateDesign { .. } | Error::Convergence { .. } | Error::DegenerateWindow { .. }
        )
    }
}

pub(crate) fn check_level(tau: f64, what: &str) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must lie in (0, 1), got {tau}")))
    }
}

use thiserror::Error;

/// Which structural assumption on the interaction failed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Assumption {
    /// All couplings share one minimal period.
    Periodicity,
    /// Analyticity/decay of the glued form factors in a strip.
    Regularity,
    /// Non-vanishing golden-rule coupling at the level splitting.
    GoldenRule,
}

impl std::fmt::Display for Assumption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Assumption::Periodicity => "A1 (periodicity)",
            Assumption::Regularity => "A2 (regularity)",
            Assumption::GoldenRule => "A3 (golden rule)",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("model assumptions violated: {}", .failed.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", "))]
    Assumptions { failed: Vec<Assumption> },

    #[error("quadrature did not converge: estimated error {achieved:.3e} > tolerance {tolerance:.3e}")]
    Quadrature { achieved: f64, tolerance: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("propagation failed: {0}")]
    Propagation(String),

    #[error("not converged: {0}")]
    NotConverged(String),

    #[error("incomplete data: {0}")]
    Incomplete(String),

    #[error("snapshot format: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

//! Error type shared by every module.

use thiserror::Error;

/// Everything that can go wrong while building measures, matching, or bounding.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("total masses differ: {left} vs {right}")]
    MassMismatch { left: f64, right: f64 },

    #[error("numerical instability: {0}")]
    Instability(String),

    #[error("regime undetermined: second factorial cumulant is zero (a pure Poisson target fits)")]
    RegimeUndetermined,

    #[error("wrong regime: {0}")]
    Regime(String),

    #[error("matching infeasible: {0}")]
    Infeasible(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("bound inapplicable: {0}")]
    Inapplicable(String),

    #[error("state space too large: {0}")]
    StateSpace(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

//! Compound binomial / negative-binomial approximation of locally dependent
//! counts, with Stein-method total-variation bounds and exact run-statistic
//! laws to check them against.
//!
//! The building blocks, bottom up:
//! - [`dist_core`]: finitely supported (possibly signed) lattice measures.
//! - [`stein_ops`]: Stein operators, the Stein equation, and the Δg constants.
//! - [`matching`]: three-cumulant matching to `Bin(n,p)∗Po(λ)` or `NB(r,p̄)∗Po(λ)`.
//! - [`runs_models`]: exact laws and cumulants of circular run statistics.
//! - [`bounds`]: the error bounds themselves.
//! - [`harness`]: sweeps, slope fits, and CSV/JSON output.

pub mod bounds;
pub mod dist_core;
pub mod error;
pub mod harness;
pub mod matching;
pub mod runs_models;
pub mod stein_ops;

pub use error::{Error, Result};

//! Multivariate ordinal probit (MVOP) models for imputing incomplete
//! multivariate ordinal data.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: datasets, parameters, identification constraints, likelihoods
//!   and the parameter-expansion transforms.
//! - [`tmvn`]: truncated multivariate normal samplers (slice and Gibbs).
//! - [`mcem`]: Monte Carlo EM with conditional maximisation and bootstrap MI.
//! - [`da`]: data augmentation (Gibbs) posterior sampling, PX-DA, R-hat.
//! - [`nested`]: two-stage nested multiple imputation and pooling rules.
//! - [`simlab`]: missingness mechanisms, estimands, comparators and the
//!   replication driver.
//! - [`diagnostics`]: posterior predictive checks and holdout validation.
//! - [`io`]: CSV/JSON persistence of datasets and imputation stacks.

pub mod da;
pub mod diagnostics;
pub mod error;
pub mod io;
mod latent;
pub mod linalg;
pub mod mcem;
pub mod model;
pub mod nested;
pub mod rng;
pub mod simlab;
pub mod stats;
pub mod tmvn;

pub use error::{MvopError, Result};
pub use model::{ExpansionScale, IdentificationMode, LatentMatrix, MvopParams, OrdinalDataset, ResponseMatrix};
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

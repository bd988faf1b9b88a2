//! Latent basis growth models with individually-varying measurement occasions.
//!
//! Univariate and parallel (two-outcome) models are fitted by full-information
//! maximum likelihood. Each individual's loadings are built from their own
//! measurement times, so data need not share a common time grid.

pub mod cli;
pub mod data;
pub mod derived;
pub mod error;
pub mod estimator;
pub mod model;
pub mod numeric;
pub mod simstudy;

pub use error::{LbgmError, Result};

//! Hybrid choice modelling of on-demand transit preferences: data
//! preparation, attribute binning, representativeness tests, factor
//! analysis, and simulated maximum likelihood for multinomial logit, latent
//! class, and integrated choice and latent variable models.

pub mod binning;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod factors;
pub mod likelihood;
pub mod modelspec;
pub mod specfile;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};

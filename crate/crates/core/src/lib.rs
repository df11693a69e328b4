//! Micro-level claims reserving with marked Poisson processes.

pub mod claims_data;
pub mod cond_dist;
pub mod diagnostics;
pub mod error;
pub mod forecast;
pub mod intensity;
pub mod optim;
pub mod poisson_fit;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod synth;

pub use error::{Error, Result};

//! Spectral cut-off solver for linear ill-posed equations observed
//! through repeated unbiased noisy measurements.
//!
//! The estimator averages the measurements, projects onto the singular
//! basis of the operator and inverts the first k components. The crate
//! provides several ways to pick k — plain discrepancy, a weighted
//! discrepancy with known variance decay, an adaptive weighted
//! discrepancy driven by estimated component variances, an a-priori
//! choice and exact-risk oracles — plus closed-form rate theory and a
//! seeded Monte Carlo harness that compares the rules on reference
//! problems.

pub mod cli;
pub mod config;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod noise;
pub mod operator;
pub mod rates;
pub mod rng;
pub mod stopping;

pub use error::{Error, Result};

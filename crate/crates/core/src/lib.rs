//! Inference for quadratic functionals of high-dimensional regression
//! coefficients: group significance tests, confidence intervals,
//! hierarchical testing, and a Monte Carlo harness.

pub mod applications;
pub mod cli;
pub mod data;
pub mod error;
pub mod hier;
pub mod inference;
pub mod lasso;
pub mod linalg;
pub mod normal;
pub mod projection;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};

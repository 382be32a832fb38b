//! Matrix-variate linear regression with Kronecker error covariance.
//!
//! The library fits the bilinear model `Y = mu + B1 X B2' + E` for matrix-valued
//! responses and predictors, where `cov[vec(E)] = Sigma2 (x) Sigma1`, along with
//! its envelope extension for efficient estimation, row-sparse variants, and the
//! inference tooling (bootstrap, asymptotic covariances, FDR control) needed to
//! use these models in practice. A simulation laboratory reproduces the standard
//! estimator-comparison and standard-error triangulation studies at desk scale.

pub mod bilinear;
pub mod dataset;
pub mod envelope;
pub mod error;
pub mod exec;
pub mod inference;
pub mod linalg;
pub mod matnorm;
pub mod prob;
pub mod simlab;
pub mod sparse;

pub use error::{Error, Result};

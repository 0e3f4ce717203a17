//! Gaussian min-max comparison toolkit: auxiliary-optimization predictors for
//! multi-source regression and mixture classification, direct solvers and
//! Monte-Carlo verification of the comparison inequality.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ao_classification;
pub mod ao_regression;
pub mod checks;
pub mod covariance;
pub mod data;
pub mod error;
pub mod harness;
pub mod optim;
pub mod po;
pub mod prox;
pub mod rng;

pub use error::{Error, Result};

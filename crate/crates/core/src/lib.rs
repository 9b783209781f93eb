//! Nonparametric estimation of mixture cure models: kernel-weighted
//! product-limit estimators of the incidence and latency, a bootstrap
//! bandwidth selector, benchmark models with Monte Carlo experiments, and
//! the asymptotic bias/variance oracle of the latency estimator.

// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod cli;
pub mod cure;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kernel;
pub mod models;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod survival;

pub use error::{Error, ErrorClass, Result};

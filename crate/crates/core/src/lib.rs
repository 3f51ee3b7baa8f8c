//! Bayesian principal component regression with spatially correlated random
//! effects.
//!
//! The crate is `no_std` (with `alloc`). It contains the numerical pieces of
//! the method: predictor standardization and principal-component design
//! construction ([`pca`]), exponential spatial covariances ([`spatial`]), the
//! hierarchical model and its hybrid Gibbs / adaptive-Metropolis sampler
//! ([`model`]), kriging-corrected posterior prediction ([`predict`]), the
//! comparison models ([`baselines`]), synthetic data generation
//! ([`synthetic`]) and validation metrics, MaxiMin training-set selection and
//! replicated experiment cells ([`validation`]).
//!
//! File formats, the command line and parallel drivers live in the `bpcr`
//! crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod baselines;
pub mod error;
mod linalg;
pub mod model;
pub mod pca;
pub mod predict;
pub mod rng;
pub mod spatial;
pub mod synthetic;
pub mod validation;

pub use error::{Error, Result};

/// Dense column-major matrix of `f64`.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense column vector of `f64`.
pub type Vector = nalgebra::DVector<f64>;

//! Adaptive Gaussian Markov random fields for smoothing survey-based
//! mortality estimates.
//!
//! The crate builds adaptive RW1/ICAR structure matrices (conflict periods,
//! country nesting), scales them, calibrates penalized-complexity priors for
//! their hyperparameters, and fits the smoothed direct model with exact
//! Gaussian conditionals integrated over a hyperparameter grid.

pub mod cli;
pub mod error;
pub mod graph;
pub mod inference;
pub mod latent;
pub mod priors;
pub mod quadrature;
pub mod simharness;
pub mod structmat;

pub use error::{Error, Result};

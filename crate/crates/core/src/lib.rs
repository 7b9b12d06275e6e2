//! Bayesian causal discovery for linear structural causal models that allow
//! disjoint directed cycles among the observed variables and Gaussian latent
//! confounders.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph_model`] holds the structural model `Y = μ + BY + AX + LC + E`,
//!   its structural checks, and the synthetic data generator.
//! * [`distributions`] has the random-variate kernels used by the sampler.
//! * [`gibbs`] implements the fixed-dimension full-conditional updates.
//! * [`moves`] implements pivot moves on the loading support and the
//!   split/merge reversible-jump moves over the number of confounders.
//! * [`inference`] drives chains and summarises posterior output.
//! * [`evaluation`] scores recovered graphs and runs replicate studies.
//! * [`config`] and [`io`] cover configuration files and on-disk formats.

pub mod config;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod gibbs;
pub mod graph_model;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod moves;
pub mod rng;
pub mod state;

pub use error::{Error, Result};

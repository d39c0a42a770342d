//! Joint Bayesian spatial models for validating a candidate areal count
//! database against a gold-standard source on the same spatial support.
//!
//! The library builds Queen-contiguity graphs with their intrinsic CAR
//! precision algebra, fits three joint Poisson models (random error,
//! structured error, shared component) by MCMC, and turns posterior draws
//! into a global multiplicative contrast plus per-area exceedance-probability
//! decision rules. A simulation harness generates paired datasets under a
//! Leroux field with configurable disturbance scenarios and scores the
//! decision rules against the generating truth.

pub mod data;
pub mod decision;
pub mod demo;
pub mod error;
pub mod fields;
pub mod geojson;
pub mod geom;
pub mod graph;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod priors;
pub mod sim;

pub use error::{CoreError, Result};

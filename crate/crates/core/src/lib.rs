//! Bayesian joint models for a Gaussian longitudinal outcome and a
//! right-censored event time with latent classes.
//!
//! The crate covers data ingestion ([`data`]), spline bases ([`basis`]),
//! density kernels ([`likelihood`]), a Metropolis-within-Gibbs sampler
//! ([`sampler`]), overfitted-mixture class selection ([`selection`]),
//! post-hoc relabeling ([`relabel`]), a scenario simulator ([`simulator`])
//! and a replication harness ([`harness`]).

pub mod basis;
pub mod config;
pub mod data;
pub mod dist;
pub mod error;
pub mod harness;
pub mod likelihood;
pub mod linalg;
pub mod output;
pub mod parallel;
pub mod priors;
pub mod quadrature;
pub mod relabel;
pub mod rng;
pub mod sampler;
pub mod selection;
pub mod simulator;
pub mod spec;
pub mod state;

pub use error::{Error, Result};

//! Sticky Pitman-Yor mixture modelling of differential DNA methylation.
//!
//! The crate covers the full pipeline: logit-scale data handling
//! ([`data`]), the two-restaurant two-cuisine generative process
//! ([`franchise`]), a synthetic data generator ([`simgen`]), the three-block
//! MCMC sampler ([`mcmc`]), Bayesian FDR detection ([`detection`]),
//! single-run model-order evidence ([`evidence`]), frequentist baselines
//! ([`baselines`]), ROC evaluation ([`evaluation`]) and file formats ([`io`]).

pub mod error;
pub mod math;
pub mod data;
pub mod franchise;
pub mod mcmc;
pub mod simgen;
pub mod baselines;
pub mod detection;
pub mod evidence;
pub mod evaluation;
pub mod io;
pub mod cli;

pub use error::{Error, Result};

//! Bayesian hierarchical models for meta-epidemiological data.

pub mod data;
pub mod diagnostics;
pub mod mcmc;
pub mod model;
pub mod oracle;
pub mod report;
pub mod stats;
pub mod summaries;
pub mod synthetic;

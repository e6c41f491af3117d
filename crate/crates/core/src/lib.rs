//! Cost-optimal cluster sizing for recurring data-processing jobs.
//!
//! The pipeline has three stages:
//!
//! 1. [`profiler`] runs the job locally on small dataset samples and records
//!    baseline-subtracted peak resident memory per sample size.
//! 2. [`memory_model`] fits input-size → memory and classifies the job as
//!    linear, flat, or unclear; linear jobs get an extrapolated requirement.
//! 3. [`config_space`] partitions the cluster-configuration search space
//!    around that requirement, and [`search`] runs priority-first
//!    Bayesian-optimized search (backed by [`bayes_opt`]) against a cost
//!    oracle, either a live executor or the [`replay`] table harness used
//!    for evaluation.

pub mod bayes_opt;
pub mod config_space;
pub mod memory_model;
pub mod profiler;
pub mod replay;
pub mod search;

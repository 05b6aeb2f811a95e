//! Fault-injection campaigns against container clusters.
//!
//! A campaign is a YAML [`config::ExperimentPlan`] expanded into cases. Each
//! case runs through the five phases in [`orchestrator`] against a
//! [`backend::ClusterBackend`], either the deterministic in-process
//! [`backend::SimCluster`] or a remote agent over HTTP. [`metrics`] turns the
//! request records into summaries, baseline z-scores and CSV artifacts.
//!
//! Statistics are generic over the float type; the aliases below fix it.

// Negated float comparisons also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod config;
pub mod fault;
pub mod health;
pub mod load;
pub mod metrics;
pub mod orchestrator;
pub mod report;
pub mod retry;
pub mod stats;

pub type ZScore = stats::ZScore<f64>;
pub type ZScore32 = stats::ZScore<f32>;

//! Blackbox deployment optimizer for multi-microservice applications.
//!
//! Given an application, a cluster, an initial deployment and a representative
//! workload, the optimizer
//!
//! 1. stresses microservice resources (MRs) to find which ones the end-to-end
//!    metric depends on, squeezes the rest, and repacks instances onto fewer
//!    servers without degrading performance ([`clampdown`]);
//! 2. hands leftover server capacity to the most impacted instances and shifts
//!    resources between colocated instances by discrete gradient steps
//!    ([`improver`]).
//!
//! [`dynamic`] replays request-rate traces against a family of optimized
//! deployments, and [`oracle`] holds brute-force references used in tests.
//! The application itself is a synthetic model ([`sim`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod clampdown;
pub mod domain;
pub mod dynamic;
pub mod error;
pub mod fixtures;
pub mod improver;
pub mod oracle;
pub mod pipeline;
pub mod probe;
pub mod sim;
pub mod stressor;

pub use error::{Error, Result};

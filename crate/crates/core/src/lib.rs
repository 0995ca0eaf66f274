//! Client-conditional federated learning on PCA-eigenvalue data fingerprints.
//!
//! Each client summarizes its training shard by the top eigenvalues of the
//! covariance of its feature-label matrix. A single shared network receives
//! that fingerprint next to every input, so one set of weights can serve
//! clients whose data distributions disagree. The crate also ships the
//! baselines this is measured against (Local, FedAvg, Gossip, Oracle, IFCA,
//! DAC, Ditto), the partition generators for label, covariate, concept and
//! combined heterogeneity, and a config-driven experiment harness.
//!
//! Module map:
//!
//! - [`nn`]: tensors, layers, cross-entropy, SGD with momentum.
//! - [`datasets`]: IDX ingestion, synthetic Gaussian clusters, rotations.
//! - [`heterogeneity`]: partition generators and sparsity levels.
//! - [`stats`]: augmented matrices and eigenvalue fingerprints.
//! - [`federation`]: the eight training strategies and evaluation.
//! - [`experiment`]: configs, runs, suites, ARI, reports.

// Validation checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datasets;
pub mod experiment;
pub mod federation;
pub mod heterogeneity;
pub mod nn;
pub mod seed;
pub mod stats;

pub use nn::{Architecture, ArchitectureKind, ModelParams, OptimizerState};

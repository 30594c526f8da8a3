//! Membership inference against machine unlearning.
//!
//! The crate trains populations of original and unlearned classifiers
//! (retrain-from-scratch or SISA sharding), mounts a two-posterior
//! membership inference attack against them, compares it with the classical
//! single-posterior attack and reports AUC together with the DegCount and
//! DegRate degradation metrics.
//!
//! Module map:
//!
//! * [`data`]: CSV ingestion, one-hot / min-max encoding, disjoint splits.
//! * [`learners`]: logistic regression, Gini trees, random forests, MLPs.
//! * [`unlearn`]: scratch retraining and SISA shards.
//! * [`farm`]: shadow / target model populations and attack cases.
//! * [`features`]: the five posterior aggregation methods and defenses.
//! * [`attack`]: the attack classifier and the classical baseline.
//! * [`metrics`]: AUC, DegCount, DegRate.
//! * [`experiment`]: config-driven end-to-end runs and reports.

pub mod attack;
pub mod data;
pub mod error;
pub mod experiment;
pub mod farm;
pub mod features;
pub mod learners;
pub mod metrics;
pub mod seed;
pub mod unlearn;

pub use error::{Error, ErrorCategory, Result};

//! DACN: single-source domain-generalization fault diagnosis.
//!
//! Train on monitoring data from one operating mode of a process plant and
//! classify system health on modes never seen during training. The crate
//! bundles:
//!
//! - [`cstr`]: a closed-loop CSTR benchmark simulator with 13 health classes
//!   across 3 operating modes;
//! - [`dataio`]: standardization, sliding-window expansion, stratified
//!   splitting, and task assembly (including external CSV ingestion);
//! - [`model`]: the five networks (feature extractor, feature transformer,
//!   domain-invariant extractor, classifier, discriminator) with exact
//!   forward/backward passes;
//! - [`losses`]: classification, supervised contrastive, and discriminative
//!   losses plus their composite objectives;
//! - [`trainer`]: pre-training, adversarial/contrastive training with
//!   per-group gradient routing, inference, and ablations;
//! - [`eval`]: confusion-matrix metrics, per-mode breakdowns, worst-of-N
//!   reporting, and feature export;
//! - [`hpo`]: hyperparameter search maximizing pseudo-feature accuracy.
//!
//! See the crate examples for end-to-end usage; the `dacn` binary wires the
//! same calls behind subcommands.

pub mod config;
pub mod cstr;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod hpo;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod trainer;

pub use error::{DacnError, Result};

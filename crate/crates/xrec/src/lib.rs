//! Explainable contextualized recommendation.
//!
//! This crate trains pairwise-ranking recommenders whose inputs are review
//! features (word frequency and sentiment per user--item interaction) and
//! produces, for each strategy, a per-user explanation vector over the
//! feature vocabulary:
//!
//! * `nar` — attention over feature words; the attention weights are the
//!   explanation.
//! * `car` — feature-level adversarial training; the gradient-ascent
//!   perturbation magnitudes are the explanation.
//! * `cnr` — counterfactual search for the smallest feature perturbation
//!   that flips a pairwise preference; the perturbation magnitudes are the
//!   explanation.
//!
//! A plain id-embedding `baseline` scorer is included for reference. All
//! training is deterministic for a fixed seed, and every artifact (dataset,
//! checkpoint, perturbation dump, report) is byte-stable across reruns.
//!
//! The `examples/` directory walks through each capability end to end; the
//! `xrec` binary chains the same calls behind subcommands.

pub mod config;
pub mod data;
pub mod diff;
pub mod error;
pub mod eval;
pub mod explain;
pub mod model;
pub mod run;
pub mod train;

pub use error::{Result, XrecError};

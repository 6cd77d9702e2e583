// SPDX-License-Identifier: MIT OR Apache-2.0

//! # analogy-probe
//!
//! Interpretability workbench for studying how decoder-only transformers
//! solve analogies. It bundles a small deterministic transformer engine with
//! hooks for attention knockout and residual-stream patching, and builds the
//! analyses on top of it:
//!
//! - [`interventions`]: knockout sweeps over layer windows, first-pair
//!   swapping, and the source-layer × target-layer patch grid.
//! - [`patchscopes`]: decoding hidden states by injecting them into a
//!   placeholder of a crafted target prompt.
//! - [`probing`]: per-(layer, head) logistic probes with stratified k-fold
//!   cross-validation.
//! - [`alignment`]: Mutual Alignment Score between token spans and the
//!   mutual-best-match heatmaps.
//! - [`dataset`]: analogy generation, knowledge and shortcut filters, and
//!   two-option story evaluation against a pluggable answer oracle.
//! - [`experiment`]: config-file driven runs that emit CSV/JSON reports and
//!   a checksum manifest.

pub mod alignment;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod interventions;
pub mod model;
pub mod patchscopes;
pub mod probing;
pub mod report;
pub mod text;
pub mod toy;

pub use error::{Error, Result};
pub use interventions::plan::{InterventionPlan, Knockout, Patch, PatchSpec};
pub use model::{ForwardTrace, GenerationResult, Model, ModelConfig, TensorArchive, TokenSequence, Vocab};

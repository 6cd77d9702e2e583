// SPDX-License-Identifier: MIT OR Apache-2.0

//! Config-driven runs. One JSON config names the analysis, the model
//! directory, the datasets and the analysis parameters; a run writes
//! plot-ready CSV and JSON into the output directory together with a
//! checksum manifest.

mod config;
mod manifest;
mod run;

pub use config::{
    load_config, validate, AnalysisKind, BuildParams, Candidate, DatasetPaths, Diagnostic, FilterParams,
    HeatmapRequest, KnockoutParams, LoadedConfig, MasParams, Overrides, PatchGridParams, PatchscopeParams, RunConfig,
    StoryEvalParams, SwapParams,
};
pub use manifest::{sha256_hex, RunManifest, LOCK_FILE, MANIFEST_FILE};
pub use run::{execute, run, Outputs, RunError};

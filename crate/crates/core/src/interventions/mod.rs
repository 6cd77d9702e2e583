// SPDX-License-Identifier: MIT OR Apache-2.0

//! Knockout sweeps and the two error-analysis interventions: swapping in
//! first pairs from correctly solved analogies, and patching e2 states
//! into the link across every pair of layers.

mod grid;
pub mod plan;
mod swap;
mod sweep;
mod window;

pub use grid::{patch_grid_from_flags, patch_grid_sweep, GridOptions, PatchGridReport};
pub use plan::{InterventionPlan, Knockout, Patch, PatchSpec};
pub use swap::{restrict_to_relations, swap_first_pairs, SWAP_RELATIONS};
pub use sweep::{knockout_sweep, SweepOptions, SweepReport, SweepRow};
pub use window::{knockout_window, window_size};

/// Tokens compared when deciding whether an intervention changed the
/// generation, and generated when checking answers.
pub const COMPARE_TOKENS: usize = 8;

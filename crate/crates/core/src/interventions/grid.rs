// SPDX-License-Identifier: MIT OR Apache-2.0

use rayon::prelude::*;
use serde::Serialize;

use super::plan::{InterventionPlan, PatchSpec};
use super::COMPARE_TOKENS;
use crate::dataset::{AnalogyInstance, SpanLabel};
use crate::error::Result;
use crate::model::Model;
use crate::report;
use crate::text::generation_matches;

#[derive(Debug, Clone)]
pub struct GridOptions {
    pub max_new: usize,
    pub source: SpanLabel,
    pub target: SpanLabel,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            max_new: COMPARE_TOKENS,
            source: SpanLabel::E2,
            target: SpanLabel::Link,
        }
    }
}

/// Fraction of instances corrected by patching the source state from
/// layer `src` into the target position at layer `tgt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchGridReport {
    pub n_layers: usize,
    pub n_instances: usize,
    /// `gains[src][tgt]`
    pub gains: Vec<Vec<f64>>,
    /// `None` when no cell corrects anything.
    pub best_cell: Option<(usize, usize)>,
    pub best_gain: f64,
}

impl PatchGridReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let labels = report::index_labels(self.n_layers);
        report::matrix_csv("source_layer", &labels, &labels, &self.gains)
    }
}

/// Aggregate per-instance correction flags (`flags[instance][src][tgt]`).
/// Ties for the best cell go to the lowest (src, tgt).
pub fn patch_grid_from_flags(n_layers: usize, flags: &[Vec<Vec<bool>>]) -> PatchGridReport {
    let n = flags.len();
    let mut gains = vec![vec![0.0; n_layers]; n_layers];
    if n > 0 {
        for (s, row) in gains.iter_mut().enumerate() {
            for (t, cell) in row.iter_mut().enumerate() {
                let hits = flags.iter().filter(|f| f[s][t]).count();
                *cell = hits as f64 / n as f64;
            }
        }
    }
    let mut best_cell = None;
    let mut best_gain = 0.0;
    for (s, row) in gains.iter().enumerate() {
        for (t, &g) in row.iter().enumerate() {
            if g > best_gain {
                best_gain = g;
                best_cell = Some((s, t));
            }
        }
    }
    PatchGridReport {
        n_layers,
        n_instances: n,
        gains,
        best_cell,
        best_gain,
    }
}

/// For every (source layer, target layer), overwrite the target span's
/// last-token state with the source span's last-token state from the
/// clean run, and record whether an answer that was wrong becomes right.
pub fn patch_grid_sweep(model: &Model, instances: &[AnalogyInstance], opts: &GridOptions) -> Result<PatchGridReport> {
    let n_layers = model.n_layers();
    let flags: Vec<Vec<Vec<bool>>> = instances
        .par_iter()
        .map(|inst| {
            let tok = inst.tokenize(model.vocab())?;
            let ids = &tok.tokens.ids;
            let clean = model.forward(&tok.tokens, None)?;
            let baseline = model.greedy_decode(ids, opts.max_new, None, false)?;
            let already = generation_matches(&baseline.text, &inst.e4);
            let mut grid = vec![vec![false; n_layers]; n_layers];
            for (src_layer, row) in grid.iter_mut().enumerate() {
                for (tgt_layer, cell) in row.iter_mut().enumerate() {
                    let patch = PatchSpec {
                        src_layer,
                        src_pos: tok.last_of(opts.source),
                        tgt_layer,
                        tgt_pos: tok.last_of(opts.target),
                    }
                    .resolve(&clean)?;
                    let plan = InterventionPlan::new().with_patch(patch);
                    let gen = model.greedy_decode(ids, opts.max_new, Some(&plan), false)?;
                    *cell = !already && generation_matches(&gen.text, &inst.e4);
                }
            }
            Ok(grid)
        })
        .collect::<Result<_>>()?;
    Ok(patch_grid_from_flags(n_layers, &flags))
}

// SPDX-License-Identifier: MIT OR Apache-2.0

use rayon::prelude::*;
use serde::Serialize;

use super::plan::{InterventionPlan, Knockout};
use super::window::knockout_window;
use super::COMPARE_TOKENS;
use crate::dataset::{AnalogyInstance, Label, SpanLabel};
use crate::error::Result;
use crate::model::Model;
use crate::report;
use crate::text::generation_matches;

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Tokens generated per run. The first `COMPARE_TOKENS` of them decide
    /// whether the generation changed.
    pub max_new: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            max_new: COMPARE_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub position: String,
    /// One value per center layer.
    pub values: Vec<f64>,
}

/// Positions × layers outcome matrix for one label group. Correct
/// instances report answer accuracy; incorrect ones report how often the
/// knockout changed the generation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub label: Label,
    pub n_layers: usize,
    pub n_instances: usize,
    /// First row is the unmodified baseline.
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let labels: Vec<String> = self.rows.iter().map(|r| r.position.clone()).collect();
        let values: Vec<Vec<f64>> = self.rows.iter().map(|r| r.values.clone()).collect();
        report::matrix_csv("position", &labels, &report::index_labels(self.n_layers), &values)
    }

    pub fn row(&self, position: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.position == position)
    }
}

struct InstanceOutcome {
    label: Label,
    baseline: f64,
    /// `[position][center layer]`
    values: Vec<Vec<f64>>,
}

fn sweep_instance(
    model: &Model,
    instance: &AnalogyInstance,
    positions: &[SpanLabel],
    opts: &SweepOptions,
) -> Result<InstanceOutcome> {
    let tok = instance.tokenize(model.vocab())?;
    let n_layers = model.n_layers();
    let baseline = model.greedy_decode(&tok.tokens.ids, opts.max_new, None, false)?;
    let baseline_text = compare_prefix(model, &baseline.new_token_ids);
    let label = match instance.label {
        Label::Unlabeled if generation_matches(&baseline.text, &instance.e4) => Label::Correct,
        Label::Unlabeled => Label::Incorrect,
        l => l,
    };
    let outcome = |text: &str, ids: &[u32]| -> f64 {
        let hit = match label {
            Label::Correct => generation_matches(text, &instance.e4),
            _ => compare_prefix(model, ids) != baseline_text,
        };
        f64::from(u8::from(hit))
    };
    let baseline_value = match label {
        Label::Correct => outcome(&baseline.text, &baseline.new_token_ids),
        _ => 0.0,
    };

    let mut values = Vec::with_capacity(positions.len());
    for &span in positions {
        let blocked = tok.span(span);
        let mut row = Vec::with_capacity(n_layers);
        for center in 0..n_layers {
            let plan = InterventionPlan::new().with_knockout(Knockout {
                layers: knockout_window(center, n_layers),
                src_pos: tok.resolution,
                blocked: blocked.clone(),
            });
            let gen = model.greedy_decode(&tok.tokens.ids, opts.max_new, Some(&plan), false)?;
            row.push(outcome(&gen.text, &gen.new_token_ids));
        }
        values.push(row);
    }
    Ok(InstanceOutcome {
        label,
        baseline: baseline_value,
        values,
    })
}

fn compare_prefix(model: &Model, ids: &[u32]) -> String {
    model.vocab().decode(&ids[..ids.len().min(COMPARE_TOKENS)])
}

/// Knock out attention from the resolution token to each position span,
/// over a window of layers centered on every layer. Unlabeled instances
/// are labeled by their baseline generation.
pub fn knockout_sweep(
    model: &Model,
    instances: &[AnalogyInstance],
    positions: &[SpanLabel],
    opts: &SweepOptions,
) -> Result<Vec<SweepReport>> {
    let outcomes: Vec<InstanceOutcome> = instances
        .par_iter()
        .map(|inst| sweep_instance(model, inst, positions, opts))
        .collect::<Result<_>>()?;

    let n_layers = model.n_layers();
    let mut reports = Vec::new();
    for label in [Label::Correct, Label::Incorrect] {
        let group: Vec<&InstanceOutcome> = outcomes.iter().filter(|o| o.label == label).collect();
        if group.is_empty() {
            continue;
        }
        let n = group.len() as f64;
        let baseline: f64 = group.iter().map(|o| o.baseline).sum::<f64>() / n;
        let mut rows = vec![SweepRow {
            position: "baseline".into(),
            values: vec![baseline; n_layers],
        }];
        for (p, span) in positions.iter().enumerate() {
            let values = (0..n_layers)
                .map(|l| group.iter().map(|o| o.values[p][l]).sum::<f64>() / n)
                .collect();
            rows.push(SweepRow {
                position: span.to_string(),
                values,
            });
        }
        reports.push(SweepReport {
            label,
            n_layers,
            n_instances: group.len(),
            rows,
        });
    }
    Ok(reports)
}

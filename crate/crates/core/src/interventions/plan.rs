// SPDX-License-Identifier: MIT OR Apache-2.0

//! Declarative interventions applied during a forward pass.

use std::collections::{BTreeSet, HashSet};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::{ForwardTrace, ModelConfig};

/// Block attention from `src_pos` to every key in `blocked` for all heads
/// of each layer in `layers` (−∞ added before the softmax).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Knockout {
    pub layers: BTreeSet<usize>,
    pub src_pos: usize,
    pub blocked: Range<usize>,
}

/// Overwrite the residual stream entering `layer` at `pos` with `vector`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub layer: usize,
    pub pos: usize,
    pub vector: Vec<f32>,
}

/// Where to read a patch vector from a recorded trace and where to write it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub src_layer: usize,
    pub src_pos: usize,
    pub tgt_layer: usize,
    pub tgt_pos: usize,
}

impl PatchSpec {
    pub fn resolve(&self, source: &ForwardTrace) -> Result<Patch> {
        if self.src_layer > source.n_layers() || self.src_pos >= source.seq_len() {
            return Err(Error::Plan(format!(
                "patch source (layer {}, pos {}) outside trace of {} layers x {} positions",
                self.src_layer,
                self.src_pos,
                source.n_layers(),
                source.seq_len()
            )));
        }
        Ok(Patch {
            layer: self.tgt_layer,
            pos: self.tgt_pos,
            vector: source.residual(self.src_layer, self.src_pos).to_vec(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterventionPlan {
    pub knockouts: Vec<Knockout>,
    pub patches: Vec<Patch>,
}

impl InterventionPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.knockouts.is_empty() && self.patches.is_empty()
    }

    pub fn with_knockout(mut self, knockout: Knockout) -> Self {
        self.knockouts.push(knockout);
        self
    }

    pub fn with_patch(mut self, patch: Patch) -> Self {
        self.patches.push(patch);
        self
    }

    /// Check indices against a model and a sequence of `seq_len` tokens.
    pub fn validate(&self, config: &ModelConfig, seq_len: usize) -> Result<()> {
        for ko in &self.knockouts {
            if let Some(&bad) = ko.layers.iter().find(|&&l| l >= config.n_layers) {
                return Err(Error::Plan(format!(
                    "knockout layer {bad} outside [0, {})",
                    config.n_layers
                )));
            }
            if ko.src_pos >= seq_len {
                return Err(Error::Plan(format!(
                    "knockout source position {} outside sequence of {seq_len}",
                    ko.src_pos
                )));
            }
            if ko.blocked.start > ko.blocked.end || ko.blocked.end > seq_len {
                return Err(Error::Plan(format!(
                    "blocked span {:?} outside sequence of {seq_len}",
                    ko.blocked
                )));
            }
        }
        let mut seen = HashSet::new();
        for p in &self.patches {
            if p.layer >= config.n_layers {
                return Err(Error::Plan(format!(
                    "patch layer {} outside [0, {})",
                    p.layer, config.n_layers
                )));
            }
            if p.pos >= seq_len {
                return Err(Error::Plan(format!(
                    "patch position {} outside sequence of {seq_len}",
                    p.pos
                )));
            }
            if p.vector.len() != config.d_model {
                return Err(Error::Plan(format!(
                    "patch vector has dimension {}, model has d_model {}",
                    p.vector.len(),
                    config.d_model
                )));
            }
            if !seen.insert((p.layer, p.pos)) {
                return Err(Error::Plan(format!(
                    "two patches target layer {} position {}",
                    p.layer, p.pos
                )));
            }
        }
        Ok(())
    }
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoding hidden states through crafted target prompts.
//!
//! A state recorded from the analogy prompt is written into the position
//! of the placeholder `x` of a target prompt, and the greedy continuation
//! is read as a description of that state. Descriptions are then scored
//! for the instance's relation (relational information) or for entities
//! related to the entity at that position (attributive information).

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnalogyInstance, Label};
use crate::error::{Error, Result};
use crate::interventions::plan::{InterventionPlan, Patch};
use crate::model::{ForwardTrace, Model, TokenSequence};
use crate::report;
use crate::text::whole_word_hits;

/// Few-shot relation exemplars shared by the relational prompts.
pub const RELATION_EXEMPLARS: &str = "Japan is to Tokyo: capital of, Theory of Evolution is to Charles Darwin: founder of, Peace is to olive branch: symbol of, ";

/// Entity-description prompt used for attributive decoding.
pub const ATTRIBUTIVE_PROMPT: &str = "Syria: Country in the Middle East, Leonardo DiCaprio: American actor, Samsung: South Korean multinational major appliance and consumer electronics corporation, x";

/// Generated tokens per description.
pub const DESCRIPTION_TOKENS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    /// Tail `"{e1} is to x"`, for states at e2.
    RelationalE2,
    /// Tail `"x is to {e4}"`, for states at e3.
    RelationalE3,
    /// Tail `"{e3} is x"` and `"{e4} is x"`, for the resolution token.
    RelationalResolution,
    AttributiveDefault,
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptKind::RelationalE2 => "relational_e2",
            PromptKind::RelationalE3 => "relational_e3",
            PromptKind::RelationalResolution => "relational_resolution",
            PromptKind::AttributiveDefault => "attributive_default",
        })
    }
}

impl FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relational_e2" => Ok(PromptKind::RelationalE2),
            "relational_e3" => Ok(PromptKind::RelationalE3),
            "relational_resolution" => Ok(PromptKind::RelationalResolution),
            "attributive_default" => Ok(PromptKind::AttributiveDefault),
            other => Err(Error::Dataset(format!("unknown target prompt kind {other:?}"))),
        }
    }
}

/// A rendered target prompt and the byte offset of its placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetPrompt {
    pub kind: PromptKind,
    pub text: String,
    pub placeholder: usize,
}

impl TargetPrompt {
    fn relational(kind: PromptKind, tail_before: &str, tail_after: &str) -> Self {
        let mut text = String::from(RELATION_EXEMPLARS);
        text.push_str(tail_before);
        let placeholder = text.len();
        text.push('x');
        text.push_str(tail_after);
        Self {
            kind,
            text,
            placeholder,
        }
    }

    /// Tokenize and locate the single token holding the placeholder.
    pub fn tokenize(&self, model: &Model) -> Result<(TokenSequence, usize)> {
        let tokens = model.tokenize(&self.text);
        let range = tokens
            .tokens_covering(self.placeholder, self.placeholder + 1)
            .ok_or_else(|| Error::Dataset("placeholder not found in target prompt".into()))?;
        Ok((tokens, range.start))
    }
}

/// Render the target prompts of `kind` for an instance. The resolution
/// kind yields two prompts, one filled with e3 and one with e4.
pub fn build_prompts(kind: PromptKind, instance: &AnalogyInstance) -> Vec<TargetPrompt> {
    match kind {
        PromptKind::RelationalE2 => vec![TargetPrompt::relational(kind, &format!("{} is to ", instance.e1), "")],
        PromptKind::RelationalE3 => vec![TargetPrompt::relational(kind, "", &format!(" is to {}", instance.e4))],
        PromptKind::RelationalResolution => [&instance.e3, &instance.e4]
            .into_iter()
            .map(|e| TargetPrompt::relational(kind, &format!("{e} is "), ""))
            .collect(),
        PromptKind::AttributiveDefault => vec![TargetPrompt {
            kind,
            text: ATTRIBUTIVE_PROMPT.to_string(),
            placeholder: ATTRIBUTIVE_PROMPT.len() - 1,
        }],
    }
}

/// Patch `source.residual(src_layer, src_pos)` into the placeholder of
/// `prompt` at `target_layer` and decode greedily.
pub fn run_patchscope(
    model: &Model,
    source: &ForwardTrace,
    src_layer: usize,
    src_pos: usize,
    prompt: &TargetPrompt,
    target_layer: usize,
    max_new: usize,
) -> Result<String> {
    if src_layer > source.n_layers() || src_pos >= source.seq_len() {
        return Err(Error::Plan(format!(
            "patchscope source (layer {src_layer}, pos {src_pos}) outside trace"
        )));
    }
    let (tokens, placeholder) = prompt.tokenize(model)?;
    let plan = InterventionPlan::new().with_patch(Patch {
        layer: target_layer,
        pos: placeholder,
        vector: source.residual(src_layer, src_pos).to_vec(),
    });
    Ok(model.greedy_decode(&tokens.ids, max_new, Some(&plan), false)?.text)
}

/// True iff some alias occurs case-insensitively in the description.
pub fn score_relational(description: &str, aliases: &[String]) -> bool {
    relational_matches(description, aliases).next().is_some()
}

fn relational_matches<'a>(description: &str, aliases: &'a [String]) -> impl Iterator<Item = &'a String> {
    let lower = description.to_lowercase();
    aliases
        .iter()
        .filter(move |a| !a.trim().is_empty() && lower.contains(&a.to_lowercase()))
}

/// True iff some related entity appears as a whole word (case-insensitive).
pub fn score_attributive<S: AsRef<str>>(description: &str, related: &[S]) -> bool {
    related.iter().any(|r| whole_word_hits(description, r.as_ref()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DescriptionScore {
    pub description: String,
    pub relational_hit: bool,
    pub attributive_hit: bool,
    pub matched: Vec<String>,
}

/// Which information a layer sweep looks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfoKind {
    Relational,
    Attributive,
}

/// Analogy positions whose states are decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourcePosition {
    E2,
    E3,
    Resolution,
}

impl SourcePosition {
    /// Entity whose related-entity set scores attributive descriptions.
    pub fn entity(self, instance: &AnalogyInstance) -> &str {
        match self {
            SourcePosition::E2 => &instance.e2,
            SourcePosition::E3 => &instance.e3,
            SourcePosition::Resolution => &instance.e4,
        }
    }

    pub fn prompt_kind(self, info: InfoKind) -> PromptKind {
        match (info, self) {
            (InfoKind::Attributive, _) => PromptKind::AttributiveDefault,
            (InfoKind::Relational, SourcePosition::E2) => PromptKind::RelationalE2,
            (InfoKind::Relational, SourcePosition::E3) => PromptKind::RelationalE3,
            (InfoKind::Relational, SourcePosition::Resolution) => PromptKind::RelationalResolution,
        }
    }
}

/// Related-entity sidecar: JSON object `{entity: [related strings]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelatedEntities(pub HashMap<String, Vec<String>>);

impl RelatedEntities {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn get(&self, entity: &str) -> Option<&[String]> {
        self.0.get(entity).map(Vec::as_slice).filter(|s| !s.is_empty())
    }
}

/// Decides whether a description carries the information of interest.
pub trait DescriptionScorer: Sync {
    fn score(
        &self,
        instance: &AnalogyInstance,
        position: SourcePosition,
        info: InfoKind,
        description: &str,
    ) -> Result<DescriptionScore>;
}

/// Relation aliases for relational info, the sidecar for attributive info.
pub struct ReferenceScorer<'a> {
    pub related: &'a RelatedEntities,
}

impl DescriptionScorer for ReferenceScorer<'_> {
    fn score(
        &self,
        instance: &AnalogyInstance,
        position: SourcePosition,
        info: InfoKind,
        description: &str,
    ) -> Result<DescriptionScore> {
        let (matched, relational_hit, attributive_hit) = match info {
            InfoKind::Relational => {
                let aliases = instance.relation_aliases();
                let m: Vec<String> = relational_matches(description, &aliases).cloned().collect();
                let hit = !m.is_empty();
                (m, hit, false)
            }
            InfoKind::Attributive => {
                let entity = position.entity(instance);
                let related = self.related.get(entity).ok_or_else(|| {
                    Error::Dataset(format!("instance {}: no related entities for {entity:?}", instance.id))
                })?;
                let m: Vec<String> = related
                    .iter()
                    .filter(|r| whole_word_hits(description, r))
                    .cloned()
                    .collect();
                let hit = !m.is_empty();
                (m, false, hit)
            }
        };
        Ok(DescriptionScore {
            description: description.to_string(),
            relational_hit,
            attributive_hit,
            matched,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PatchscopeOptions {
    pub max_new: usize,
    /// Fixed injection layer; `None` injects at the source layer.
    pub target_layer: Option<usize>,
}

impl Default for PatchscopeOptions {
    fn default() -> Self {
        Self {
            max_new: DESCRIPTION_TOKENS,
            target_layer: None,
        }
    }
}

/// Per-layer proportion of instances whose description carries the
/// requested information, one curve per label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCurves {
    pub n_layers: usize,
    pub curves: Vec<LabelCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelCurve {
    pub label: Label,
    pub n_instances: usize,
    pub proportions: Vec<f64>,
}

impl LayerCurves {
    pub fn no_data(&self) -> bool {
        self.curves.is_empty()
    }

    /// Rows `(layer, label, proportion)`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut rows = Vec::new();
        for c in &self.curves {
            for (layer, p) in c.proportions.iter().enumerate() {
                rows.push(vec![layer.to_string(), c.label.to_string(), report::fmt_value(*p)]);
            }
        }
        report::records_csv(&["layer", "label", "proportion"], &rows)
    }
}

/// Decode the state at `position` from every layer of every instance and
/// score it. A layer counts as a hit when any of its prompts' descriptions
/// scores.
pub fn layer_sweep_decode(
    model: &Model,
    instances: &[AnalogyInstance],
    position: SourcePosition,
    info: InfoKind,
    scorer: &dyn DescriptionScorer,
    opts: &PatchscopeOptions,
) -> Result<LayerCurves> {
    let n_layers = model.n_layers();
    let kind = position.prompt_kind(info);
    let hits: Vec<(Label, Vec<bool>)> = instances
        .par_iter()
        .map(|inst| {
            let tok = inst.tokenize(model.vocab())?;
            let src_pos = match position {
                SourcePosition::E2 => tok.last_of(crate::dataset::SpanLabel::E2),
                SourcePosition::E3 => tok.last_of(crate::dataset::SpanLabel::E3),
                SourcePosition::Resolution => tok.resolution,
            };
            let trace = model.forward(&tok.tokens, None)?;
            let prompts = build_prompts(kind, inst);
            let mut per_layer = Vec::with_capacity(n_layers);
            for layer in 0..n_layers {
                let target_layer = opts.target_layer.unwrap_or(layer);
                let mut hit = false;
                for prompt in &prompts {
                    let desc = run_patchscope(model, &trace, layer, src_pos, prompt, target_layer, opts.max_new)?;
                    let s = scorer.score(inst, position, info, &desc)?;
                    hit |= s.relational_hit || s.attributive_hit;
                }
                per_layer.push(hit);
            }
            Ok((inst.label, per_layer))
        })
        .collect::<Result<_>>()?;

    let mut curves = Vec::new();
    for label in [Label::Correct, Label::Incorrect, Label::Unlabeled] {
        let group: Vec<&Vec<bool>> = hits.iter().filter(|(l, _)| *l == label).map(|(_, h)| h).collect();
        if group.is_empty() {
            continue;
        }
        let n = group.len() as f64;
        let proportions = (0..n_layers)
            .map(|l| group.iter().filter(|h| h[l]).count() as f64 / n)
            .collect();
        curves.push(LabelCurve {
            label,
            n_instances: group.len(),
            proportions,
        });
    }
    Ok(LayerCurves { n_layers, curves })
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Proportional-analogy and story-analogy datasets: construction,
//! filtering against an answer oracle, balanced sampling and two-option
//! story evaluation.

mod analogy;
mod filters;
pub mod io;
mod oracle;
mod story;

pub use analogy::{AnalogyInstance, CharSpan, EntitySpans, Label, RelationPairRecord, SpanLabel, TokenizedAnalogy};
pub use filters::{
    generate_analogies, knowledge_filter, label_instances, sample_split, shortcut_filter, FilterVerdict, QueryEvidence,
    DEFAULT_QUERY_TEMPLATE,
};
pub use oracle::{EngineOracle, FnOracle, ModelOracle, ScriptedOracle};
pub use story::{
    parse_selection, render_pair, render_question, story_eval, OptionScheme, PairPrompt, StoryInstance, StoryTrial,
    StoryVerdict,
};

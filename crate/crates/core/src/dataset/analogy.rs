// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TokenSequence, Vocab};

/// One (head, tail) pair of a curated relation, as stored in the KB file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationPairRecord {
    pub relation_id: String,
    /// Phrase used in knowledge queries, e.g. "author of".
    pub relation_surface: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub head: String,
    pub tail: String,
    /// Overrides the default `"The {relation} {entity} is"` query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_template: Option<String>,
}

impl RelationPairRecord {
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("relation_id", &self.relation_id),
            ("relation_surface", &self.relation_surface),
            ("head", &self.head),
            ("tail", &self.tail),
        ] {
            if value.trim().is_empty() {
                return Err(Error::Dataset(format!("relation record has empty {field}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Correct,
    Incorrect,
    #[default]
    Unlabeled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Correct => "correct",
            Label::Incorrect => "incorrect",
            Label::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Byte range `[start, end)` in the prompt text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan(pub usize, pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpans {
    pub e1: CharSpan,
    pub e2: CharSpan,
    pub link: CharSpan,
    pub e3: CharSpan,
}

/// Prompt positions analyzed by the knockout sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanLabel {
    E1,
    E2,
    Link,
    E3,
}

impl SpanLabel {
    pub const ALL: [SpanLabel; 4] = [SpanLabel::E1, SpanLabel::E2, SpanLabel::Link, SpanLabel::E3];

    pub fn as_str(self) -> &'static str {
        match self {
            SpanLabel::E1 => "e1",
            SpanLabel::E2 => "e2",
            SpanLabel::Link => "link",
            SpanLabel::E3 => "e3",
        }
    }
}

impl fmt::Display for SpanLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpanLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e1" => Ok(SpanLabel::E1),
            "e2" => Ok(SpanLabel::E2),
            "link" => Ok(SpanLabel::Link),
            "e3" => Ok(SpanLabel::E3),
            other => Err(Error::Dataset(format!(
                "unknown span {other:?} (expected e1, e2, link or e3)"
            ))),
        }
    }
}

/// "e1 is to e2 as e3 is to", with e4 as the expected completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalogyInstance {
    pub id: String,
    pub relation_id: String,
    pub relation_surface: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_template: Option<String>,
    pub e1: String,
    pub e2: String,
    pub e3: String,
    pub e4: String,
    #[serde(default)]
    pub prompt: String,
    #[serde(default = "EntitySpans::unset")]
    pub spans: EntitySpans,
    #[serde(default)]
    pub label: Label,
}

impl EntitySpans {
    fn unset() -> Self {
        let z = CharSpan(0, 0);
        Self {
            e1: z,
            e2: z,
            link: z,
            e3: z,
        }
    }
}

/// Tokenized prompt with token ranges for each analyzed position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedAnalogy {
    pub tokens: TokenSequence,
    pub e1: Range<usize>,
    pub e2: Range<usize>,
    pub link: Range<usize>,
    pub e3: Range<usize>,
    /// Last prompt token; the answer is produced here.
    pub resolution: usize,
}

impl TokenizedAnalogy {
    pub fn span(&self, label: SpanLabel) -> Range<usize> {
        match label {
            SpanLabel::E1 => self.e1.clone(),
            SpanLabel::E2 => self.e2.clone(),
            SpanLabel::Link => self.link.clone(),
            SpanLabel::E3 => self.e3.clone(),
        }
    }

    /// Final token of a span; carries patch sources and targets.
    pub fn last_of(&self, label: SpanLabel) -> usize {
        self.span(label).end - 1
    }
}

fn render(e1: &str, e2: &str, e3: &str) -> (String, EntitySpans) {
    let mut prompt = String::new();
    let mut push = |s: &str| {
        let start = prompt.len();
        prompt.push_str(s);
        CharSpan(start, prompt.len())
    };
    let s1 = push(e1);
    push(" is to ");
    let s2 = push(e2);
    push(" ");
    let link = push("as");
    push(" ");
    let s3 = push(e3);
    push(" is to");
    (
        prompt,
        EntitySpans {
            e1: s1,
            e2: s2,
            link,
            e3: s3,
        },
    )
}

impl AnalogyInstance {
    pub fn new(
        id: impl Into<String>,
        relation: &RelationPairRecord,
        first: (&str, &str),
        second: (&str, &str),
    ) -> Self {
        let (prompt, spans) = render(first.0, first.1, second.0);
        Self {
            id: id.into(),
            relation_id: relation.relation_id.clone(),
            relation_surface: relation.relation_surface.clone(),
            aliases: relation.aliases.clone(),
            query_template: relation.query_template.clone(),
            e1: first.0.to_string(),
            e2: first.1.to_string(),
            e3: second.0.to_string(),
            e4: second.1.to_string(),
            prompt,
            spans,
            label: Label::Unlabeled,
        }
    }

    /// Recompute prompt and spans from the entity strings. A non-empty
    /// stored prompt must match the rendering.
    pub fn finalize(&mut self) -> Result<()> {
        for (field, value) in [("e1", &self.e1), ("e2", &self.e2), ("e3", &self.e3), ("e4", &self.e4)] {
            if value.trim().is_empty() {
                return Err(Error::Dataset(format!("instance {}: empty {field}", self.id)));
            }
        }
        let (prompt, spans) = render(&self.e1, &self.e2, &self.e3);
        if !self.prompt.is_empty() && self.prompt != prompt {
            return Err(Error::Dataset(format!(
                "instance {}: prompt {:?} does not match entities (expected {prompt:?})",
                self.id, self.prompt
            )));
        }
        self.prompt = prompt;
        self.spans = spans;
        Ok(())
    }

    /// Same relation and second pair, first pair replaced.
    pub fn with_first_pair(&self, e1: &str, e2: &str) -> Self {
        let (prompt, spans) = render(e1, e2, &self.e3);
        Self {
            e1: e1.to_string(),
            e2: e2.to_string(),
            prompt,
            spans,
            label: Label::Unlabeled,
            ..self.clone()
        }
    }

    /// Aliases used to recognize the relation in generated text; falls
    /// back to the surface form.
    pub fn relation_aliases(&self) -> Vec<String> {
        if self.aliases.is_empty() {
            vec![self.relation_surface.clone()]
        } else {
            self.aliases.clone()
        }
    }

    pub fn tokenize(&self, vocab: &Vocab) -> Result<TokenizedAnalogy> {
        let tokens = vocab.encode(&self.prompt);
        let span = |name: &str, s: CharSpan| {
            tokens
                .tokens_covering(s.0, s.1)
                .ok_or_else(|| Error::Dataset(format!("instance {}: span {name} covers no tokens", self.id)))
        };
        let e1 = span("e1", self.spans.e1)?;
        let e2 = span("e2", self.spans.e2)?;
        let link = span("link", self.spans.link)?;
        let e3 = span("e3", self.spans.e3)?;
        let resolution = tokens
            .last_index()
            .ok_or_else(|| Error::Dataset(format!("instance {}: empty prompt", self.id)))?;
        Ok(TokenizedAnalogy {
            tokens,
            e1,
            e2,
            link,
            e3,
            resolution,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> RelationPairRecord {
        RelationPairRecord {
            relation_id: "author_of".into(),
            relation_surface: "author of".into(),
            aliases: vec![],
            head: "Persuasion".into(),
            tail: "Jane Austen".into(),
            query_template: None,
        }
    }

    #[test]
    fn renders_prompt_and_spans() {
        let inst = AnalogyInstance::new("x", &record(), ("Persuasion", "Jane Austen"), ("1984", "George Orwell"));
        assert_eq!(inst.prompt, "Persuasion is to Jane Austen as 1984 is to");
        let p = &inst.prompt;
        assert_eq!(&p[inst.spans.e1.0..inst.spans.e1.1], "Persuasion");
        assert_eq!(&p[inst.spans.e2.0..inst.spans.e2.1], "Jane Austen");
        assert_eq!(&p[inst.spans.link.0..inst.spans.link.1], "as");
        assert_eq!(&p[inst.spans.e3.0..inst.spans.e3.1], "1984");
    }

    #[test]
    fn token_spans_and_resolution() {
        let vocab = Vocab::from_words(&["Persuasion", " is", " to", " Jane", " Austen", " as", " 1984"]);
        let inst = AnalogyInstance::new("x", &record(), ("Persuasion", "Jane Austen"), ("1984", "George Orwell"));
        let tok = inst.tokenize(&vocab).unwrap();
        assert_eq!(tok.e1, 0..1);
        assert_eq!(tok.e2, 3..5);
        assert_eq!(tok.link, 5..6);
        assert_eq!(tok.e3, 6..7);
        assert_eq!(tok.resolution, 8);
        assert_eq!(tok.last_of(SpanLabel::E2), 4);
    }

    #[test]
    fn finalize_checks_prompt() {
        let mut inst = AnalogyInstance::new("x", &record(), ("A", "B"), ("C", "D"));
        inst.prompt = "something else".into();
        assert!(inst.finalize().is_err());
        inst.prompt.clear();
        inst.finalize().unwrap();
        assert_eq!(inst.prompt, "A is to B as C is to");
    }

    #[test]
    fn span_label_parse() {
        assert_eq!("link".parse::<SpanLabel>().unwrap(), SpanLabel::Link);
        assert!("e4".parse::<SpanLabel>().is_err());
    }
}

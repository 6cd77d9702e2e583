// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-option story analogies. Each question is asked twice with the
//! option order reversed; a verdict is correct only when the target story
//! is picked both times.

use serde::{Deserialize, Serialize};

use super::analogy::Label;
use super::oracle::ModelOracle;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryInstance {
    pub id: String,
    pub source: String,
    pub target: String,
    pub distractor: String,
    /// Whether the target is listed first in the first trial.
    #[serde(default = "default_true")]
    pub target_first: bool,
    #[serde(default)]
    pub label: Label,
}

fn default_true() -> bool {
    true
}

impl StoryInstance {
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("source", &self.source),
            ("target", &self.target),
            ("distractor", &self.distractor),
        ] {
            if value.trim().is_empty() {
                return Err(Error::Dataset(format!("story {}: empty {field}", self.id)));
            }
        }
        if self.target == self.distractor {
            return Err(Error::Dataset(format!("story {}: target equals distractor", self.id)));
        }
        Ok(())
    }
}

/// How the two options are labeled in the prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionScheme {
    #[default]
    Numeric,
    Alphabetic,
}

impl OptionScheme {
    pub fn labels(self) -> [&'static str; 2] {
        match self {
            OptionScheme::Numeric => ["1", "2"],
            OptionScheme::Alphabetic => ["A", "B"],
        }
    }
}

/// Render the question with `first` listed as option one.
pub fn render_question(source: &str, first: &str, second: &str, scheme: OptionScheme) -> String {
    let [a, b] = scheme.labels();
    format!(
        "Source story: {source}\nWhich of the following stories is analogous to the source story?\n{a}. {first}\n{b}. {second}\nAnswer:"
    )
}

/// Index (0 or 1) of the first standalone option label in `reply`.
pub fn parse_selection(reply: &str, scheme: OptionScheme) -> Option<usize> {
    let labels = scheme.labels();
    reply
        .split(|c: char| !c.is_alphanumeric())
        .find_map(|word| labels.iter().position(|l| *l == word))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryTrial {
    pub prompt: String,
    pub reply: String,
    /// Option index holding the target story.
    pub target_option: usize,
    pub selected: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryVerdict {
    pub story_id: String,
    pub correct: bool,
    /// Some reply named no option; such trials count as wrong.
    pub unparseable: bool,
    pub trials: Vec<StoryTrial>,
}

pub fn story_eval(oracle: &dyn ModelOracle, story: &StoryInstance, scheme: OptionScheme) -> Result<StoryVerdict> {
    story.validate()?;
    let mut trials = Vec::with_capacity(2);
    for target_first in [story.target_first, !story.target_first] {
        let (first, second, target_option) = if target_first {
            (&story.target, &story.distractor, 0)
        } else {
            (&story.distractor, &story.target, 1)
        };
        let prompt = render_question(&story.source, first, second, scheme);
        let reply = oracle.answer(&prompt)?;
        let selected = parse_selection(&reply, scheme);
        trials.push(StoryTrial {
            prompt,
            reply,
            target_option,
            selected,
        });
    }
    Ok(StoryVerdict {
        story_id: story.id.clone(),
        correct: trials.iter().all(|t| t.selected == Some(t.target_option)),
        unparseable: trials.iter().any(|t| t.selected.is_none()),
        trials,
    })
}

/// Source and candidate story joined into one prompt, with the byte range
/// of each story (scaffolding excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPrompt {
    pub text: String,
    pub source: (usize, usize),
    pub candidate: (usize, usize),
}

pub fn render_pair(source: &str, candidate: &str) -> PairPrompt {
    let mut text = String::from("Story A: ");
    let s0 = text.len();
    text.push_str(source);
    let s1 = text.len();
    text.push_str(" Story B: ");
    let c0 = text.len();
    text.push_str(candidate);
    let c1 = text.len();
    PairPrompt {
        text,
        source: (s0, s1),
        candidate: (c0, c1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FnOracle;

    fn story() -> StoryInstance {
        StoryInstance {
            id: "s1".into(),
            source: "Water flows through pipes into the house.".into(),
            target: "Air flows through the airways into the lungs.".into(),
            distractor: "Water is stored in a tank beside the house.".into(),
            target_first: true,
            label: Label::Unlabeled,
        }
    }

    #[test]
    fn position_biased_mock_is_incorrect() {
        let always_one = FnOracle(|_: &str| Ok(" 1".to_string()));
        let v = story_eval(&always_one, &story(), OptionScheme::Numeric).unwrap();
        assert!(!v.correct);
        assert!(!v.unparseable);
        assert_eq!(v.trials[0].selected, Some(0));
        assert_eq!(v.trials[1].target_option, 1);
    }

    #[test]
    fn target_keyed_mock_is_correct() {
        let s = story();
        let target = s.target.clone();
        for scheme in [OptionScheme::Numeric, OptionScheme::Alphabetic] {
            let target = target.clone();
            let keyed = FnOracle(move |prompt: &str| {
                let [a, b] = scheme.labels();
                let first_line = prompt.lines().find(|l| l.starts_with(&format!("{a}. "))).unwrap();
                Ok(if first_line.ends_with(target.as_str()) {
                    format!(" {a}")
                } else {
                    format!(" {b}")
                })
            });
            let v = story_eval(&keyed, &s, scheme).unwrap();
            assert!(v.correct, "{scheme:?}");
        }
    }

    #[test]
    fn unparseable_counts_incorrect() {
        let mumble = FnOracle(|_: &str| Ok(" I am not sure".to_string()));
        let v = story_eval(&mumble, &story(), OptionScheme::Numeric).unwrap();
        assert!(!v.correct);
        assert!(v.unparseable);
    }

    #[test]
    fn parser_takes_first_standalone_label() {
        assert_eq!(parse_selection("Option 2, not 1", OptionScheme::Numeric), Some(1));
        assert_eq!(parse_selection("12 then 1", OptionScheme::Numeric), Some(0));
        assert_eq!(parse_selection("B.", OptionScheme::Alphabetic), Some(1));
        assert_eq!(parse_selection("Both", OptionScheme::Alphabetic), None);
    }

    #[test]
    fn identical_target_and_distractor_rejected() {
        let mut s = story();
        s.distractor = s.target.clone();
        assert!(s.validate().is_err());
    }

    #[test]
    fn pair_prompt_ranges() {
        let p = render_pair("one two", "three");
        assert_eq!(p.text, "Story A: one two Story B: three");
        assert_eq!(&p.text[p.source.0..p.source.1], "one two");
        assert_eq!(&p.text[p.candidate.0..p.candidate.1], "three");
    }
}

// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::analogy::{AnalogyInstance, Label, RelationPairRecord};
use super::oracle::ModelOracle;
use crate::error::{Error, Result};
use crate::text::answer_matches;

pub const DEFAULT_QUERY_TEMPLATE: &str = "The {relation} {entity} is";

/// Every ordered combination of two distinct pairs sharing a relation.
/// Relations keep first-appearance order; relations with fewer than two
/// pairs contribute nothing.
pub fn generate_analogies(records: &[RelationPairRecord]) -> Result<Vec<AnalogyInstance>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&RelationPairRecord>> = BTreeMap::new();
    for r in records {
        r.validate()?;
        let group = groups.entry(r.relation_id.as_str()).or_default();
        if group.is_empty() {
            order.push(r.relation_id.as_str());
        }
        group.push(r);
    }
    let mut out = Vec::new();
    for rel in order {
        let pairs = &groups[rel];
        for (i, a) in pairs.iter().enumerate() {
            for (j, b) in pairs.iter().enumerate() {
                if i == j || (a.head == b.head && a.tail == b.tail) {
                    continue;
                }
                out.push(AnalogyInstance::new(
                    format!("{rel}-{i}-{j}"),
                    a,
                    (&a.head, &a.tail),
                    (&b.head, &b.tail),
                ));
            }
        }
    }
    Ok(out)
}

/// One oracle query and whether its answer matched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryEvidence {
    pub prompt: String,
    pub answer: String,
    pub expected: String,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub keep: bool,
    pub evidence: Vec<QueryEvidence>,
}

fn ask(oracle: &dyn ModelOracle, prompt: String, expected: &str) -> Result<QueryEvidence> {
    let answer = oracle.answer(&prompt)?;
    let matched = answer_matches(&answer, expected);
    Ok(QueryEvidence {
        prompt,
        answer,
        expected: expected.to_string(),
        matched,
    })
}

fn knowledge_query(instance: &AnalogyInstance, entity: &str) -> String {
    instance
        .query_template
        .as_deref()
        .unwrap_or(DEFAULT_QUERY_TEMPLATE)
        .replace("{relation}", &instance.relation_surface)
        .replace("{entity}", entity)
}

/// Keep only instances whose both pairs the oracle knows: the relation
/// query for e1 must yield e2 and the one for e3 must yield e4.
pub fn knowledge_filter(oracle: &dyn ModelOracle, instance: &AnalogyInstance) -> Result<FilterVerdict> {
    let first = ask(oracle, knowledge_query(instance, &instance.e1), &instance.e2)?;
    let second = ask(oracle, knowledge_query(instance, &instance.e3), &instance.e4)?;
    Ok(FilterVerdict {
        keep: first.matched && second.matched,
        evidence: vec![first, second],
    })
}

/// Drop instances the oracle solves without the full analogy: once with
/// e2 removed, once with the first pair removed.
pub fn shortcut_filter(oracle: &dyn ModelOracle, instance: &AnalogyInstance) -> Result<FilterVerdict> {
    let no_e2 = format!("{} is to as {} is to", instance.e1, instance.e3);
    let no_first_pair = format!("{} is to", instance.e3);
    let a = ask(oracle, no_e2, &instance.e4)?;
    let b = ask(oracle, no_first_pair, &instance.e4)?;
    Ok(FilterVerdict {
        keep: !(a.matched || b.matched),
        evidence: vec![a, b],
    })
}

/// Label each instance by whether the oracle completes the full prompt
/// with e4.
pub fn label_instances(oracle: &dyn ModelOracle, instances: &[AnalogyInstance]) -> Result<Vec<AnalogyInstance>> {
    instances
        .par_iter()
        .map(|inst| {
            let answer = oracle.answer(&inst.prompt)?;
            let mut out = inst.clone();
            out.label = if answer_matches(&answer, &inst.e4) {
                Label::Correct
            } else {
                Label::Incorrect
            };
            Ok(out)
        })
        .collect()
}

/// Seeded uniform sample of `n_per_label` correct and `n_per_label`
/// incorrect instances, without replacement. Sampled items keep their
/// input order within each label.
pub fn sample_split(instances: &[AnalogyInstance], n_per_label: usize, seed: u64) -> Result<Vec<AnalogyInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * n_per_label);
    for label in [Label::Correct, Label::Incorrect] {
        let pool: Vec<&AnalogyInstance> = instances.iter().filter(|i| i.label == label).collect();
        if pool.len() < n_per_label {
            return Err(Error::Dataset(format!(
                "need {n_per_label} {label} instances, only {} available",
                pool.len()
            )));
        }
        let mut picked = index::sample(&mut rng, pool.len(), n_per_label).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| pool[i].clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FnOracle, ScriptedOracle};

    fn rec(rel: &str, head: &str, tail: &str) -> RelationPairRecord {
        RelationPairRecord {
            relation_id: rel.into(),
            relation_surface: rel.replace('_', " "),
            aliases: vec![],
            head: head.into(),
            tail: tail.into(),
            query_template: None,
        }
    }

    #[test]
    fn pair_counts() {
        let two = [
            rec("author_of", "Persuasion", "Jane Austen"),
            rec("author_of", "1984", "George Orwell"),
        ];
        let out = generate_analogies(&two).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].prompt, "Persuasion is to Jane Austen as 1984 is to");
        assert_eq!(out[0].e4, "George Orwell");

        let five: Vec<_> = (0..5).map(|i| rec("r", &format!("h{i}"), &format!("t{i}"))).collect();
        assert_eq!(generate_analogies(&five).unwrap().len(), 5 * 4);
    }

    #[test]
    fn duplicate_pairs_are_not_combined() {
        let recs = [rec("r", "a", "b"), rec("r", "a", "b"), rec("r", "c", "d")];
        // 3·2 ordered combinations minus the two (a,b)/(a,b) ones
        assert_eq!(generate_analogies(&recs).unwrap().len(), 4);
    }

    #[test]
    fn knowledge_queries_use_default_template() {
        let inst = &generate_analogies(&[
            rec("author_of", "Persuasion", "Jane Austen"),
            rec("author_of", "1984", "George Orwell"),
        ])
        .unwrap()[0];
        let mut oracle = ScriptedOracle::default();
        oracle.insert("The author of Persuasion is", " Jane Austen, an English novelist");
        oracle.insert("The author of 1984 is", " George Orwell.");
        let v = knowledge_filter(&oracle, inst).unwrap();
        assert!(v.keep);
        assert_eq!(v.evidence[0].prompt, "The author of Persuasion is");

        let none = ScriptedOracle::default();
        assert!(!knowledge_filter(&none, inst).unwrap().keep);
    }

    #[test]
    fn shortcut_queries() {
        let inst = &generate_analogies(&[
            rec("author_of", "Persuasion", "Jane Austen"),
            rec("author_of", "1984", "George Orwell"),
        ])
        .unwrap()[0];
        let everything_e4 = FnOracle(|_: &str| Ok(" George Orwell".to_string()));
        assert!(!shortcut_filter(&everything_e4, inst).unwrap().keep);

        let mut oracle = ScriptedOracle::default();
        oracle.insert("1984 is to", " George Orwell");
        let v = shortcut_filter(&oracle, inst).unwrap();
        assert!(!v.keep);
        assert_eq!(v.evidence[0].prompt, "Persuasion is to as 1984 is to");
        assert_eq!(v.evidence[1].prompt, "1984 is to");
        assert!(shortcut_filter(&ScriptedOracle::default(), inst).unwrap().keep);
    }

    #[test]
    fn custom_query_template() {
        let mut r1 = rec("official_language_of", "France", "French");
        r1.query_template = Some("The official language of {entity} is".into());
        let mut r2 = rec("official_language_of", "Spain", "Spanish");
        r2.query_template = r1.query_template.clone();
        let inst = &generate_analogies(&[r1, r2]).unwrap()[0];
        let v = knowledge_filter(&ScriptedOracle::default(), inst).unwrap();
        assert_eq!(v.evidence[0].prompt, "The official language of France is");
    }

    #[test]
    fn oracle_errors_propagate() {
        let inst = &generate_analogies(&[rec("r", "a", "b"), rec("r", "c", "d")]).unwrap()[0];
        let failing = FnOracle(|_: &str| Err(Error::Oracle("down".into())));
        assert!(matches!(knowledge_filter(&failing, inst), Err(Error::Oracle(_))));
        assert!(matches!(shortcut_filter(&failing, inst), Err(Error::Oracle(_))));
    }

    fn labeled(n_correct: usize, n_incorrect: usize) -> Vec<AnalogyInstance> {
        let recs: Vec<_> = (0..6).map(|i| rec("r", &format!("h{i}"), &format!("t{i}"))).collect();
        let mut all = generate_analogies(&recs).unwrap();
        all.truncate(n_correct + n_incorrect);
        for (i, inst) in all.iter_mut().enumerate() {
            inst.label = if i < n_correct {
                Label::Correct
            } else {
                Label::Incorrect
            };
        }
        all
    }

    #[test]
    fn sampling_is_deterministic_and_balanced() {
        let pool = labeled(10, 12);
        let a = sample_split(&pool, 5, 42).unwrap();
        let b = sample_split(&pool, 5, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|i| i.label == Label::Correct).count(), 5);
        assert_eq!(a.iter().filter(|i| i.label == Label::Incorrect).count(), 5);
    }

    #[test]
    fn sampling_whole_pool_and_insufficient() {
        let pool = labeled(4, 4);
        let all = sample_split(&pool, 4, 1).unwrap();
        assert_eq!(all, pool);
        assert!(matches!(sample_split(&pool, 5, 1), Err(Error::Dataset(_))));
    }
}

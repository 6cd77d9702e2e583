// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON-lines readers and writers.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{AnalogyInstance, RelationPairRecord, StoryInstance};
use crate::error::{Error, Result};

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text).map_err(|e| match e {
        Error::Dataset(msg) => Error::Dataset(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| serde_json::from_str(line).map_err(|e| Error::Dataset(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn read_kb(path: &Path) -> Result<Vec<RelationPairRecord>> {
    let records: Vec<RelationPairRecord> = read_jsonl(path)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

/// Reads analogy instances, filling in prompt and spans.
pub fn read_analogies(path: &Path) -> Result<Vec<AnalogyInstance>> {
    let mut items: Vec<AnalogyInstance> = read_jsonl(path)?;
    for item in &mut items {
        item.finalize()?;
    }
    Ok(items)
}

pub fn read_stories(path: &Path) -> Result<Vec<StoryInstance>> {
    let items: Vec<StoryInstance> = read_jsonl(path)?;
    for item in &items {
        item.validate()?;
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_analogy_line_is_completed() {
        let line = r#"{"id":"a","relation_id":"author_of","relation_surface":"author of","e1":"Persuasion","e2":"Jane Austen","e3":"1984","e4":"George Orwell"}"#;
        let mut items: Vec<AnalogyInstance> = parse_jsonl(line).unwrap();
        items[0].finalize().unwrap();
        assert_eq!(items[0].prompt, "Persuasion is to Jane Austen as 1984 is to");
        let bytes = to_jsonl(&items).unwrap();
        let back: Vec<AnalogyInstance> = parse_jsonl(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(back, items);
    }

    #[test]
    fn bad_line_reports_line_number() {
        let err = parse_jsonl::<StoryInstance>("\n{}\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}

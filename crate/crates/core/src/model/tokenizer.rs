// SPDX-License-Identifier: MIT OR Apache-2.0

//! Greedy longest-match tokenizer with single-byte fallback.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

/// Name of the fallback token for one raw byte.
pub fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

/// Token strings with dense ids. Always contains the 256 byte-fallback
/// tokens; every other token is matched literally against the input bytes.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    literal: HashMap<Vec<u8>, u32>,
    byte_ids: Vec<u32>,
    byte_of: HashMap<u32, u8>,
    max_literal_len: usize,
}

/// Token ids plus the byte range each token covers in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub char_spans: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Resolution position: the last token.
    pub fn last_index(&self) -> Option<usize> {
        self.ids.len().checked_sub(1)
    }

    /// Half-open token range covering every token that intersects the
    /// byte range `[start, end)`. `None` when no token intersects it.
    pub fn tokens_covering(&self, start: usize, end: usize) -> Option<std::ops::Range<usize>> {
        let mut first = None;
        let mut last = None;
        for (i, &(s, e)) in self.char_spans.iter().enumerate() {
            if s < end && start < e {
                first.get_or_insert(i);
                last = Some(i);
            }
        }
        Some(first?..last? + 1)
    }
}

impl Vocab {
    /// Build from a token → id map. Ids must be dense and every byte
    /// fallback token must be present.
    pub fn from_map(map: HashMap<String, u32>) -> Result<Self> {
        let n = map.len();
        let mut tokens = vec![None; n];
        for (tok, &id) in &map {
            let slot = tokens
                .get_mut(id as usize)
                .ok_or_else(|| Error::Vocab(format!("id {id} for {tok:?} outside [0, {n})")))?;
            if slot.is_some() {
                return Err(Error::Vocab(format!("duplicate id {id}")));
            }
            *slot = Some(tok.clone());
        }
        let tokens: Vec<String> = tokens.into_iter().map(|t| t.expect("dense ids")).collect();

        let mut byte_ids = Vec::with_capacity(256);
        for b in 0..=255u8 {
            let name = byte_token(b);
            let id = map
                .get(&name)
                .ok_or_else(|| Error::Vocab(format!("missing byte fallback token {name}")))?;
            byte_ids.push(*id);
        }
        let mut literal = HashMap::new();
        let mut max_literal_len = 0;
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || byte_ids.contains(&(id as u32)) {
                continue;
            }
            max_literal_len = max_literal_len.max(tok.len());
            literal.insert(tok.as_bytes().to_vec(), id as u32);
        }
        let byte_of = byte_ids.iter().enumerate().map(|(b, &id)| (id, b as u8)).collect();
        Ok(Self {
            tokens,
            ids: map,
            literal,
            byte_ids,
            byte_of,
            max_literal_len,
        })
    }

    /// Byte fallback tokens first (ids 0..256), then `words` in order,
    /// skipping duplicates.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let mut map = HashMap::new();
        for b in 0..=255u8 {
            map.insert(byte_token(b), u32::from(b));
        }
        for w in words {
            let w = w.as_ref();
            if !w.is_empty() && !map.contains_key(w) {
                let id = map.len() as u32;
                map.insert(w.to_string(), id);
            }
        }
        Self::from_map(map).expect("constructed vocab is dense")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Greedy longest match at every position; bytes no literal token
    /// covers become single-byte fallback tokens.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let bytes = text.as_bytes();
        let mut seq = TokenSequence::default();
        let mut pos = 0;
        while pos < bytes.len() {
            let longest = self.max_literal_len.min(bytes.len() - pos);
            let hit = (1..=longest)
                .rev()
                .find_map(|len| self.literal.get(&bytes[pos..pos + len]).map(|&id| (id, len)));
            let (id, len) = hit.unwrap_or((self.byte_ids[bytes[pos] as usize], 1));
            seq.ids.push(id);
            seq.char_spans.push((pos, pos + len));
            pos += len;
        }
        seq
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            if let Some(&b) = self.byte_of.get(&id) {
                bytes.push(b);
            } else if let Some(tok) = self.token(id) {
                bytes.extend_from_slice(tok.as_bytes());
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: HashMap<String, u32> = serde_json::from_str(&text)?;
        Self::from_map(map)
    }

    /// Written as a JSON object ordered by token string.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ordered: BTreeMap<&str, u32> = self.ids.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        let text = serde_json::to_string_pretty(&ordered)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

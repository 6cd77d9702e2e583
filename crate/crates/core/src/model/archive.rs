// SPDX-License-Identifier: MIT OR Apache-2.0

//! `TARC1` tensor archive.
//!
//! Layout: the magic bytes `TARC1\n`, a little-endian `u64` header length,
//! a UTF-8 JSON header mapping tensor name to `{dtype, shape, offset}`, then
//! the raw little-endian f32 payload. Offsets are in bytes, relative to the
//! start of the payload.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"TARC1\n";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
}

/// Named dense f32 tensors, fully memory resident.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    entries: BTreeMap<String, TensorEntry>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Archive(format!(
                "tensor {name}: shape {shape:?} holds {numel} values, got {}",
                data.len()
            )));
        }
        self.entries.insert(name, TensorEntry { shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = BTreeMap::new();
        let mut offset = 0usize;
        for (name, entry) in &self.entries {
            header.insert(
                name.clone(),
                HeaderEntry {
                    dtype: "f32".into(),
                    shape: entry.shape.clone(),
                    offset,
                },
            );
            offset += entry.data.len() * 4;
        }
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for entry in self.entries.values() {
            for v in &entry.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Archive("missing TARC1 magic".into()));
        }
        let mut len_bytes = [0u8; 8];
        len_bytes.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 8]);
        let header_len = usize::try_from(u64::from_le_bytes(len_bytes))
            .map_err(|_| Error::Archive("header length overflows usize".into()))?;
        let header_start = MAGIC.len() + 8;
        let payload_start = header_start
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Archive(format!("header length {header_len} exceeds file size")))?;
        let header: BTreeMap<String, HeaderEntry> = serde_json::from_slice(&bytes[header_start..payload_start])
            .map_err(|e| Error::Archive(format!("header is not valid JSON: {e}")))?;
        let payload = &bytes[payload_start..];

        let mut ranges = Vec::with_capacity(header.len());
        for (name, h) in &header {
            if h.dtype != "f32" {
                return Err(Error::Archive(format!("tensor {name}: unsupported dtype {}", h.dtype)));
            }
            if h.offset % 4 != 0 {
                return Err(Error::Archive(format!(
                    "tensor {name}: offset {} not 4-byte aligned",
                    h.offset
                )));
            }
            let numel = h
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Archive(format!("tensor {name}: shape overflows")))?;
            let end = h
                .offset
                .checked_add(numel)
                .ok_or_else(|| Error::Archive(format!("tensor {name}: offset overflows")))?;
            ranges.push((h.offset, end, name.as_str()));
        }
        ranges.sort();
        for pair in ranges.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::Archive(format!(
                    "tensors {} and {} overlap",
                    pair[0].2, pair[1].2
                )));
            }
        }
        let needed = ranges.iter().map(|r| r.1).max().unwrap_or(0);
        if payload.len() < needed {
            return Err(Error::Truncated {
                needed,
                found: payload.len(),
            });
        }

        let mut entries = BTreeMap::new();
        for (name, h) in header {
            let numel: usize = h.shape.iter().product();
            let raw = &payload[h.offset..h.offset + numel * 4];
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.insert(name, TensorEntry { shape: h.shape, data });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    /// Check that every tensor the config requires is present with the
    /// right shape.
    pub fn validate_against(&self, config: &ModelConfig) -> Result<()> {
        config.validate()?;
        for (name, shape) in config.expected_tensors() {
            match self.entries.get(&name) {
                None => return Err(Error::Config(format!("archive is missing tensor {name}"))),
                Some(e) if e.shape != shape => {
                    return Err(Error::Config(format!(
                        "tensor {name}: expected shape {shape:?}, found {:?}",
                        e.shape
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 1,
            d_model: 2,
            d_ff: 2,
            vocab_size: 3,
            max_seq_len: 4,
            norm_epsilon: 1e-5,
            rope_base: 10000.0,
        }
    }

    #[test]
    fn empty_archive_fails_config_validation() {
        let archive = TensorArchive::from_bytes(&TensorArchive::new().to_bytes().unwrap()).unwrap();
        assert!(archive.is_empty());
        assert!(matches!(
            archive.validate_against(&tiny_config()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut a = TensorArchive::new();
        a.insert("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = a.to_bytes().unwrap();
        let b = TensorArchive::from_bytes(&bytes).unwrap();
        let got: Vec<u32> = b.get("w").unwrap().data.iter().map(|v| v.to_bits()).collect();
        let want: Vec<u32> = [1.0f32, 2.0, 3.0, 4.0].iter().map(|v| v.to_bits()).collect();
        assert_eq!(got, want);
        assert_eq!(b.get("w").unwrap().shape, vec![2, 2]);
        assert_eq!(b.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn short_payload_is_truncated_error() {
        let mut a = TensorArchive::new();
        a.insert("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = a.to_bytes().unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            TensorArchive::from_bytes(&bytes),
            Err(Error::Truncated { needed: 16, found: 12 })
        ));
    }

    #[test]
    fn bad_magic_and_bad_header() {
        assert!(matches!(TensorArchive::from_bytes(b"NOPE"), Err(Error::Archive(_))));
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.extend_from_slice(b"{{{");
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(Error::Archive(_))));
    }

    #[test]
    fn overlapping_offsets_rejected() {
        let header = br#"{"a":{"dtype":"f32","shape":[2],"offset":0},"b":{"dtype":"f32","shape":[2],"offset":4}}"#;
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0u8; 12]);
        let err = TensorArchive::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("overlap"), "{err}");
    }

    #[test]
    fn shape_mismatch_against_config() {
        let config = tiny_config();
        let mut a = TensorArchive::new();
        for (name, shape) in config.expected_tensors() {
            let n = shape.iter().product();
            a.insert(name, shape, vec![0.0; n]).unwrap();
        }
        a.validate_against(&config).unwrap();
        a.insert("lm_head.weight", vec![2, 3], vec![0.0; 6]).unwrap();
        let err = a.validate_against(&config).unwrap_err();
        assert!(err.to_string().contains("lm_head.weight"));
    }
}

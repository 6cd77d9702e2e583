// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic decoder-only transformer with instrumentation hooks.

mod archive;
mod config;
mod engine;
mod generate;
mod tokenizer;

use std::path::Path;

pub use archive::{TensorArchive, TensorEntry, MAGIC};
pub use config::ModelConfig;
pub use engine::ForwardTrace;
pub use generate::GenerationResult;
pub use tokenizer::{byte_token, TokenSequence, Vocab};

use crate::error::{Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const ARCHIVE_FILE: &str = "model.tarc";
pub const VOCAB_FILE: &str = "vocab.json";

#[derive(Debug, Clone)]
pub(crate) struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub mlp_norm: Vec<f32>,
    pub gate: Vec<f32>,
    pub up: Vec<f32>,
    pub down: Vec<f32>,
}

/// Config, weights and vocab. Immutable once built; share freely across
/// threads.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    vocab: Vocab,
    embed: Vec<f32>,
    layers: Vec<LayerWeights>,
    final_norm: Vec<f32>,
    lm_head: Vec<f32>,
}

impl Model {
    pub fn from_parts(config: ModelConfig, archive: &TensorArchive, vocab: Vocab) -> Result<Self> {
        archive.validate_against(&config)?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocab has {} tokens, config says {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let take = |name: String| archive.get(&name).expect("validated").data.clone();
        let layers = (0..config.n_layers)
            .map(|l| {
                let p = |s: &str| format!("layers.{l}.{s}");
                LayerWeights {
                    attn_norm: take(p("attn_norm.weight")),
                    wq: take(p("attn.q.weight")),
                    wk: take(p("attn.k.weight")),
                    wv: take(p("attn.v.weight")),
                    wo: take(p("attn.o.weight")),
                    mlp_norm: take(p("mlp_norm.weight")),
                    gate: take(p("mlp.gate.weight")),
                    up: take(p("mlp.up.weight")),
                    down: take(p("mlp.down.weight")),
                }
            })
            .collect();
        Ok(Self {
            embed: take("embed.weight".into()),
            final_norm: take("final_norm.weight".into()),
            lm_head: take("lm_head.weight".into()),
            layers,
            vocab,
            config,
        })
    }

    /// Load `config.json`, `model.tarc` and `vocab.json` from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let config = ModelConfig::load(&dir.join(CONFIG_FILE))?;
        let archive = TensorArchive::load(&dir.join(ARCHIVE_FILE))?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        Self::from_parts(config, &archive, vocab)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    /// Embedding row of a token id.
    pub fn embedding(&self, id: u32) -> Option<&[f32]> {
        let d = self.config.d_model;
        let i = id as usize;
        (i < self.config.vocab_size).then(|| &self.embed[i * d..(i + 1) * d])
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        self.vocab.encode(text)
    }

    /// Value vectors (`[T, d_model]`, heads concatenated) that `layer`
    /// computes from the residual states entering it.
    pub fn value_vectors(&self, layer: usize, residual: &[f32]) -> Result<Vec<f32>> {
        let w = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::Plan(format!("layer {layer} outside [0, {})", self.n_layers())))?;
        let d = self.config.d_model;
        if !residual.len().is_multiple_of(d) {
            return Err(Error::Plan(format!(
                "residual length {} not a multiple of {d}",
                residual.len()
            )));
        }
        let normed = engine::rms_norm_rows(residual, &w.attn_norm, d, self.config.norm_epsilon);
        Ok(engine::project_rows(&normed, &w.wv, d, d))
    }
}

/// Write a model directory in the native formats.
pub fn save_model_dir(dir: &Path, config: &ModelConfig, archive: &TensorArchive, vocab: &Vocab) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    config.save(&dir.join(CONFIG_FILE))?;
    archive.save(&dir.join(ARCHIVE_FILE))?;
    vocab.save(&dir.join(VOCAB_FILE))
}

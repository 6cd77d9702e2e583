// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of a pre-norm decoder-only transformer with rotary
/// positions and a gated (SwiGLU) feed-forward block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Hidden width of the feed-forward block.
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub norm_epsilon: f32,
    pub rope_base: f32,
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_head().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "rotary embedding needs an even head dimension, got {}",
                self.d_head()
            )));
        }
        if !(self.norm_epsilon > 0.0 && self.norm_epsilon.is_finite()) {
            return Err(Error::Config("norm_epsilon must be a positive real".into()));
        }
        if !(self.rope_base > 0.0 && self.rope_base.is_finite()) {
            return Err(Error::Config("rope_base must be a positive real".into()));
        }
        Ok(())
    }

    /// Every parameter tensor the engine reads, with its expected shape.
    /// Matrices are stored `[out, in]`.
    pub fn expected_tensors(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = vec![("embed.weight".to_string(), vec![self.vocab_size, d])];
        for layer in 0..self.n_layers {
            let p = |s: &str| format!("layers.{layer}.{s}");
            out.push((p("attn_norm.weight"), vec![d]));
            out.push((p("attn.q.weight"), vec![d, d]));
            out.push((p("attn.k.weight"), vec![d, d]));
            out.push((p("attn.v.weight"), vec![d, d]));
            out.push((p("attn.o.weight"), vec![d, d]));
            out.push((p("mlp_norm.weight"), vec![d]));
            out.push((p("mlp.gate.weight"), vec![self.d_ff, d]));
            out.push((p("mlp.up.weight"), vec![self.d_ff, d]));
            out.push((p("mlp.down.weight"), vec![d, self.d_ff]));
        }
        out.push(("final_norm.weight".to_string(), vec![d]));
        out.push(("lm_head.weight".to_string(), vec![self.vocab_size, d]));
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ModelConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: 300,
            max_seq_len: 32,
            norm_epsilon: 1e-5,
            rope_base: 10000.0,
        }
    }

    #[test]
    fn valid_config_passes() {
        base().validate().unwrap();
        assert_eq!(base().d_head(), 4);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = base();
        c.n_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_odd_head_dim() {
        let mut c = base();
        c.d_model = 6;
        c.n_heads = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn expected_tensor_count() {
        assert_eq!(base().expected_tensors().len(), 3 + 9 * 2);
    }
}

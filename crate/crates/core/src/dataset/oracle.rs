// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;

/// Anything that answers a text prompt deterministically. Implementations
/// must tolerate concurrent queries.
pub trait ModelOracle: Send + Sync {
    fn answer(&self, prompt: &str) -> Result<String>;
}

/// Greedy continuation from the engine.
pub struct EngineOracle<'a> {
    model: &'a Model,
    max_new: usize,
}

impl<'a> EngineOracle<'a> {
    pub fn new(model: &'a Model, max_new: usize) -> Self {
        Self { model, max_new }
    }
}

impl ModelOracle for EngineOracle<'_> {
    fn answer(&self, prompt: &str) -> Result<String> {
        Ok(self.model.generate(prompt, self.max_new, None)?.text)
    }
}

/// Lookup table from exact prompt to answer, with a fallback for
/// unscripted prompts.
#[derive(Debug, Clone, Default)]
pub struct ScriptedOracle {
    answers: HashMap<String, String>,
    fallback: String,
}

impl ScriptedOracle {
    pub fn new(answers: HashMap<String, String>, fallback: impl Into<String>) -> Self {
        Self {
            answers,
            fallback: fallback.into(),
        }
    }

    pub fn insert(&mut self, prompt: impl Into<String>, answer: impl Into<String>) {
        self.answers.insert(prompt.into(), answer.into());
    }

    /// JSON object `{prompt: answer}`; the optional key `"*"` sets the
    /// fallback.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut answers: HashMap<String, String> = serde_json::from_str(&text)?;
        let fallback = answers.remove("*").unwrap_or_default();
        Ok(Self { answers, fallback })
    }
}

impl ModelOracle for ScriptedOracle {
    fn answer(&self, prompt: &str) -> Result<String> {
        Ok(self.answers.get(prompt).unwrap_or(&self.fallback).clone())
    }
}

/// Closure-backed oracle.
pub struct FnOracle<F>(pub F);

impl<F> ModelOracle for FnOracle<F>
where
    F: Fn(&str) -> Result<String> + Send + Sync,
{
    fn answer(&self, prompt: &str) -> Result<String> {
        (self.0)(prompt)
    }
}

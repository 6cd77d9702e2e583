// SPDX-License-Identifier: MIT OR Apache-2.0

use super::engine::argmax;
use super::{ForwardTrace, Model};
use crate::error::{Error, Result};
use crate::interventions::plan::InterventionPlan;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub new_token_ids: Vec<u32>,
    pub text: String,
    /// One trace per decoding step, when requested.
    pub traces: Option<Vec<ForwardTrace>>,
}

impl Model {
    /// Greedy decoding of `max_new` tokens. The plan is applied on every
    /// step; its positions refer to the original prompt, which stays a
    /// prefix of every step's input. Each step reruns the full sequence, so
    /// results do not depend on any cache state.
    pub fn greedy_decode(
        &self,
        prompt: &[u32],
        max_new: usize,
        plan: Option<&InterventionPlan>,
        keep_traces: bool,
    ) -> Result<GenerationResult> {
        if max_new == 0 {
            return Err(Error::Plan("max_new must be at least 1".into()));
        }
        if prompt.is_empty() {
            return Err(Error::Plan("cannot decode from an empty prompt".into()));
        }
        let total = prompt.len() + max_new;
        // the last token is emitted, never fed back in
        if total - 1 > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: total - 1,
                max: self.config.max_seq_len,
            });
        }
        let mut ids = prompt.to_vec();
        let mut traces = keep_traces.then(Vec::new);
        for _ in 0..max_new {
            let trace = self.forward_ids(&ids, plan)?;
            ids.push(argmax(&trace.logits_last) as u32);
            if let Some(t) = traces.as_mut() {
                t.push(trace);
            }
        }
        let new_token_ids = ids.split_off(prompt.len());
        let text = self.vocab.decode(&new_token_ids);
        Ok(GenerationResult {
            new_token_ids,
            text,
            traces,
        })
    }

    /// Tokenize `prompt` and decode greedily.
    pub fn generate(&self, prompt: &str, max_new: usize, plan: Option<&InterventionPlan>) -> Result<GenerationResult> {
        let seq = self.tokenize(prompt);
        self.greedy_decode(&seq.ids, max_new, plan, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;

    #[test]
    fn decoding_is_deterministic() {
        let model = toy::random_model(&toy::small_config(), 21);
        let a = model.generate("Paris is to France as", 6, None).unwrap();
        let b = model.generate("Paris is to France as", 6, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.new_token_ids.len(), 6);
    }

    #[test]
    fn each_token_is_step_argmax() {
        let model = toy::random_model(&toy::small_config(), 4);
        let seq = model.tokenize("Oslo is to");
        let out = model.greedy_decode(&seq.ids, 4, None, true).unwrap();
        let traces = out.traces.unwrap();
        for (id, trace) in out.new_token_ids.iter().zip(&traces) {
            assert_eq!(*id as usize, argmax(&trace.logits_last));
        }
    }

    #[test]
    fn length_and_zero_errors() {
        let model = toy::random_model(&toy::small_config(), 4);
        let seq = model.tokenize("Oslo is to");
        let max = model.config().max_seq_len;
        assert!(matches!(
            model.greedy_decode(&seq.ids, max, None, false),
            Err(Error::SequenceTooLong { .. })
        ));
        assert!(model.greedy_decode(&seq.ids, 0, None, false).is_err());
        assert!(matches!(model.greedy_decode(&[], 3, None, false), Err(Error::Plan(_))));
    }

    #[test]
    fn dominant_token_repeats() {
        let model = toy::constant_output_model(" Alpha");
        let target = model.vocab().id(" Alpha").unwrap();
        let out = model.generate("Paris is to", 5, None).unwrap();
        assert_eq!(out.new_token_ids, vec![target; 5]);
    }
}

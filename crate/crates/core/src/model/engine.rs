// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward pass.
//!
//! Plain f32 loops with a fixed summation order so every run is bit-exact.
//! Each position's computation reads only positions at or before it.

use super::{Model, TokenSequence};
use crate::error::{Error, Result};
use crate::interventions::plan::InterventionPlan;

/// Everything recorded by one instrumented forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    n_layers: usize,
    n_heads: usize,
    d_model: usize,
    seq_len: usize,
    /// `[L + 1, T, d_model]`: state entering each layer, then the final state.
    residual: Vec<f32>,
    /// `[L, H, T, T]` post-softmax attention.
    attn: Vec<f32>,
    /// `[L, T, d_model]`: per-head attention-weighted values, heads
    /// concatenated, before the output projection.
    head_out: Vec<f32>,
    pub logits_last: Vec<f32>,
}

impl ForwardTrace {
    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Residual state entering `layer` (`layer == n_layers` is the final
    /// state) at `pos`.
    pub fn residual(&self, layer: usize, pos: usize) -> &[f32] {
        let start = (layer * self.seq_len + pos) * self.d_model;
        &self.residual[start..start + self.d_model]
    }

    /// All positions' states entering `layer`, `[T, d_model]` row-major.
    pub fn layer_states(&self, layer: usize) -> &[f32] {
        let start = layer * self.seq_len * self.d_model;
        &self.residual[start..start + self.seq_len * self.d_model]
    }

    pub fn attn_row(&self, layer: usize, head: usize, query: usize) -> &[f32] {
        let t = self.seq_len;
        let start = ((layer * self.n_heads + head) * t + query) * t;
        &self.attn[start..start + t]
    }

    pub fn attn_weight(&self, layer: usize, head: usize, query: usize, key: usize) -> f32 {
        self.attn_row(layer, head, query)[key]
    }

    /// Attention-weighted value vector of one head before the output
    /// projection.
    pub fn head_output(&self, layer: usize, pos: usize, head: usize) -> &[f32] {
        let dh = self.d_head();
        let start = (layer * self.seq_len + pos) * self.d_model + head * dh;
        &self.head_out[start..start + dh]
    }
}

pub(crate) fn rms_norm_rows(x: &[f32], weight: &[f32], d: usize, eps: f32) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mut ss = 0.0f32;
        for v in row {
            ss += v * v;
        }
        let inv = 1.0 / (ss / d as f32 + eps).sqrt();
        for i in 0..d {
            dst[i] = row[i] * inv * weight[i];
        }
    }
    out
}

/// `x [T, d_in] · wᵀ` with `w` stored `[d_out, d_in]`.
pub(crate) fn project_rows(x: &[f32], w: &[f32], d_in: usize, d_out: usize) -> Vec<f32> {
    let rows = x.len() / d_in;
    let mut out = vec![0.0; rows * d_out];
    for r in 0..rows {
        let xr = &x[r * d_in..(r + 1) * d_in];
        for o in 0..d_out {
            out[r * d_out + o] = dot(xr, &w[o * d_in..(o + 1) * d_in]);
        }
    }
    out
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

/// Rotary embedding in half-split layout: dims `i` and `i + d_head/2` of
/// each head rotate together at frequency `base^(-2i/d_head)`.
fn apply_rope(x: &mut [f32], seq_len: usize, n_heads: usize, d_head: usize, base: f32) {
    let half = d_head / 2;
    let d_model = n_heads * d_head;
    let inv_freq: Vec<f32> = (0..half)
        .map(|i| 1.0 / base.powf((2 * i) as f32 / d_head as f32))
        .collect();
    for pos in 0..seq_len {
        for h in 0..n_heads {
            let off = pos * d_model + h * d_head;
            for (i, &f) in inv_freq.iter().enumerate() {
                let angle = pos as f32 * f;
                let (sin, cos) = angle.sin_cos();
                let a = x[off + i];
                let b = x[off + i + half];
                x[off + i] = a * cos - b * sin;
                x[off + i + half] = a * sin + b * cos;
            }
        }
    }
}

impl Model {
    /// Run the model over `tokens`, applying `plan` if given.
    pub fn forward(&self, tokens: &TokenSequence, plan: Option<&InterventionPlan>) -> Result<ForwardTrace> {
        self.forward_ids(&tokens.ids, plan)
    }

    pub fn forward_ids(&self, ids: &[u32], plan: Option<&InterventionPlan>) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let (t, d, l_count, h_count) = (ids.len(), cfg.d_model, cfg.n_layers, cfg.n_heads);
        let dh = cfg.d_head();
        if t == 0 {
            return Err(Error::Plan("cannot run the model on an empty sequence".into()));
        }
        if t > cfg.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: t,
                max: cfg.max_seq_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::Vocab(format!(
                "token id {bad} outside vocab of {}",
                cfg.vocab_size
            )));
        }
        if let Some(plan) = plan {
            plan.validate(cfg, t)?;
        }

        // blocked[layer][query] = list of key ranges masked for that row
        let mut blocked: Vec<Vec<Vec<std::ops::Range<usize>>>> = vec![vec![Vec::new(); t]; l_count];
        if let Some(plan) = plan {
            for ko in &plan.knockouts {
                for &layer in &ko.layers {
                    blocked[layer][ko.src_pos].push(ko.blocked.clone());
                }
            }
        }

        let mut x = Vec::with_capacity(t * d);
        for &id in ids {
            let id = id as usize;
            x.extend_from_slice(&self.embed[id * d..(id + 1) * d]);
        }

        let mut residual = Vec::with_capacity((l_count + 1) * t * d);
        let mut attn = vec![0.0f32; l_count * h_count * t * t];
        let mut head_out = Vec::with_capacity(l_count * t * d);
        let scale = 1.0 / (dh as f32).sqrt();

        for (layer, w) in self.layers.iter().enumerate() {
            if let Some(plan) = plan {
                for p in plan.patches.iter().filter(|p| p.layer == layer) {
                    x[p.pos * d..(p.pos + 1) * d].copy_from_slice(&p.vector);
                }
            }
            residual.extend_from_slice(&x);

            let h = rms_norm_rows(&x, &w.attn_norm, d, cfg.norm_epsilon);
            let mut q = project_rows(&h, &w.wq, d, d);
            let mut k = project_rows(&h, &w.wk, d, d);
            let v = project_rows(&h, &w.wv, d, d);
            apply_rope(&mut q, t, h_count, dh, cfg.rope_base);
            apply_rope(&mut k, t, h_count, dh, cfg.rope_base);

            let mut z = vec![0.0f32; t * d];
            let mut scores = vec![0.0f32; t];
            for head in 0..h_count {
                let off = head * dh;
                for i in 0..t {
                    let qi = &q[i * d + off..i * d + off + dh];
                    let masked = &blocked[layer][i];
                    let mut max = f32::NEG_INFINITY;
                    for j in 0..=i {
                        let s = if masked.iter().any(|r| r.contains(&j)) {
                            f32::NEG_INFINITY
                        } else {
                            dot(qi, &k[j * d + off..j * d + off + dh]) * scale
                        };
                        scores[j] = s;
                        if s > max {
                            max = s;
                        }
                    }
                    if max == f32::NEG_INFINITY {
                        return Err(Error::Plan(format!(
                            "knockout masks every key of row {i} in layer {layer}"
                        )));
                    }
                    let mut sum = 0.0f32;
                    for s in scores.iter_mut().take(i + 1) {
                        *s = if *s == f32::NEG_INFINITY { 0.0 } else { (*s - max).exp() };
                        sum += *s;
                    }
                    let row_start = ((layer * h_count + head) * t + i) * t;
                    let row = &mut attn[row_start..row_start + t];
                    for j in 0..=i {
                        row[j] = scores[j] / sum;
                    }
                    let zi = &mut z[i * d + off..i * d + off + dh];
                    for j in 0..=i {
                        let wgt = row[j];
                        if wgt == 0.0 {
                            continue;
                        }
                        let vj = &v[j * d + off..j * d + off + dh];
                        for c in 0..dh {
                            zi[c] += wgt * vj[c];
                        }
                    }
                }
            }
            let attn_out = project_rows(&z, &w.wo, d, d);
            head_out.extend_from_slice(&z);
            for (xi, a) in x.iter_mut().zip(&attn_out) {
                *xi += a;
            }

            let h2 = rms_norm_rows(&x, &w.mlp_norm, d, cfg.norm_epsilon);
            let gate = project_rows(&h2, &w.gate, d, cfg.d_ff);
            let up = project_rows(&h2, &w.up, d, cfg.d_ff);
            let act: Vec<f32> = gate.iter().zip(&up).map(|(g, u)| silu(*g) * u).collect();
            let mlp_out = project_rows(&act, &w.down, cfg.d_ff, d);
            for (xi, m) in x.iter_mut().zip(&mlp_out) {
                *xi += m;
            }
        }
        residual.extend_from_slice(&x);

        let last = &x[(t - 1) * d..t * d];
        let normed = rms_norm_rows(last, &self.final_norm, d, cfg.norm_epsilon);
        let logits_last = project_rows(&normed, &self.lm_head, d, cfg.vocab_size);

        Ok(ForwardTrace {
            n_layers: l_count,
            n_heads: h_count,
            d_model: d,
            seq_len: t,
            residual,
            attn,
            head_out,
            logits_last,
        })
    }
}

/// Index of the largest value; lowest index wins exact ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interventions::plan::{Knockout, Patch};
    use crate::toy;

    #[test]
    fn argmax_prefers_lowest_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0]), 0);
    }

    #[test]
    fn rope_preserves_norm_and_skips_position_zero() {
        let mut x = vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0];
        apply_rope(&mut x, 2, 1, 4, 10000.0);
        assert_eq!(&x[..4], &[1.0, 2.0, 3.0, 4.0]);
        let n: f32 = x[4..].iter().map(|v| v * v).sum();
        assert!((n - 30.0).abs() < 1e-4);
    }

    #[test]
    fn attention_rows_are_causal_distributions() {
        let model = toy::random_model(&toy::small_config(), 7);
        let seq = model.tokenize("Paris is to France as Tokyo is to");
        let trace = model.forward(&seq, None).unwrap();
        for l in 0..trace.n_layers() {
            for h in 0..trace.n_heads() {
                for i in 0..trace.seq_len() {
                    let row = trace.attn_row(l, h, i);
                    let sum: f32 = row[..=i].iter().sum();
                    assert!((sum - 1.0).abs() < 1e-5);
                    assert!(row.iter().all(|&w| w >= 0.0));
                    assert!(row[i + 1..].iter().all(|&w| w == 0.0));
                }
            }
        }
    }

    #[test]
    fn empty_plan_is_bit_identical() {
        let model = toy::random_model(&toy::small_config(), 3);
        let seq = model.tokenize("Oslo is to Norway as Lima is to");
        let a = model.forward(&seq, None).unwrap();
        let b = model.forward(&seq, Some(&InterventionPlan::new())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn knockout_zeroes_blocked_edge() {
        let model = toy::random_model(&toy::small_config(), 11);
        let seq = model.tokenize("Paris is to France as Tokyo is to");
        let last = seq.len() - 1;
        let plan = InterventionPlan::new().with_knockout(Knockout {
            layers: [1].into_iter().collect(),
            src_pos: last,
            blocked: 2..3,
        });
        let trace = model.forward(&seq, Some(&plan)).unwrap();
        for h in 0..trace.n_heads() {
            let row = trace.attn_row(1, h, last);
            assert_eq!(row[2], 0.0);
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn patch_reads_back_exactly() {
        let model = toy::random_model(&toy::small_config(), 5);
        let seq = model.tokenize("Paris is to France");
        let d = model.config().d_model;
        let v: Vec<f32> = (0..d).map(|i| i as f32 * 0.25 - 1.0).collect();
        let plan = InterventionPlan::new().with_patch(Patch {
            layer: 2,
            pos: 1,
            vector: v.clone(),
        });
        let trace = model.forward(&seq, Some(&plan)).unwrap();
        assert_eq!(trace.residual(2, 1), v.as_slice());
    }

    #[test]
    fn plan_errors() {
        let model = toy::random_model(&toy::small_config(), 5);
        let seq = model.tokenize("Paris is");
        let d = model.config().d_model;
        let wrong_dim = InterventionPlan::new().with_patch(Patch {
            layer: 0,
            pos: 0,
            vector: vec![0.0; d + 1],
        });
        assert!(matches!(model.forward(&seq, Some(&wrong_dim)), Err(Error::Plan(_))));
        let bad_layer = InterventionPlan::new().with_knockout(Knockout {
            layers: [99].into_iter().collect(),
            src_pos: 0,
            blocked: 0..1,
        });
        assert!(matches!(model.forward(&seq, Some(&bad_layer)), Err(Error::Plan(_))));
        let all_masked = InterventionPlan::new().with_knockout(Knockout {
            layers: [0].into_iter().collect(),
            src_pos: 1,
            blocked: 0..2,
        });
        assert!(matches!(model.forward(&seq, Some(&all_masked)), Err(Error::Plan(_))));
    }

    #[test]
    fn suffix_change_leaves_prefix_untouched() {
        let model = toy::random_model(&toy::small_config(), 9);
        let a = model.tokenize("Paris is to France as Tokyo");
        let mut b = a.clone();
        let last = b.ids.len() - 1;
        b.ids[last] = (b.ids[last] + 1) % model.config().vocab_size as u32;
        let ta = model.forward(&a, None).unwrap();
        let tb = model.forward(&b, None).unwrap();
        for layer in 0..=ta.n_layers() {
            for pos in 0..last {
                assert_eq!(ta.residual(layer, pos), tb.residual(layer, pos));
            }
        }
    }
}

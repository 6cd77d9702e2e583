// SPDX-License-Identifier: MIT OR Apache-2.0

//! Mutual Alignment Score between token spans.
//!
//! Two spans are compared through the cosine matrix of their token states.
//! A pair `(i, j)` is a mutual best match when `j` is the best candidate
//! for source token `i` and `i` is the best source token for `j`. The score
//! is the number of such pairs over the shorter span's length.

use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{render_pair, Label, StoryInstance};
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Model};
use crate::report;

fn unit_rows<R: AsRef<[f32]>>(rows: &[R], side: &str) -> Result<Vec<Vec<f64>>> {
    if rows.is_empty() {
        return Err(Error::Alignment(format!("{side} span is empty")));
    }
    let dim = rows[0].as_ref().len();
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::Alignment(format!(
                    "{side} row {i} has dim {}, expected {dim}",
                    r.len()
                )));
            }
            let norm = r.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Alignment(format!("{side} row {i} has zero or non-finite norm")));
            }
            Ok(r.iter().map(|&v| f64::from(v) / norm).collect())
        })
        .collect()
}

/// Cosine matrix `M[i][j] = cos(s_i, c_j)`.
pub fn cosine_matrix<R: AsRef<[f32]>>(source: &[R], candidate: &[R]) -> Result<Vec<Vec<f64>>> {
    let s = unit_rows(source, "source")?;
    let c = unit_rows(candidate, "candidate")?;
    if s[0].len() != c[0].len() {
        return Err(Error::Alignment(format!(
            "source dim {} differs from candidate dim {}",
            s[0].len(),
            c[0].len()
        )));
    }
    Ok(s.iter()
        .map(|si| c.iter().map(|cj| si.iter().zip(cj).map(|(a, b)| a * b).sum()).collect())
        .collect())
}

/// First index of the maximum; NaN never wins.
fn argmax_by(n: usize, value: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    for k in 1..n {
        if value(k) > value(best) {
            best = k;
        }
    }
    best
}

/// Mutual best matches `(source, candidate)` in a cosine matrix, in source
/// order.
pub fn mutual_matches(m: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    (0..rows)
        .filter_map(|i| {
            let j = argmax_by(cols, |j| m[i][j]);
            (argmax_by(rows, |k| m[k][j]) == i).then_some((i, j))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasOutcome {
    pub score: f64,
    pub matches: Vec<(usize, usize)>,
}

pub fn mutual_alignment_score<R: AsRef<[f32]>>(source: &[R], candidate: &[R]) -> Result<MasOutcome> {
    let m = cosine_matrix(source, candidate)?;
    let matches = mutual_matches(&m);
    let score = matches.len() as f64 / source.len().min(candidate.len()) as f64;
    Ok(MasOutcome { score, matches })
}

/// Cosine heatmap with the mutual-best-match mask. Rows are source tokens.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityHeatmap {
    pub source_tokens: Vec<String>,
    pub candidate_tokens: Vec<String>,
    pub cosine: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
}

pub fn similarity_heatmap<R: AsRef<[f32]>>(
    source: &[R],
    candidate: &[R],
    source_tokens: Vec<String>,
    candidate_tokens: Vec<String>,
) -> Result<SimilarityHeatmap> {
    if source_tokens.len() != source.len() || candidate_tokens.len() != candidate.len() {
        return Err(Error::Alignment("token labels do not match span lengths".into()));
    }
    let cosine = cosine_matrix(source, candidate)?;
    let mut mask = vec![vec![false; candidate.len()]; source.len()];
    for (i, j) in mutual_matches(&cosine) {
        mask[i][j] = true;
    }
    Ok(SimilarityHeatmap {
        source_tokens,
        candidate_tokens,
        cosine,
        mask,
    })
}

impl SimilarityHeatmap {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        report::matrix_csv("source", &self.source_tokens, &self.candidate_tokens, &self.cosine)
    }

    /// 0/1 matrix parallel to [`Self::to_csv`].
    pub fn mask_csv(&self) -> Result<Vec<u8>> {
        let mut header = vec!["source".to_string()];
        header.extend(self.candidate_tokens.iter().cloned());
        let rows: Vec<Vec<String>> = self
            .source_tokens
            .iter()
            .zip(&self.mask)
            .map(|(t, row)| {
                let mut r = vec![t.clone()];
                r.extend(row.iter().map(|&b| u8::from(b).to_string()));
                r
            })
            .collect();
        report::records_csv(&header, &rows)
    }
}

/// States of a token range at residual layer `layer`.
pub fn span_states(trace: &ForwardTrace, layer: usize, span: &Range<usize>) -> Vec<Vec<f32>> {
    span.clone().map(|t| trace.residual(layer, t).to_vec()).collect()
}

/// One source/candidate prompt after a forward pass.
struct EncodedPair {
    trace: ForwardTrace,
    source: Range<usize>,
    candidate: Range<usize>,
    ids: Vec<u32>,
}

fn encode_pair(model: &Model, source: &str, candidate: &str) -> Result<EncodedPair> {
    let prompt = render_pair(source, candidate);
    let tokens = model.tokenize(&prompt.text);
    let covering = |(a, b): (usize, usize), which: &str| {
        tokens
            .tokens_covering(a, b)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| Error::Alignment(format!("{which} span is empty")))
    };
    let source_span = covering(prompt.source, "source")?;
    let candidate_span = covering(prompt.candidate, "candidate")?;
    let trace = model.forward(&tokens, None)?;
    Ok(EncodedPair {
        trace,
        source: source_span,
        candidate: candidate_span,
        ids: tokens.ids,
    })
}

/// Per-layer MAS of the source against target and distractor, over the
/// residual states `0..=n_layers`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasResult {
    pub story_id: String,
    pub mas_target: Vec<f64>,
    pub mas_distractor: Vec<f64>,
    pub relative: Vec<f64>,
    pub target_matches: Vec<Vec<(usize, usize)>>,
    pub distractor_matches: Vec<Vec<(usize, usize)>>,
}

impl MasResult {
    /// Rows `(layer, mas_target, mas_distractor, relative)`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let rows: Vec<Vec<String>> = (0..self.relative.len())
            .map(|l| {
                vec![
                    l.to_string(),
                    report::fmt_value(self.mas_target[l]),
                    report::fmt_value(self.mas_distractor[l]),
                    report::fmt_value(self.relative[l]),
                ]
            })
            .collect();
        report::records_csv(&["layer", "mas_target", "mas_distractor", "relative"], &rows)
    }
}

/// Per-layer scores and mutual matches.
type LayerScores = (Vec<f64>, Vec<Vec<(usize, usize)>>);

fn layer_scores(pair: &EncodedPair) -> Result<LayerScores> {
    let n = pair.trace.n_layers() + 1;
    let mut scores = Vec::with_capacity(n);
    let mut matches = Vec::with_capacity(n);
    for layer in 0..n {
        let s = span_states(&pair.trace, layer, &pair.source);
        let c = span_states(&pair.trace, layer, &pair.candidate);
        let out = mutual_alignment_score(&s, &c)?;
        scores.push(out.score);
        matches.push(out.matches);
    }
    Ok((scores, matches))
}

pub fn mas_layer_profile(model: &Model, story: &StoryInstance) -> Result<MasResult> {
    let target = encode_pair(model, &story.source, &story.target)?;
    let distractor = encode_pair(model, &story.source, &story.distractor)?;
    let (mas_target, target_matches) = layer_scores(&target)?;
    let (mas_distractor, distractor_matches) = layer_scores(&distractor)?;
    let relative = mas_target.iter().zip(&mas_distractor).map(|(a, b)| a - b).collect();
    Ok(MasResult {
        story_id: story.id.clone(),
        mas_target,
        mas_distractor,
        relative,
        target_matches,
        distractor_matches,
    })
}

/// Heatmap of the source against one candidate at one residual layer,
/// labeled with token strings.
pub fn story_heatmap(model: &Model, source: &str, candidate: &str, layer: usize) -> Result<SimilarityHeatmap> {
    if layer > model.n_layers() {
        return Err(Error::Alignment(format!(
            "layer {layer} outside residual layers 0..={}",
            model.n_layers()
        )));
    }
    let pair = encode_pair(model, source, candidate)?;
    let labels = |span: &Range<usize>| -> Vec<String> {
        span.clone()
            .map(|t| model.vocab().token(pair.ids[t]).unwrap_or("?").to_string())
            .collect()
    };
    similarity_heatmap(
        &span_states(&pair.trace, layer, &pair.source),
        &span_states(&pair.trace, layer, &pair.candidate),
        labels(&pair.source),
        labels(&pair.candidate),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativeCurve {
    pub label: Label,
    pub n_instances: usize,
    pub mean_relative: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasAggregate {
    pub curves: Vec<RelativeCurve>,
}

impl MasAggregate {
    /// Rows `(layer, label, mean_relative)`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut rows = Vec::new();
        for c in &self.curves {
            for (layer, v) in c.mean_relative.iter().enumerate() {
                rows.push(vec![layer.to_string(), c.label.to_string(), report::fmt_value(*v)]);
            }
        }
        report::records_csv(&["layer", "label", "mean_relative"], &rows)
    }
}

/// Elementwise mean of the relative curves per label. Labels without
/// results are omitted.
pub fn aggregate_relative(results: &[(Label, MasResult)]) -> MasAggregate {
    let mut curves = Vec::new();
    for label in [Label::Correct, Label::Incorrect, Label::Unlabeled] {
        let group: Vec<&MasResult> = results.iter().filter(|(l, _)| *l == label).map(|(_, r)| r).collect();
        let Some(first) = group.first() else { continue };
        let mut mean = vec![0.0; first.relative.len()];
        for r in &group {
            for (m, v) in mean.iter_mut().zip(&r.relative) {
                *m += v;
            }
        }
        let n = group.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        curves.push(RelativeCurve {
            label,
            n_instances: group.len(),
            mean_relative: mean,
        });
    }
    MasAggregate { curves }
}

/// Profiles for every story, then per-label means.
pub fn relative_mas_aggregate(model: &Model, stories: &[StoryInstance]) -> Result<(Vec<MasResult>, MasAggregate)> {
    let results: Vec<MasResult> = stories
        .par_iter()
        .map(|s| mas_layer_profile(model, s))
        .collect::<Result<_>>()?;
    let labeled: Vec<(Label, MasResult)> = stories.iter().map(|s| s.label).zip(results.iter().cloned()).collect();
    Ok((results, aggregate_relative(&labeled)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;
    use proptest::prelude::*;

    #[test]
    fn single_pair_is_mutual() {
        let out = mutual_alignment_score(&[vec![0.3f32, -2.0]], &[vec![-5.0, 0.1]]).unwrap();
        assert_eq!(out.score, 1.0);
        assert_eq!(out.matches, vec![(0, 0)]);
    }

    #[test]
    fn worked_example_full() {
        let s = [vec![1.0f32, 0.0], vec![0.0, 1.0]];
        let c = [vec![1.0f32, 0.0], vec![0.6, 0.8], vec![0.0, 1.0]];
        let out = mutual_alignment_score(&s, &c).unwrap();
        assert_eq!(out.score, 1.0);
        assert_eq!(out.matches, vec![(0, 0), (1, 2)]);
    }

    #[test]
    fn worked_example_half() {
        let s = [vec![1.0f32, 0.0], vec![0.95, 0.312]];
        let c = [vec![1.0f32, 0.0], vec![-1.0, 0.0]];
        let out = mutual_alignment_score(&s, &c).unwrap();
        assert_eq!(out.score, 0.5);
        let h = similarity_heatmap(&s, &c, vec!["a".into(), "b".into()], vec!["x".into(), "y".into()]).unwrap();
        assert_eq!(h.mask, vec![vec![true, false], vec![false, false]]);
    }

    #[test]
    fn identity_mask_is_diagonal() {
        let s = [vec![1.0f32, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let h = similarity_heatmap(&s, &s, toy_labels(3), toy_labels(3)).unwrap();
        for (i, row) in h.mask.iter().enumerate() {
            for (j, &b) in row.iter().enumerate() {
                assert_eq!(b, i == j);
            }
        }
        let csv = String::from_utf8(h.mask_csv().unwrap()).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "source,t0,t1,t2");
        assert_eq!(csv.lines().nth(1).unwrap(), "t0,1,0,0");
    }

    fn toy_labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let s = [vec![1.0f32, 0.0]];
        let c = [vec![1.0f32, 0.0], vec![2.0, 0.0]];
        assert_eq!(mutual_alignment_score(&s, &c).unwrap().matches, vec![(0, 0)]);
    }

    #[test]
    fn zero_vector_and_empty_span_are_errors() {
        assert!(matches!(
            mutual_alignment_score(&[vec![0.0f32, 0.0]], &[vec![1.0, 0.0]]),
            Err(Error::Alignment(_))
        ));
        let empty: [Vec<f32>; 0] = [];
        assert!(mutual_alignment_score(&empty, &[vec![1.0f32]]).is_err());
    }

    #[test]
    fn identical_candidates_give_zero_relative() {
        let model = toy::random_model(&toy::small_config(), 5);
        let mut story = toy::sample_stories().remove(0);
        story.distractor = story.target.clone();
        let r = mas_layer_profile(&model, &story).unwrap();
        assert_eq!(r.relative.len(), model.n_layers() + 1);
        assert!(r.relative.iter().all(|&v| v == 0.0));
        assert!(r.mas_target.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn layer_zero_matches_embedding_geometry() {
        let model = toy::random_model(&toy::small_config(), 5);
        let story = toy::sample_stories().remove(0);
        let r = mas_layer_profile(&model, &story).unwrap();
        let p = render_pair(&story.source, &story.target);
        let toks = model.tokenize(&p.text);
        let emb = |range: Range<usize>| -> Vec<Vec<f32>> {
            range.map(|t| model.embedding(toks.ids[t]).unwrap().to_vec()).collect()
        };
        let s = emb(toks.tokens_covering(p.source.0, p.source.1).unwrap());
        let c = emb(toks.tokens_covering(p.candidate.0, p.candidate.1).unwrap());
        assert_eq!(r.mas_target[0], mutual_alignment_score(&s, &c).unwrap().score);
    }

    #[test]
    fn aggregate_is_elementwise_mean() {
        let mk = |rel: Vec<f64>| MasResult {
            story_id: String::new(),
            mas_target: rel.clone(),
            mas_distractor: vec![0.0; rel.len()],
            relative: rel,
            target_matches: Vec::new(),
            distractor_matches: Vec::new(),
        };
        let one = aggregate_relative(&[(Label::Correct, mk(vec![0.2, 0.4]))]);
        assert_eq!(one.curves[0].mean_relative, vec![0.2, 0.4]);
        let two = aggregate_relative(&[
            (Label::Correct, mk(vec![0.5, -0.25])),
            (Label::Incorrect, mk(vec![1.0, 1.0])),
            (Label::Correct, mk(vec![0.25, 0.75])),
        ]);
        assert_eq!(two.curves[0].mean_relative, vec![0.375, 0.25]);
        assert_eq!(two.curves[1].label, Label::Incorrect);
        let csv = String::from_utf8(two.to_csv().unwrap()).unwrap();
        assert!(csv.starts_with("layer,label,mean_relative\n0,correct,0.375000\n"));
    }

    proptest! {
        #[test]
        fn permuting_candidates_keeps_score(
            rows in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 3), 2..6),
            cand in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 3), 2..6),
            rot in 0usize..6,
        ) {
            prop_assume!(rows.iter().chain(&cand).all(|r| r.iter().any(|v| v.abs() > 1e-3)));
            let base = mutual_alignment_score(&rows, &cand).unwrap().score;
            let mut shifted = cand.clone();
            let k = rot % shifted.len();
            shifted.rotate_left(k);
            // Exact ties can move between indices under permutation; skip those.
            let m = cosine_matrix(&rows, &cand).unwrap();
            let tied = m.iter().any(|r| {
                let mx = r.iter().cloned().fold(f64::MIN, f64::max);
                r.iter().filter(|&&v| v == mx).count() > 1
            });
            prop_assume!(!tied);
            prop_assert_eq!(mutual_alignment_score(&rows, &shifted).unwrap().score, base);
        }
    }
}

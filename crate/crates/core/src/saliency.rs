//! Gradient×input token attribution and cause phrase selection.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::neuralnet::{ModelError, ModelParams};
use crate::normalize::MatchNormalizer;
use crate::text::{TokenSequence, MASK_ID, PAD_ID, SEP_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAggregation {
    /// `Σ_d E[d]·g[d]`.
    #[default]
    Signed,
    /// `Σ_d |E[d]·g[d]|`.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyResult {
    pub ids: Vec<u32>,
    pub predicted_class: usize,
    pub scores: Vec<f64>,
    /// Gradient of the class logit with respect to each position's embedding row.
    pub gradients: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseCandidate {
    pub phrase: String,
    /// Contiguous ascending token indices.
    pub tokens: Vec<usize>,
    pub score: f64,
    /// Byte range of `phrase` in the source text.
    pub span: (usize, usize),
}

fn is_excluded(id: u32) -> bool {
    matches!(id, PAD_ID | MASK_ID | SEP_ID)
}

pub fn token_scores(
    params: &ModelParams,
    ids: &[u32],
    class: usize,
    aggregation: ScoreAggregation,
) -> Result<SaliencyResult, ModelError> {
    let gradients = params.input_embedding_gradient(ids, class)?;
    let d = params.config.embed_dim;
    let scores = ids
        .iter()
        .zip(&gradients)
        .map(|(&id, g)| {
            if id == PAD_ID {
                return 0.0;
            }
            let row = &params.embedding[id as usize * d..(id as usize + 1) * d];
            let terms = row.iter().zip(g).map(|(e, g)| e * g);
            match aggregation {
                ScoreAggregation::Signed => terms.sum(),
                ScoreAggregation::Absolute => terms.map(f64::abs).sum(),
            }
        })
        .collect();
    Ok(SaliencyResult { ids: ids.to_vec(), predicted_class: class, scores, gradients })
}

/// The `k` best tokens (ties to the earlier position), with runs of adjacent
/// picks merged into one phrase scored by their sum, best first.
pub fn top_k_causes(sal: &SaliencyResult, seq: &TokenSequence, k: usize) -> Vec<CauseCandidate> {
    let n = sal.scores.len().min(seq.len()).min(sal.ids.len());
    let mut order: Vec<usize> = (0..n).filter(|&i| !is_excluded(sal.ids[i])).collect();
    order.sort_by(|&a, &b| sal.scores[b].total_cmp(&sal.scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();

    let mut out: Vec<CauseCandidate> = Vec::new();
    let mut run: Vec<usize> = Vec::new();
    let mut flush = |run: &mut Vec<usize>| {
        if let (Some(&first), Some(&last)) = (run.first(), run.last()) {
            out.push(CauseCandidate {
                phrase: seq.phrase(first, last).into(),
                tokens: core::mem::take(run),
                score: 0.0,
                span: (seq.spans[first].0, seq.spans[last].1),
            });
        }
    };
    for i in order {
        if run.last().is_some_and(|&j| j + 1 != i) {
            flush(&mut run);
        }
        run.push(i);
    }
    flush(&mut run);
    for c in &mut out {
        c.score = c.tokens.iter().map(|&i| sal.scores[i]).sum();
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.tokens[0].cmp(&b.tokens[0])));
    out
}

/// Whether any candidate contains, or is contained in, the gold phrase after
/// normalization. Empty phrases never match.
pub fn cause_match(candidates: &[CauseCandidate], gold: &str, normalizer: &MatchNormalizer) -> bool {
    let gold = normalizer.normalize(gold);
    if gold.is_empty() {
        return false;
    }
    candidates.iter().any(|c| {
        let p = normalizer.normalize(&c.phrase);
        !p.is_empty() && (gold.contains(p.as_str()) || p.contains(gold.as_str()))
    })
}

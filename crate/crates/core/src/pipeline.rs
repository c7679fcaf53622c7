//! Per-turn inference chaining timing, emotion, causes and the responder,
//! plus the random baseline used in experiment reports.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{context_window, TimingLabel};
use crate::emotion::{Emotion, NUM_EMOTIONS};
use crate::metrics::{classification_report, MetricError, MetricReport};
use crate::neuralnet::{ModelError, ModelParams};
use crate::normalize::{surface, Normalization};
use crate::responder::{
    generate_response, EmotionLexicon, HeuristicNounPredicate, ResponderConfig, ResponderError, ResponseBranch,
};
use crate::saliency::{token_scores, top_k_causes, ScoreAggregation};
use crate::text::Vocabulary;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("message is empty after normalization")]
    EmptyInput,
    #[error("{which} model expects vocabulary size {expected}, vocabulary has {found}")]
    VocabMismatch { which: &'static str, expected: usize, found: usize },
    #[error("{which} model must have {expected} classes, has {found}")]
    ClassMismatch { which: &'static str, expected: usize, found: usize },
    #[error("top_k must be at least 1")]
    BadTopK,
    #[error("{stage} stage failed: {source}")]
    Model { stage: &'static str, source: ModelError },
    #[error(transparent)]
    Responder(#[from] ResponderError),
}

/// Milliseconds since an arbitrary origin.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// A clock that never advances; keeps decisions reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub top_k: usize,
    pub aggregation: ScoreAggregation,
    pub responder: ResponderConfig,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings { top_k: 3, aggregation: ScoreAggregation::Signed, responder: ResponderConfig::default() }
    }
}

/// Everything a turn decision reads. Immutable once built.
#[derive(Debug, Clone)]
pub struct Models {
    pub vocab: Vocabulary,
    pub timing: ModelParams,
    pub emotion: ModelParams,
    pub lexicon: EmotionLexicon,
    pub nouns: HeuristicNounPredicate,
    pub settings: PipelineSettings,
}

impl Models {
    /// Checks that both models fit the vocabulary and their tasks.
    pub fn new(
        vocab: Vocabulary,
        timing: ModelParams,
        emotion: ModelParams,
        lexicon: EmotionLexicon,
        settings: PipelineSettings,
    ) -> Result<Models, PipelineError> {
        for (which, m, classes) in [("timing", &timing, 2), ("emotion", &emotion, NUM_EMOTIONS)] {
            if m.config.vocab_size != vocab.len() {
                return Err(PipelineError::VocabMismatch { which, expected: m.config.vocab_size, found: vocab.len() });
            }
            if m.config.num_classes != classes {
                return Err(PipelineError::ClassMismatch { which, expected: classes, found: m.config.num_classes });
            }
        }
        if settings.top_k == 0 {
            return Err(PipelineError::BadTopK);
        }
        lexicon.validate()?;
        settings.responder.validate()?;
        Ok(Models { vocab, timing, emotion, lexicon, nouns: HeuristicNounPredicate::default(), settings })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseView {
    pub phrase: String,
    pub score: f64,
    /// Byte range within the user's message.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageLatency {
    pub timing: f64,
    pub emotion: Option<f64>,
    pub saliency: Option<f64>,
    pub generation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnDecision {
    pub validate: bool,
    pub timing_confidence: f64,
    pub emotion: Option<Emotion>,
    pub emotion_confidence: Option<f64>,
    pub causes: Vec<CauseView>,
    pub branch: Option<ResponseBranch>,
    pub response: Option<String>,
    pub latency_ms: StageLatency,
}

/// Decides whether and how to validate `text`, given the earlier turns of
/// the conversation (oldest first). `history` is not modified.
pub fn decide_turn(
    models: &Models,
    history: &[&str],
    text: &str,
    clock: &dyn Clock,
) -> Result<TurnDecision, PipelineError> {
    let utterance = surface(text, Normalization::UnicodeCompat);
    let (seq, ids) = models.vocab.prepare(&utterance, models.emotion.config.max_len);
    if ids.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let model_err = |stage| move |source| PipelineError::Model { stage, source };

    let t0 = clock.now_ms();
    let mut texts: Vec<&str> = history.to_vec();
    texts.push(&utterance);
    let context = context_window(&texts, texts.len() - 1).expect("target is in range");
    let (_, context_ids) = models.vocab.prepare(&context, models.timing.config.max_len);
    let timing = models.timing.forward(&context_ids).map_err(model_err("timing"))?;
    let validate = timing.label == TimingLabel::Validating.index();
    let timing_confidence = timing.distribution[TimingLabel::Validating.index()];
    let t1 = clock.now_ms();
    let mut decision = TurnDecision {
        validate,
        timing_confidence,
        emotion: None,
        emotion_confidence: None,
        causes: Vec::new(),
        branch: None,
        response: None,
        latency_ms: StageLatency { timing: t1 - t0, ..StageLatency::default() },
    };
    if !validate {
        return Ok(decision);
    }

    let pred = models.emotion.forward(&ids).map_err(model_err("emotion"))?;
    let emotion = Emotion::from_index(pred.label).expect("8-class model");
    let t2 = clock.now_ms();
    let sal =
        token_scores(&models.emotion, &ids, pred.label, models.settings.aggregation).map_err(model_err("saliency"))?;
    let causes = top_k_causes(&sal, &seq, models.settings.top_k);
    let t3 = clock.now_ms();
    let (response, rd) =
        generate_response(&utterance, &pred, &causes, &models.lexicon, &models.settings.responder, &models.nouns)?;
    let t4 = clock.now_ms();

    decision.emotion = Some(emotion);
    decision.emotion_confidence = Some(pred.confidence);
    decision.causes =
        causes.into_iter().map(|c| CauseView { phrase: c.phrase, score: c.score, span: c.span }).collect();
    decision.branch = Some(rd.branch);
    decision.response = Some(response);
    decision.latency_ms.emotion = Some(t2 - t1);
    decision.latency_ms.saliency = Some(t3 - t2);
    decision.latency_ms.generation = Some(t4 - t3);
    Ok(decision)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineDistribution {
    /// Draw labels in proportion to the training labels.
    #[default]
    Empirical,
    /// Draw each of `num_classes` labels equally often.
    Uniform,
}

/// Scores random predictions against `labels`. `train_labels` supplies the
/// empirical distribution; `num_classes` the uniform one.
pub fn run_random_baseline(
    labels: &[usize],
    train_labels: &[usize],
    num_classes: usize,
    distribution: BaselineDistribution,
    target_class: Option<usize>,
    seed: u64,
) -> Result<MetricReport, MetricError> {
    if labels.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let preds: Vec<usize> = match distribution {
        BaselineDistribution::Empirical if !train_labels.is_empty() => {
            labels.iter().map(|_| train_labels[rng.gen_range(0..train_labels.len())]).collect()
        }
        BaselineDistribution::Empirical => return Err(MetricError::Empty),
        BaselineDistribution::Uniform => labels.iter().map(|_| rng.gen_range(0..num_classes.max(1))).collect(),
    };
    classification_report(labels, &preds, target_class)
}

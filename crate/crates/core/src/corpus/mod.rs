//! Dialogue data model, validation-timing annotation, context construction,
//! spoken-dialogue preprocessing, dataset splitting and synthetic corpora.

mod annotate;
mod split;
mod spoken;
mod synth;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::emotion::{Emotion, InvalidEmotion};
use crate::normalize::{self, Normalization, TURN_SEPARATOR};

pub use annotate::{annotate_validation, annotate_with, emotion_example, CompiledRules, EmotionFrame, PhraseRuleSet};
pub use split::{split_dataset, split_grouped, SplitSpec};
pub use spoken::{preprocess_spoken, SpokenFilterConfig, WordUnit};
pub use synth::{generate_synthetic, SynthesisConfig};

/// Number of most recent utterances used as timing context.
pub const CONTEXT_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    InvalidEmotion(#[from] InvalidEmotion),
    #[error("dialogue {id}: {reason}")]
    InvalidDialogue { id: String, reason: String },
    #[error("turn index {index} out of range for dialogue with {len} turns")]
    TurnOutOfRange { index: usize, len: usize },
    #[error("dialogue {0} needs at least two turns")]
    TooFewTurns(String),
    #[error("phrase rule set is empty")]
    EmptyRules,
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("cannot split an empty example list")]
    EmptyExamples,
    #[error("synthesis config: {0}")]
    BadSynthesis(String),
    #[error("config parse error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::A => Speaker::B,
            Speaker::B => Speaker::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    TextCorpus,
    SpokenCorpus,
    Synthetic,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::TextCorpus => "text_corpus",
            Source::SpokenCorpus => "spoken_corpus",
            Source::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Utterance>,
    pub gold_emotion: Option<Emotion>,
    pub gold_cause: Option<String>,
    pub source: Source,
}

/// One line of a dialogue JSON Lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub id: String,
    pub source: Source,
    pub turns: Vec<TurnRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub speaker: Speaker,
    pub text: String,
}

impl Dialogue {
    /// Builds a dialogue from raw turns, assigning indices in order.
    pub fn new(id: impl Into<String>, source: Source, turns: impl IntoIterator<Item = (Speaker, String)>) -> Dialogue {
        Dialogue {
            id: id.into(),
            turns: turns
                .into_iter()
                .enumerate()
                .map(|(index, (speaker, text))| Utterance { speaker, text, index })
                .collect(),
            gold_emotion: None,
            gold_cause: None,
            source,
        }
    }

    pub fn from_record(record: DialogueRecord) -> Result<Dialogue, CorpusError> {
        let gold_emotion = record.emotion.as_deref().map(str::parse).transpose()?;
        let mut dialogue =
            Dialogue::new(record.id, record.source, record.turns.into_iter().map(|t| (t.speaker, t.text)));
        dialogue.gold_emotion = gold_emotion;
        dialogue.gold_cause = record.cause;
        dialogue.validate()?;
        Ok(dialogue)
    }

    pub fn to_record(&self) -> DialogueRecord {
        DialogueRecord {
            id: self.id.clone(),
            source: self.source,
            turns: self.turns.iter().map(|u| TurnRecord { speaker: u.speaker, text: u.text.clone() }).collect(),
            emotion: self.gold_emotion.map(|e| e.as_str().into()),
            cause: self.gold_cause.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: String| CorpusError::InvalidDialogue { id: self.id.clone(), reason };
        if self.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if normalize::surface(&turn.text, Normalization::UnicodeCompat).is_empty() {
                return Err(invalid(alloc::format!("turn {i} is empty after normalization")));
            }
            if i > 0 && turn.index <= self.turns[i - 1].index {
                return Err(invalid(alloc::format!("turn {i} index is not increasing")));
            }
        }
        if self.source == Source::TextCorpus {
            if let Some(i) = self.turns.windows(2).position(|w| w[0].speaker == w[1].speaker) {
                return Err(invalid(alloc::format!("turns {} and {} do not alternate speakers", i, i + 1)));
            }
        }
        if matches!(&self.gold_cause, Some(c) if c.trim().is_empty()) {
            return Err(invalid("empty cause phrase".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingLabel {
    Validating,
    NonValidating,
}

impl TimingLabel {
    /// Class index for the binary timing classifier; validating is the
    /// positive (target) class.
    pub fn index(self) -> usize {
        match self {
            TimingLabel::NonValidating => 0,
            TimingLabel::Validating => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<TimingLabel> {
        match i {
            0 => Some(TimingLabel::NonValidating),
            1 => Some(TimingLabel::Validating),
            _ => None,
        }
    }
}

/// A model-ready example with provenance back to its dialogue turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub dialogue_id: String,
    /// Index of the last utterance in `context`.
    pub turn: usize,
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_label: Option<TimingLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion_label: Option<Emotion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause_phrase: Option<String>,
    /// The gold response that followed the context, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

/// Joins up to [`CONTEXT_WINDOW`] utterances ending at `target_turn`,
/// oldest first, separated by the reserved marker.
pub fn build_timing_context(dialogue: &Dialogue, target_turn: usize) -> Result<String, CorpusError> {
    let texts: Vec<&str> = dialogue.turns.iter().map(|u| u.text.as_str()).collect();
    context_window(&texts, target_turn)
}

/// [`build_timing_context`] over bare texts.
pub fn context_window(texts: &[&str], target: usize) -> Result<String, CorpusError> {
    if target >= texts.len() {
        return Err(CorpusError::TurnOutOfRange { index: target, len: texts.len() });
    }
    let start = (target + 1).saturating_sub(CONTEXT_WINDOW);
    let sep = alloc::format!(" {TURN_SEPARATOR} ");
    let parts: Vec<String> =
        texts[start..=target].iter().map(|t| normalize::surface(t, Normalization::UnicodeCompat)).collect();
    Ok(parts.join(&sep))
}

//! Template responses built from the predicted emotion and its causes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::emotion::{Emotion, NUM_EMOTIONS};
use crate::neuralnet::Prediction;
use crate::normalize::{surface, Normalization};
use crate::saliency::CauseCandidate;
use crate::text::{fnv1a, FNV_OFFSET};

const DEFAULT_LEXICON: &str = include_str!("../config/lexicon.json");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResponderError {
    #[error("lexicon has no emotion word for {0}")]
    MissingEmotionWord(String),
    #[error("lexicon needs at least one non-empty marker")]
    NoMarkers,
    #[error("predicted label {0} is not an emotion index")]
    InvalidLabel(usize),
    #[error("invalid lexicon: {0}")]
    Parse(String),
    #[error("threshold must lie in [0, 1], got {0}")]
    BadThreshold(String),
}

/// Emotion words, validation markers and punctuation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionLexicon {
    pub markers: Vec<String>,
    pub emotion_words: BTreeMap<Emotion, String>,
    /// Placed between the marker and the emotional clause.
    pub separator: String,
    pub sentence_end: String,
}

impl Default for EmotionLexicon {
    fn default() -> Self {
        EmotionLexicon::from_json(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

impl EmotionLexicon {
    pub fn from_json(json: &str) -> Result<Self, ResponderError> {
        let lex: EmotionLexicon = serde_json::from_str(json).map_err(|e| ResponderError::Parse(e.to_string()))?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<(), ResponderError> {
        if self.markers.is_empty() || self.markers.iter().any(|m| m.trim().is_empty()) {
            return Err(ResponderError::NoMarkers);
        }
        for e in Emotion::ALL {
            if self.emotion_words.get(&e).is_none_or(|w| w.trim().is_empty()) {
                return Err(ResponderError::MissingEmotionWord(e.as_str().into()));
            }
        }
        Ok(())
    }

    pub fn emotion_word(&self, emotion: Emotion) -> Result<&str, ResponderError> {
        self.emotion_words
            .get(&emotion)
            .map(String::as_str)
            .ok_or_else(|| ResponderError::MissingEmotionWord(emotion.as_str().into()))
    }

    /// Marker for an utterance: stable across calls, alternating across inputs.
    pub fn marker_for(&self, utterance: &str) -> &str {
        let key = surface(utterance, Normalization::UnicodeCompat);
        let h = fnv1a(FNV_OFFSET, key.as_bytes());
        &self.markers[(h % self.markers.len() as u64) as usize]
    }
}

pub fn emotion_word(emotion: Emotion, lex: &EmotionLexicon) -> Result<&str, ResponderError> {
    lex.emotion_word(emotion)
}

/// Decides whether a cause phrase names a thing.
pub trait NounPredicate {
    fn contains_noun(&self, phrase: &str) -> bool;
}

impl<F: Fn(&str) -> bool> NounPredicate for F {
    fn contains_noun(&self, phrase: &str) -> bool {
        self(phrase)
    }
}

/// Accepts a phrase unless it is a function word, ends in an inflection, or
/// has no letters at all.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeuristicNounPredicate {
    pub stop_list: Vec<String>,
    pub inflection_suffixes: Vec<String>,
}

impl Default for HeuristicNounPredicate {
    fn default() -> Self {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect();
        HeuristicNounPredicate {
            stop_list: s(&[
                "は",
                "が",
                "を",
                "に",
                "で",
                "と",
                "も",
                "の",
                "へ",
                "や",
                "か",
                "ね",
                "よ",
                "な",
                "わ",
                "さ",
                "て",
                "から",
                "まで",
                "より",
                "って",
                "けど",
                "でも",
                "そして",
                "それ",
                "これ",
                "あれ",
                "この",
                "その",
                "あの",
                "私",
                "僕",
                "俺",
                "あなた",
                "こと",
                "もの",
                "ため",
                "よう",
                "本当",
                "とても",
                "すごく",
            ]),
            inflection_suffixes: s(&[
                "た",
                "だ",
                "い",
                "う",
                "く",
                "る",
                "て",
                "ない",
                "ます",
                "です",
                "でした",
                "かった",
                "ました",
                "たい",
                "れる",
                "られる",
            ]),
        }
    }
}

impl NounPredicate for HeuristicNounPredicate {
    fn contains_noun(&self, phrase: &str) -> bool {
        let p = phrase.trim();
        if p.is_empty() || !p.chars().any(char::is_alphanumeric) {
            return false;
        }
        if self.stop_list.iter().any(|s| s == p) {
            return false;
        }
        !self.inflection_suffixes.iter().any(|s| p.ends_with(s.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseBranch {
    MarkerOnly,
    MarkerPlusEmotion,
    MarkerPlusCauseEmotion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDecision {
    pub branch: ResponseBranch,
    pub threshold: f64,
    pub confidence: f64,
    pub marker: String,
    pub cause: Option<CauseCandidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponderConfig {
    /// Emotional clauses need confidence strictly above this.
    pub threshold: f64,
}

impl Default for ResponderConfig {
    fn default() -> Self {
        ResponderConfig { threshold: 0.95 }
    }
}

impl ResponderConfig {
    pub fn validate(&self) -> Result<(), ResponderError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ResponderError::BadThreshold(format!("{}", self.threshold)));
        }
        Ok(())
    }
}

/// Builds the validating reply to `utterance` from an 8-class prediction and
/// its ranked causes. The best-scoring cause the predicate accepts is used.
pub fn generate_response(
    utterance: &str,
    pred: &Prediction,
    causes: &[CauseCandidate],
    lex: &EmotionLexicon,
    cfg: &ResponderConfig,
    nouns: &dyn NounPredicate,
) -> Result<(String, ResponseDecision), ResponderError> {
    if pred.label >= NUM_EMOTIONS {
        return Err(ResponderError::InvalidLabel(pred.label));
    }
    let emotion = Emotion::from_index(pred.label).ok_or(ResponderError::InvalidLabel(pred.label))?;
    let word = lex.emotion_word(emotion)?;
    let marker = lex.marker_for(utterance);
    let end = lex.sentence_end.as_str();
    let confident = pred.confidence > cfg.threshold;
    let cause = if confident {
        causes
            .iter()
            .filter(|c| nouns.contains_noun(&c.phrase))
            .max_by(|a, b| a.score.total_cmp(&b.score).then(b.tokens.first().cmp(&a.tokens.first())))
    } else {
        None
    };
    let (text, branch) = match (confident, cause) {
        (false, _) => (format!("{marker}{end}"), ResponseBranch::MarkerOnly),
        (true, None) => {
            (format!("{marker}{}それは{word}ですね{end}", lex.separator), ResponseBranch::MarkerPlusEmotion)
        }
        (true, Some(c)) => (
            format!("{marker}{}{}は{word}ですね{end}", lex.separator, c.phrase.trim()),
            ResponseBranch::MarkerPlusCauseEmotion,
        ),
    };
    let decision = ResponseDecision {
        branch,
        threshold: cfg.threshold,
        confidence: pred.confidence,
        marker: marker.into(),
        cause: cause.cloned(),
    };
    Ok((text, decision))
}

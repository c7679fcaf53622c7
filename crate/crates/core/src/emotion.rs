//! The eight primary emotions used for classification.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Plutchik's eight primary emotions. The discriminant is the class index
/// used by the emotion classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Fear = 0,
    Anger = 1,
    Surprise = 2,
    Disgust = 3,
    Sadness = 4,
    Joy = 5,
    Anticipation = 6,
    Trust = 7,
}

/// Number of emotion classes.
pub const NUM_EMOTIONS: usize = 8;

impl Emotion {
    pub const ALL: [Emotion; NUM_EMOTIONS] = [
        Emotion::Fear,
        Emotion::Anger,
        Emotion::Surprise,
        Emotion::Disgust,
        Emotion::Sadness,
        Emotion::Joy,
        Emotion::Anticipation,
        Emotion::Trust,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Emotion> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Fear => "fear",
            Emotion::Anger => "anger",
            Emotion::Surprise => "surprise",
            Emotion::Disgust => "disgust",
            Emotion::Sadness => "sadness",
            Emotion::Joy => "joy",
            Emotion::Anticipation => "anticipation",
            Emotion::Trust => "trust",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Returned when a label is not one of the eight permitted emotions.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid emotion label {label:?}; expected one of fear, anger, surprise, disgust, sadness, joy, anticipation, trust")]
pub struct InvalidEmotion {
    pub label: String,
}

impl FromStr for Emotion {
    type Err = InvalidEmotion;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Emotion::ALL
            .iter()
            .copied()
            .find(|e| e.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| InvalidEmotion { label: s.into() })
    }
}

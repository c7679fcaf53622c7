use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Dialogue, Utterance};
use crate::normalize::{self, Normalization};

/// How words are counted when truncating spoken utterances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordUnit {
    /// Whitespace-separated chunks, as in segmented transcripts.
    #[default]
    Whitespace,
    /// Every non-whitespace character counts as a word.
    Character,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpokenFilterConfig {
    pub backchannel_list: Vec<String>,
    pub laughter_markers: Vec<String>,
    pub filler_list: Vec<String>,
    pub max_tail_words: usize,
    #[serde(default)]
    pub word_unit: WordUnit,
}

impl Default for SpokenFilterConfig {
    fn default() -> Self {
        serde_json::from_str(include_str!("../../config/spoken_filter.json"))
            .expect("bundled spoken_filter.json is valid")
    }
}

impl SpokenFilterConfig {
    pub fn from_json(json: &str) -> Result<Self, CorpusError> {
        let cfg: SpokenFilterConfig =
            serde_json::from_str(json).map_err(|e| CorpusError::Config(alloc::format!("{e}")))?;
        if cfg.max_tail_words == 0 {
            return Err(CorpusError::Config("max_tail_words must be at least 1".into()));
        }
        Ok(cfg)
    }

    fn is_filtered(&self, text: &str) -> bool {
        let key = normalize::surface(text, Normalization::UnicodeCompat);
        self.backchannel_list
            .iter()
            .chain(&self.laughter_markers)
            .chain(&self.filler_list)
            .any(|item| normalize::surface(item, Normalization::UnicodeCompat) == key)
    }
}

/// Drops backchannel, laughter and filler utterances, keeps only the last
/// `max_tail_words` words of every remaining utterance and renumbers turns.
///
/// An utterance whose truncated tail is itself a listed item is dropped too,
/// which keeps the operation idempotent.
pub fn preprocess_spoken(dialogue: &Dialogue, cfg: &SpokenFilterConfig) -> Dialogue {
    let limit = cfg.max_tail_words.max(1);
    let turns = dialogue
        .turns
        .iter()
        .filter(|u| !cfg.is_filtered(&u.text))
        .map(|u| (u.speaker, tail_words(&u.text, limit, cfg.word_unit)))
        .filter(|(_, tail)| !cfg.is_filtered(tail))
        .enumerate()
        .map(|(index, (speaker, tail))| Utterance { speaker, text: tail.into(), index })
        .collect();
    Dialogue { turns, ..dialogue.clone() }
}

/// Slice of `text` starting at its `limit`-th word from the end; the text is
/// returned untouched when it has at most `limit` words.
fn tail_words(text: &str, limit: usize, unit: WordUnit) -> &str {
    let starts: Vec<usize> = match unit {
        WordUnit::Whitespace => {
            let mut starts = Vec::new();
            let mut prev_ws = true;
            for (i, c) in text.char_indices() {
                if !c.is_whitespace() && prev_ws {
                    starts.push(i);
                }
                prev_ws = c.is_whitespace();
            }
            starts
        }
        WordUnit::Character => text.char_indices().filter(|(_, c)| !c.is_whitespace()).map(|(i, _)| i).collect(),
    };
    if starts.len() <= limit {
        text
    } else {
        &text[starts[starts.len() - limit]..]
    }
}

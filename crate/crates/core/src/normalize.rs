//! Text normalization shared by annotation, cause matching and model input.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Reserved turn-separator marker. It is stripped from raw text so it can
/// only ever appear where context construction inserts it.
pub const TURN_SEPARATOR: &str = "⟐";
const TURN_SEPARATOR_CHAR: char = '⟐';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    #[default]
    UnicodeCompat,
}

/// Surface normalization for model input: optional NFKC, separator marker
/// removed, surrounding whitespace trimmed.
pub fn surface(text: &str, mode: Normalization) -> String {
    let folded: String = match mode {
        Normalization::None => text.into(),
        Normalization::UnicodeCompat => text.nfkc().collect(),
    };
    let cleaned: String = folded.chars().filter(|&c| c != TURN_SEPARATOR_CHAR).collect();
    cleaned.trim().into()
}

/// Normalizer used for phrase matching: surface normalization, spelling
/// variants rewritten to a canonical form, all whitespace removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchNormalizer {
    pub mode: Normalization,
    /// `(variant, canonical)` rewrites applied in order.
    pub variants: Vec<(String, String)>,
}

impl MatchNormalizer {
    pub fn new(mode: Normalization, variants: Vec<(String, String)>) -> Self {
        // Variants are written in the same normal form as the text they rewrite.
        let variants = variants
            .into_iter()
            .map(|(from, to)| (surface(&from, mode), surface(&to, mode)))
            .filter(|(from, _)| !from.is_empty())
            .collect();
        MatchNormalizer { mode, variants }
    }

    pub fn normalize(&self, text: &str) -> String {
        let mut out = surface(text, self.mode);
        for (from, to) in &self.variants {
            if out.contains(from.as_str()) {
                out = out.replace(from.as_str(), to);
            }
        }
        out.retain(|c| !c.is_whitespace());
        out
    }
}

impl Default for MatchNormalizer {
    fn default() -> Self {
        MatchNormalizer::new(
            Normalization::UnicodeCompat,
            alloc::vec![
                ("分か".into(), "わか".into()),
                ("解る".into(), "わかる".into()),
                ("判る".into(), "わかる".into()),
            ],
        )
    }
}

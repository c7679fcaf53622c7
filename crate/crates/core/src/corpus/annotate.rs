use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{build_timing_context, CorpusError, Dialogue, LabeledExample, Speaker, TimingLabel};
use crate::normalize::{self, MatchNormalizer, Normalization};

/// The 「それは＋<emotion word>＋ね」 frame, expanded over a word lexicon.
/// `bridges` are the copula forms allowed between the word and the final
/// particle (「です」 in 「それは怖いですね」).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionFrame {
    pub prefix: String,
    pub bridges: Vec<String>,
    pub suffix: String,
    pub emotion_words: Vec<String>,
}

impl EmotionFrame {
    pub fn instances(&self) -> impl Iterator<Item = String> + '_ {
        self.emotion_words.iter().flat_map(move |word| {
            self.bridges.iter().map(move |bridge| alloc::format!("{}{}{}{}", self.prefix, word, bridge, self.suffix))
        })
    }
}

/// Phrases whose presence in a response marks it as validating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseRuleSet {
    pub literal_patterns: Vec<String>,
    pub emotion_frame: Option<EmotionFrame>,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub variants: Vec<(String, String)>,
}

impl Default for PhraseRuleSet {
    fn default() -> Self {
        serde_json::from_str(include_str!("../../config/phrase_rules.json"))
            .expect("bundled phrase_rules.json is valid")
    }
}

impl PhraseRuleSet {
    pub fn from_json(json: &str) -> Result<Self, CorpusError> {
        serde_json::from_str(json).map_err(|e| CorpusError::Config(alloc::format!("{e}")))
    }

    pub fn normalizer(&self) -> MatchNormalizer {
        MatchNormalizer::new(self.normalization, self.variants.clone())
    }

    /// Normalizes every pattern; fails when nothing usable remains.
    pub fn compile(&self) -> Result<CompiledRules, CorpusError> {
        let normalizer = self.normalizer();
        let mut patterns: Vec<String> = self
            .literal_patterns
            .iter()
            .cloned()
            .chain(self.emotion_frame.iter().flat_map(|f| f.instances()))
            .map(|p| normalizer.normalize(&p))
            .filter(|p| !p.is_empty())
            .collect();
        patterns.sort();
        patterns.dedup();
        if patterns.is_empty() {
            return Err(CorpusError::EmptyRules);
        }
        Ok(CompiledRules { normalizer, patterns })
    }
}

#[derive(Debug, Clone)]
pub struct CompiledRules {
    normalizer: MatchNormalizer,
    patterns: Vec<String>,
}

impl CompiledRules {
    /// Free substring match after normalization.
    pub fn matches(&self, response: &str) -> bool {
        let text = self.normalizer.normalize(response);
        self.patterns.iter().any(|p| text.contains(p.as_str()))
    }

    pub fn label(&self, response: &str) -> TimingLabel {
        if self.matches(response) {
            TimingLabel::Validating
        } else {
            TimingLabel::NonValidating
        }
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn normalizer(&self) -> &MatchNormalizer {
        &self.normalizer
    }
}

/// Emits one timing example per (utterance, response) pair. A pair is two
/// adjacent turns by different speakers; the label comes from the response,
/// the context from the utterance side.
pub fn annotate_validation(dialogue: &Dialogue, rules: &PhraseRuleSet) -> Result<Vec<LabeledExample>, CorpusError> {
    let compiled = rules.compile()?;
    annotate_with(dialogue, &compiled)
}

pub fn annotate_with(dialogue: &Dialogue, rules: &CompiledRules) -> Result<Vec<LabeledExample>, CorpusError> {
    if dialogue.turns.len() < 2 {
        return Err(CorpusError::TooFewTurns(dialogue.id.clone()));
    }
    let mut out = Vec::with_capacity(dialogue.turns.len() - 1);
    for (i, pair) in dialogue.turns.windows(2).enumerate() {
        if pair[0].speaker == pair[1].speaker {
            continue;
        }
        out.push(LabeledExample {
            dialogue_id: dialogue.id.clone(),
            turn: pair[0].index,
            context: build_timing_context(dialogue, i)?,
            timing_label: Some(rules.label(&pair[1].text)),
            emotion_label: None,
            cause_phrase: None,
            response: Some(pair[1].text.clone()),
        });
    }
    Ok(out)
}

/// The emotion-classification example of a dialogue: the speaker's last
/// utterance that received a response (preferring one that contains the gold
/// cause), labeled with the dialogue's gold emotion.
pub fn emotion_example(dialogue: &Dialogue, normalizer: &MatchNormalizer) -> Option<LabeledExample> {
    let emotion = dialogue.gold_emotion?;
    let answered: Vec<usize> = (0..dialogue.turns.len().saturating_sub(1))
        .filter(|&i| dialogue.turns[i].speaker == Speaker::A && dialogue.turns[i + 1].speaker == Speaker::B)
        .collect();
    let cause = dialogue.gold_cause.as_deref().map(|c| normalizer.normalize(c));
    let pick = cause
        .as_deref()
        .and_then(|c| {
            answered.iter().rev().copied().find(|&i| normalizer.normalize(&dialogue.turns[i].text).contains(c))
        })
        .or_else(|| answered.last().copied())?;
    Some(LabeledExample {
        dialogue_id: dialogue.id.clone(),
        turn: dialogue.turns[pick].index,
        context: normalize::surface(&dialogue.turns[pick].text, Normalization::UnicodeCompat),
        timing_label: None,
        emotion_label: Some(emotion),
        cause_phrase: dialogue.gold_cause.clone(),
        response: Some(dialogue.turns[pick + 1].text.clone()),
    })
}

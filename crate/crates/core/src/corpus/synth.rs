use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dialogue, Source, Speaker};
use crate::Emotion;

/// Inventory for the planted-keyword corpus. `{kw}` in speaker templates is
/// replaced by the emotion keyword, `{word}` in responses by the emotion word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub n_dialogues: usize,
    pub validating_rate: f64,
    /// Exchanges (speaker turn + listener reply) per dialogue, drawn uniformly
    /// from `1..=max_exchanges`.
    pub max_exchanges: usize,
    pub keywords: BTreeMap<Emotion, Vec<String>>,
    pub emotion_words: BTreeMap<Emotion, String>,
    /// Keyword-bearing speaker turns that call for a validating reply.
    pub disclosure_templates: Vec<String>,
    /// Keyword-bearing speaker turns that do not.
    pub factual_templates: Vec<String>,
    /// Keyword-free speaker turns for earlier validating exchanges.
    pub history_disclosures: Vec<String>,
    /// Keyword-free speaker turns for earlier non-validating exchanges.
    pub openers: Vec<String>,
    pub listener_replies: Vec<String>,
    pub validating_responses: Vec<String>,
    pub history_validating_responses: Vec<String>,
    pub neutral_responses: Vec<String>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        serde_json::from_str(include_str!("../../config/synthesis.json")).expect("bundled synthesis.json is valid")
    }
}

impl SynthesisConfig {
    pub fn from_json(json: &str) -> Result<Self, CorpusError> {
        serde_json::from_str(json).map_err(|e| CorpusError::Config(alloc::format!("{e}")))
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::BadSynthesis(m.into()));
        for e in Emotion::ALL {
            if self.keywords.get(&e).is_none_or(|k| k.iter().all(|w| w.trim().is_empty())) {
                return bad(&alloc::format!("no keyword for {e}"));
            }
            if self.emotion_words.get(&e).is_none_or(|w| w.is_empty()) {
                return bad(&alloc::format!("no emotion word for {e}"));
            }
        }
        if !(0.0..=1.0).contains(&self.validating_rate) {
            return bad("validating_rate must lie in [0, 1]");
        }
        if self.max_exchanges == 0 {
            return bad("max_exchanges must be at least 1");
        }
        let lists = [
            ("disclosure_templates", &self.disclosure_templates),
            ("factual_templates", &self.factual_templates),
            ("history_disclosures", &self.history_disclosures),
            ("openers", &self.openers),
            ("listener_replies", &self.listener_replies),
            ("validating_responses", &self.validating_responses),
            ("history_validating_responses", &self.history_validating_responses),
            ("neutral_responses", &self.neutral_responses),
        ];
        for (name, list) in lists {
            if list.is_empty() {
                return bad(&alloc::format!("{name} is empty"));
            }
        }
        if self.disclosure_templates.iter().chain(&self.factual_templates).any(|t| !t.contains("{kw}")) {
            return bad("every keyword template needs a {kw} slot");
        }
        Ok(())
    }
}

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [String]) -> &'a str {
    &items[rng.gen_range(0..items.len())]
}

/// Generates `cfg.n_dialogues` dialogues. Every exchange independently calls
/// for validation with probability `validating_rate`; the last exchange
/// carries exactly one planted emotion keyword, which becomes the gold cause.
pub fn generate_synthetic(cfg: &SynthesisConfig, seed: u64) -> Result<Vec<Dialogue>, CorpusError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.n_dialogues);
    for d in 0..cfg.n_dialogues {
        let emotion = Emotion::ALL[rng.gen_range(0..Emotion::ALL.len())];
        let keywords: Vec<String> = cfg.keywords[&emotion].iter().filter(|k| !k.trim().is_empty()).cloned().collect();
        let keyword: String = pick(&mut rng, &keywords).into();
        let exchanges = rng.gen_range(1..=cfg.max_exchanges);
        let mut turns: Vec<(Speaker, String)> = Vec::with_capacity(exchanges * 2);
        for _ in 1..exchanges {
            if rng.gen_bool(cfg.validating_rate) {
                turns.push((Speaker::A, pick(&mut rng, &cfg.history_disclosures).into()));
                turns.push((Speaker::B, pick(&mut rng, &cfg.history_validating_responses).into()));
            } else {
                turns.push((Speaker::A, pick(&mut rng, &cfg.openers).into()));
                turns.push((Speaker::B, pick(&mut rng, &cfg.listener_replies).into()));
            }
        }
        let word = &cfg.emotion_words[&emotion];
        let (template, response) = if rng.gen_bool(cfg.validating_rate) {
            (pick(&mut rng, &cfg.disclosure_templates), pick(&mut rng, &cfg.validating_responses))
        } else {
            (pick(&mut rng, &cfg.factual_templates), pick(&mut rng, &cfg.neutral_responses))
        };
        turns.push((Speaker::A, template.replace("{kw}", &keyword)));
        turns.push((Speaker::B, response.replace("{word}", word)));

        let mut dialogue = Dialogue::new(alloc::format!("syn-{d:05}"), Source::Synthetic, turns);
        dialogue.gold_emotion = Some(emotion);
        dialogue.gold_cause = Some(keyword);
        out.push(dialogue);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{annotate_validation, PhraseRuleSet, TimingLabel};
    use alloc::collections::BTreeSet;

    fn cfg(n: usize, rate: f64) -> SynthesisConfig {
        SynthesisConfig { n_dialogues: n, validating_rate: rate, ..Default::default() }
    }

    /// Fraction of listener replies labeled validating.
    fn validating_fraction(dialogues: &[Dialogue]) -> f64 {
        let rules = PhraseRuleSet::default();
        let (mut pos, mut total) = (0usize, 0usize);
        for d in dialogues {
            for (ex, pair) in annotate_validation(d, &rules).unwrap().iter().zip(d.turns.windows(2)) {
                if pair[1].speaker == Speaker::B {
                    total += 1;
                    pos += (ex.timing_label == Some(TimingLabel::Validating)) as usize;
                }
            }
        }
        pos as f64 / total as f64
    }

    #[test]
    fn zero_rate_gives_no_validating_pairs() {
        let ds = generate_synthetic(&cfg(300, 0.0), 1).unwrap();
        let rules = PhraseRuleSet::default();
        for d in &ds {
            for ex in annotate_validation(d, &rules).unwrap() {
                assert_eq!(ex.timing_label, Some(TimingLabel::NonValidating), "{d:?}");
            }
        }
    }

    #[test]
    fn rate_is_respected() {
        // Several hundred independent Bernoulli(0.29) draws give a standard
        // error near 0.007, so ±0.03 is a > 4 sigma band.
        let ds = generate_synthetic(&cfg(2000, 0.29), 42).unwrap();
        let frac = validating_fraction(&ds);
        assert!((frac - 0.29).abs() <= 0.03, "fraction {frac}");
    }

    #[test]
    fn labels_recoverable_from_structure() {
        // Every reply to a disclosure validates, nothing else does.
        let c = cfg(500, 0.5);
        let disclosures: Vec<String> = c.history_disclosures.clone();
        let ds = generate_synthetic(&c, 3).unwrap();
        let rules = PhraseRuleSet::default();
        for d in &ds {
            for ex in annotate_validation(d, &rules).unwrap() {
                let speaker_turn = &d.turns[ex.turn];
                let disclosed = speaker_turn.speaker == Speaker::A
                    && (disclosures.contains(&speaker_turn.text)
                        || c.disclosure_templates
                            .iter()
                            .any(|t| t.replace("{kw}", d.gold_cause.as_deref().unwrap()) == speaker_turn.text));
                assert_eq!(ex.timing_label == Some(TimingLabel::Validating), disclosed);
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic(&cfg(100, 0.29), 5).unwrap();
        let b = generate_synthetic(&cfg(100, 0.29), 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(&cfg(100, 0.29), 6).unwrap());
    }

    #[test]
    fn cause_planted_in_final_speaker_turn() {
        for d in generate_synthetic(&cfg(300, 0.29), 9).unwrap() {
            let cause = d.gold_cause.as_deref().unwrap();
            let speaker = &d.turns[d.turns.len() - 2];
            assert!(speaker.text.contains(cause));
            let count: usize = d.turns.iter().map(|t| t.text.matches(cause).count()).sum();
            assert_eq!(count, 1, "keyword must appear exactly once: {d:?}");
        }
    }

    #[test]
    fn keyword_characters_absent_from_templates() {
        // Cause matching accepts partial containment, so a template character
        // shared with a keyword would count as a spurious hit.
        let c = SynthesisConfig::default();
        let template_chars: BTreeSet<char> = c
            .disclosure_templates
            .iter()
            .chain(&c.factual_templates)
            .chain(&c.history_disclosures)
            .chain(&c.openers)
            .chain(&c.listener_replies)
            .flat_map(|t| t.replace("{kw}", "").chars().collect::<Vec<_>>())
            .collect();
        for (emotion, words) in &c.keywords {
            for w in words {
                for ch in w.chars() {
                    assert!(!template_chars.contains(&ch), "{emotion}: {w} shares {ch}");
                }
            }
        }
    }

    #[test]
    fn empty_keyword_inventory_rejected() {
        let mut c = cfg(10, 0.2);
        c.keywords.insert(Emotion::Trust, Vec::new());
        assert!(matches!(generate_synthetic(&c, 0), Err(CorpusError::BadSynthesis(_))));
    }
}

//! The experiment/serving configuration document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use valresp_core::corpus::{PhraseRuleSet, Source, SplitSpec, SpokenFilterConfig, SynthesisConfig};
use valresp_core::neuralnet::{EncoderKind, ModelConfig, SelectionMetric, TrainConfig};
use valresp_core::pipeline::{BaselineDistribution, PipelineSettings};
use valresp_core::responder::EmotionLexicon;
use valresp_core::text::{TokenizerMode, DEFAULT_MAX_LEN};

use crate::error::AppError;

fn synthesis_over_defaults<'de, D: serde::Deserializer<'de>>(d: D) -> Result<SynthesisConfig, D::Error> {
    use serde::de::Error;
    let given = serde_json::Map::deserialize(d)?;
    let mut merged = serde_json::to_value(SynthesisConfig::default()).map_err(D::Error::custom)?;
    let obj = merged.as_object_mut().expect("struct serializes to an object");
    obj.extend(given);
    serde_json::from_value(merged).map_err(D::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum CorpusSpec {
    /// Generate the planted-keyword corpus in memory. Keys left out take the
    /// bundled defaults.
    Synthetic(#[serde(deserialize_with = "synthesis_over_defaults")] SynthesisConfig),
    /// Dialogue JSON Lines files.
    Files(Vec<CorpusFile>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub path: PathBuf,
    /// Overrides the `source` field of every record when set.
    #[serde(default)]
    pub source: Option<Source>,
}

/// Architecture of one classifier; vocabulary size and class count are
/// filled in at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub embed_dim: usize,
    pub encoder: EncoderKind,
    pub hidden_dim: usize,
    pub max_len: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { embed_dim: 32, encoder: EncoderKind::SingleHeadAttention, hidden_dim: 32, max_len: DEFAULT_MAX_LEN }
    }
}

impl ModelSpec {
    pub fn model_config(&self, vocab_size: usize, num_classes: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            encoder: self.encoder,
            hidden_dim: self.hidden_dim,
            num_classes,
            max_len: self.max_len,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlmSettings {
    pub enabled: bool,
    pub mask_rate: f64,
    pub train: TrainConfig,
}

impl Default for MlmSettings {
    fn default() -> Self {
        MlmSettings {
            enabled: true,
            mask_rate: 0.15,
            train: TrainConfig { learning_rate: 1e-2, batch_size: 16, max_epochs: 5, ..TrainConfig::timing() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub text: [f64; 3],
    pub spoken: [f64; 3],
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { text: [0.8, 0.1, 0.1], spoken: [0.6, 0.2, 0.2] }
    }
}

impl SplitRatios {
    pub fn for_source(&self, source: Source, seed: u64) -> SplitSpec {
        let r = match source {
            Source::SpokenCorpus => self.spoken,
            Source::TextCorpus | Source::Synthetic => self.text,
        };
        SplitSpec { ratios: r, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: CorpusSpec,
    pub tokenizer: TokenizerMode,
    pub min_freq: usize,
    pub split: SplitRatios,
    pub spoken_filter: SpokenFilterConfig,
    pub rules: PhraseRuleSet,
    pub timing_model: ModelSpec,
    pub emotion_model: ModelSpec,
    pub timing_train: TrainConfig,
    pub emotion_train: TrainConfig,
    pub mlm: MlmSettings,
    pub lexicon: EmotionLexicon,
    pub settings: PipelineSettings,
    pub baseline: BaselineDistribution,
    /// Every stage seed is derived from this one.
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let desk = |lr| TrainConfig {
            learning_rate: lr,
            batch_size: 32,
            eval_interval_steps: 50,
            selection_metric: SelectionMetric::MacroF1,
            ..TrainConfig::timing()
        };
        PipelineConfig {
            corpus: CorpusSpec::Synthetic(SynthesisConfig::default()),
            tokenizer: TokenizerMode::Character,
            min_freq: 1,
            split: SplitRatios::default(),
            spoken_filter: SpokenFilterConfig::default(),
            rules: PhraseRuleSet::default(),
            timing_model: ModelSpec::default(),
            emotion_model: ModelSpec::default(),
            timing_train: desk(3e-3),
            emotion_train: TrainConfig { target_class: None, ..desk(3e-3) },
            mlm: MlmSettings::default(),
            lexicon: EmotionLexicon::default(),
            settings: PipelineSettings::default(),
            baseline: BaselineDistribution::Empirical,
            seed: 42,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Named offsets so each stage draws from its own stream.
pub mod seeds {
    pub const SYNTHESIS: u64 = 0;
    pub const SPLIT: u64 = 1;
    pub const MLM_INIT: u64 = 2;
    pub const MLM_TRAIN: u64 = 3;
    pub const TIMING_INIT: u64 = 4;
    pub const TIMING_TRAIN: u64 = 5;
    pub const EMOTION_INIT: u64 = 6;
    pub const EMOTION_TRAIN: u64 = 7;
    pub const BASELINE: u64 = 8;
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, AppError> {
        serde_json::from_str(text).map_err(|e| AppError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn stage_seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_mul(1_000).wrapping_add(offset)
    }

    pub fn validate(&self) -> Result<(), AppError> {
        let cfg = |e: &dyn std::fmt::Display| AppError::Config(e.to_string());
        for (name, r) in [("text", self.split.text), ("spoken", self.split.spoken)] {
            SplitSpec { ratios: r, seed: 0 }.validate().map_err(|e| cfg(&e))?;
            if r[1] <= 0.0 || r[2] <= 0.0 {
                return Err(AppError::Config(format!("{name} split needs positive dev and test ratios, got {r:?}")));
            }
        }
        match &self.corpus {
            CorpusSpec::Synthetic(s) => s.validate().map_err(|e| cfg(&e))?,
            CorpusSpec::Files(files) => {
                if files.is_empty() {
                    return Err(AppError::Config("no corpus files given".into()));
                }
                for f in files {
                    if !f.path.is_file() {
                        return Err(AppError::Config(format!("corpus file {} does not exist", f.path.display())));
                    }
                }
            }
        }
        if self.min_freq == 0 {
            return Err(AppError::Config("min_freq must be at least 1".into()));
        }
        for (name, spec) in [("timing_model", self.timing_model), ("emotion_model", self.emotion_model)] {
            spec.model_config(16, 2, 0).validate().map_err(|e| AppError::Config(format!("{name}: {e}")))?;
        }
        for (name, t) in [
            ("timing_train", &self.timing_train),
            ("emotion_train", &self.emotion_train),
            ("mlm.train", &self.mlm.train),
        ] {
            t.validate().map_err(|e| AppError::Config(format!("{name}: {e}")))?;
        }
        if self.mlm.enabled && !(self.mlm.mask_rate > 0.0 && self.mlm.mask_rate < 1.0) {
            return Err(AppError::Config(format!("mlm.mask_rate must lie in (0, 1), got {}", self.mlm.mask_rate)));
        }
        self.rules.compile().map_err(|e| cfg(&e))?;
        self.lexicon.validate().map_err(|e| cfg(&e))?;
        self.settings.responder.validate().map_err(|e| cfg(&e))?;
        if self.settings.top_k == 0 {
            return Err(AppError::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

//! A small encoder-classifier with hand-written backpropagation.
//!
//! Architecture, per token sequence `ids` of length `L`:
//!
//! ```text
//! x_t = E[ids_t] (+ P_t for attention)      PAD positions are masked out
//! h_t = x_t + Σ_u softmax_u(q_t·k_u/√d) v_u  (single_head_attention)
//! h_t = x_t                                  (mean_pool)
//! pooled = mean of h_t over non-PAD positions
//! z = tanh(pooled W1 + b1)                   (skipped when hidden_dim = 0)
//! logits = z W2 + b2
//! ```
//!
//! All arithmetic is `f64`.

mod checkpoint;
mod mlm;
mod model;
mod optim;
mod train;

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::text::PAD_ID;

pub use checkpoint::{Checkpoint, ParamTensor, TrainSummary, CHECKPOINT_FORMAT_VERSION};
pub use mlm::{apply_mlm_mask, pretrain_mlm, MlmHead, MlmLog};
pub use model::{softmax, Prediction, Sample, Trace};
pub use optim::AdamW;
pub use train::{
    evaluate, train_classifier, train_classifier_with, DevMetrics, EvalRecord, SelectionMetric, TrainConfig, TrainLog,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("empty input sequence")]
    EmptyInput,
    #[error("input of length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("corpus of {len} sequences is shorter than one batch of {batch_size}")]
    CorpusTooSmall { len: usize, batch_size: usize },
    #[error("mask rate must lie strictly between 0 and 1, got {0}")]
    BadMaskRate(f64),
    #[error("invalid train config: {0}")]
    InvalidTrainConfig(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    MeanPool,
    #[default]
    SingleHeadAttention,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub encoder: EncoderKind,
    /// Width of the tanh layer before the head; 0 makes the head linear.
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, num_classes: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 32,
            encoder: EncoderKind::SingleHeadAttention,
            hidden_dim: 32,
            num_classes,
            max_len: crate::text::DEFAULT_MAX_LEN,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if self.vocab_size <= crate::text::NUM_RESERVED {
            return bad("vocab_size must exceed the reserved tokens");
        }
        if self.embed_dim == 0 || self.max_len == 0 {
            return bad("embed_dim and max_len must be positive");
        }
        if ![2, 8, self.vocab_size].contains(&self.num_classes) {
            return bad("num_classes must be 2, 8 or vocab_size");
        }
        Ok(())
    }

    fn feature_dim(&self) -> usize {
        if self.hidden_dim > 0 {
            self.hidden_dim
        } else {
            self.embed_dim
        }
    }
}

/// Parameter tensors, stored flat and row-major. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `vocab_size × embed_dim`; row `PAD_ID` is pinned to zero.
    pub embedding: Vec<f64>,
    /// `max_len × embed_dim`, attention only.
    pub position: Vec<f64>,
    /// `embed_dim × embed_dim` projections, attention only.
    pub query: Vec<f64>,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    /// `embed_dim × hidden_dim` and `hidden_dim`.
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    /// `feature_dim × num_classes` and `num_classes`.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

/// Tensor names in storage order.
pub const PARAM_NAMES: [&str; 9] =
    ["embedding", "position", "query", "key", "value", "hidden_w", "hidden_b", "head_w", "head_b"];

fn uniform(rng: &mut ChaCha8Rng, n: usize, limit: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

fn xavier(fan_in: usize, fan_out: usize) -> f64 {
    libm::sqrt(6.0 / (fan_in + fan_out) as f64)
}

impl ModelParams {
    /// Deterministic initialization from `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Result<ModelParams, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (v, d, h, c) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.num_classes);
        let embed_limit = libm::sqrt(3.0 / d as f64);
        let mut p = ModelParams::zeros(cfg);
        p.embedding = uniform(&mut rng, v * d, embed_limit);
        if cfg.encoder == EncoderKind::SingleHeadAttention {
            p.position = uniform(&mut rng, cfg.max_len * d, 0.1 * embed_limit);
            p.query = uniform(&mut rng, d * d, xavier(d, d));
            p.key = uniform(&mut rng, d * d, xavier(d, d));
            p.value = uniform(&mut rng, d * d, xavier(d, d));
        }
        if h > 0 {
            p.hidden_w = uniform(&mut rng, d * h, xavier(d, h));
        }
        p.head_w = uniform(&mut rng, cfg.feature_dim() * c, xavier(cfg.feature_dim(), c));
        p.pin_pad();
        Ok(p)
    }

    /// All-zero tensors with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> ModelParams {
        let mut p = ModelParams {
            config: cfg.clone(),
            embedding: Vec::new(),
            position: Vec::new(),
            query: Vec::new(),
            key: Vec::new(),
            value: Vec::new(),
            hidden_w: Vec::new(),
            hidden_b: Vec::new(),
            head_w: Vec::new(),
            head_b: Vec::new(),
        };
        for (name, shape) in cfg_shapes(cfg) {
            *p.tensor_mut(name).expect("known name") = alloc::vec![0.0; shape.iter().product()];
        }
        p
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams::zeros(&self.config)
    }

    pub fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        cfg_shapes(&self.config)
    }

    pub fn tensor(&self, name: &str) -> Option<&Vec<f64>> {
        Some(match name {
            "embedding" => &self.embedding,
            "position" => &self.position,
            "query" => &self.query,
            "key" => &self.key,
            "value" => &self.value,
            "hidden_w" => &self.hidden_w,
            "hidden_b" => &self.hidden_b,
            "head_w" => &self.head_w,
            "head_b" => &self.head_b,
            _ => return None,
        })
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        Some(match name {
            "embedding" => &mut self.embedding,
            "position" => &mut self.position,
            "query" => &mut self.query,
            "key" => &mut self.key,
            "value" => &mut self.value,
            "hidden_w" => &mut self.hidden_w,
            "hidden_b" => &mut self.hidden_b,
            "head_w" => &mut self.head_w,
            "head_b" => &mut self.head_b,
            _ => return None,
        })
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 9] {
        [
            ("embedding", &mut self.embedding),
            ("position", &mut self.position),
            ("query", &mut self.query),
            ("key", &mut self.key),
            ("value", &mut self.value),
            ("hidden_w", &mut self.hidden_w),
            ("hidden_b", &mut self.hidden_b),
            ("head_w", &mut self.head_w),
            ("head_b", &mut self.head_b),
        ]
    }

    /// Biases are excluded from weight decay.
    pub fn decays(name: &str) -> bool {
        !name.ends_with("_b")
    }

    pub fn pin_pad(&mut self) {
        let d = self.config.embed_dim;
        let row = PAD_ID as usize * d;
        self.embedding[row..row + d].fill(0.0);
    }

    pub fn is_finite(&self) -> bool {
        PARAM_NAMES.iter().all(|n| self.tensor(n).unwrap().iter().all(|x| x.is_finite()))
    }

    /// A model for a new task that reuses this model's embeddings and encoder
    /// with a freshly initialized head for `num_classes`.
    pub fn with_new_head(&self, num_classes: usize, hidden_dim: usize, seed: u64) -> Result<ModelParams, ModelError> {
        let cfg = ModelConfig { num_classes, hidden_dim, seed, ..self.config.clone() };
        let mut fresh = ModelParams::init(&cfg)?;
        fresh.embedding.clone_from(&self.embedding);
        fresh.position.clone_from(&self.position);
        fresh.query.clone_from(&self.query);
        fresh.key.clone_from(&self.key);
        fresh.value.clone_from(&self.value);
        Ok(fresh)
    }

    /// Sum of squares of every tensor, for diagnostics and weight-decay tests.
    pub fn squared_norm(&self) -> f64 {
        PARAM_NAMES.iter().flat_map(|n| self.tensor(n).unwrap().iter()).map(|x| x * x).sum()
    }
}

fn cfg_shapes(cfg: &ModelConfig) -> Vec<(&'static str, Vec<usize>)> {
    let (v, d, h, c) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.num_classes);
    let attn = cfg.encoder == EncoderKind::SingleHeadAttention;
    let pick = |on: bool, shape: Vec<usize>| if on { shape } else { alloc::vec![0] };
    alloc::vec![
        ("embedding", alloc::vec![v, d]),
        ("position", pick(attn, alloc::vec![cfg.max_len, d])),
        ("query", pick(attn, alloc::vec![d, d])),
        ("key", pick(attn, alloc::vec![d, d])),
        ("value", pick(attn, alloc::vec![d, d])),
        ("hidden_w", pick(h > 0, alloc::vec![d, h])),
        ("hidden_b", pick(h > 0, alloc::vec![h])),
        ("head_w", alloc::vec![cfg.feature_dim(), c]),
        ("head_b", alloc::vec![c]),
    ]
}

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams, TrainLog, PARAM_NAMES};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainSummary {
    pub task: String,
    pub steps: usize,
    pub epochs: usize,
    pub best_step: usize,
    pub best_score: f64,
    pub evaluations: usize,
}

impl TrainSummary {
    pub fn from_log(task: &str, log: &TrainLog) -> TrainSummary {
        TrainSummary {
            task: task.to_string(),
            steps: log.steps,
            epochs: log.epochs,
            best_step: log.best_step,
            best_score: log.best_score,
            evaluations: log.evals.len(),
        }
    }
}

/// On-disk model: config, named flat tensors and a pointer to the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    /// Path or name of the vocabulary file, relative to the checkpoint.
    pub vocab_ref: String,
    pub vocab_fingerprint: u64,
    pub params: BTreeMap<String, ParamTensor>,
    #[serde(default)]
    pub train_summary: Option<TrainSummary>,
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
}

impl Checkpoint {
    pub fn new(
        params: &ModelParams,
        vocab_ref: &str,
        vocab_fingerprint: u64,
        summary: Option<TrainSummary>,
    ) -> Checkpoint {
        let tensors = params
            .shapes()
            .into_iter()
            .map(|(name, shape)| {
                let data = params.tensor(name).expect("known").clone();
                (name.to_string(), ParamTensor { shape, data })
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: params.config.clone(),
            vocab_ref: vocab_ref.to_string(),
            vocab_fingerprint,
            params: tensors,
            train_summary: summary,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    /// Parses and checks the version header before the body.
    pub fn from_json(text: &str) -> Result<Checkpoint, ModelError> {
        let header: Header =
            serde_json::from_str(text).map_err(|e| ModelError::Corrupt(format!("unreadable header: {e}")))?;
        if header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(ModelError::VersionMismatch {
                found: header.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        serde_json::from_str(text).map_err(|e| ModelError::Corrupt(e.to_string()))
    }

    pub fn to_params(&self) -> Result<ModelParams, ModelError> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(ModelError::VersionMismatch {
                found: self.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        self.config.validate().map_err(|e| ModelError::Corrupt(e.to_string()))?;
        let mut params = ModelParams::zeros(&self.config);
        for (name, shape) in params.shapes() {
            let t = self.params.get(name).ok_or_else(|| ModelError::Corrupt(format!("missing tensor {name}")))?;
            if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(ModelError::Corrupt(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
            }
            *params.tensor_mut(name).expect("known") = t.data.clone();
        }
        if let Some(extra) = self.params.keys().find(|k| !PARAM_NAMES.contains(&k.as_str())) {
            return Err(ModelError::Corrupt(format!("unknown tensor {extra}")));
        }
        if !params.is_finite() {
            return Err(ModelError::Corrupt("non-finite parameter".into()));
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::super::EncoderKind;
    use super::*;

    fn params() -> ModelParams {
        ModelParams::init(&ModelConfig {
            vocab_size: 10,
            embed_dim: 4,
            encoder: EncoderKind::SingleHeadAttention,
            hidden_dim: 3,
            num_classes: 8,
            max_len: 6,
            seed: 77,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let p = params();
        let text = Checkpoint::new(&p, "vocab.json", 42, None).to_json();
        let back = Checkpoint::from_json(&text).unwrap().to_params().unwrap();
        assert_eq!(back, p);
        for ids in [[4u32, 5, 6].as_slice(), &[9], &[0, 7, 8, 4, 5, 6]] {
            let (a, b) = (p.forward(ids).unwrap(), back.forward(ids).unwrap());
            assert!(a.logits.iter().zip(&b.logits).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncated_is_corrupt() {
        let text = Checkpoint::new(&params(), "v", 0, None).to_json();
        for cut in [10, text.len() / 2, text.len() - 1] {
            assert!(matches!(Checkpoint::from_json(&text[..cut]), Err(ModelError::Corrupt(_))));
        }
    }

    #[test]
    fn old_version_rejected() {
        let mut ck = Checkpoint::new(&params(), "v", 0, None);
        ck.format_version = 0;
        assert_eq!(
            Checkpoint::from_json(&ck.to_json()).unwrap_err(),
            ModelError::VersionMismatch { found: 0, expected: CHECKPOINT_FORMAT_VERSION }
        );
    }

    #[test]
    fn shape_mismatch_is_corrupt() {
        let mut ck = Checkpoint::new(&params(), "v", 0, None);
        ck.params.get_mut("head_w").unwrap().data.pop();
        assert!(matches!(ck.to_params(), Err(ModelError::Corrupt(_))));
        let mut ck = Checkpoint::new(&params(), "v", 0, None);
        ck.params.remove("key");
        assert!(matches!(ck.to_params(), Err(ModelError::Corrupt(_))));
    }
}

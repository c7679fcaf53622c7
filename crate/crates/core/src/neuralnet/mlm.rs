use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::softmax;
use super::{AdamW, EncoderKind, ModelError, ModelParams, TrainConfig};
use crate::text::{MASK_ID, NUM_RESERVED};

/// Vocabulary-sized prediction head used only during pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead {
    /// `embed_dim × vocab_size`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl MlmHead {
    pub fn init(embed_dim: usize, vocab_size: usize, seed: u64) -> MlmHead {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = libm::sqrt(6.0 / (embed_dim + vocab_size) as f64);
        MlmHead {
            weights: (0..embed_dim * vocab_size).map(|_| rng.gen_range(-limit..limit)).collect(),
            bias: vec![0.0; vocab_size],
        }
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let v = self.bias.len();
        let mut out = self.bias.clone();
        for (j, &hj) in h.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&self.weights[j * v..(j + 1) * v]) {
                *o += hj * w;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MlmLog {
    /// Masked-position loss on a fixed evaluation masking, before training.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Same evaluation after each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub skipped_steps: usize,
}

/// Masks `round(mask_rate × eligible)` non-reserved positions. Each chosen
/// position becomes MASK (80%), a random non-reserved token (10%) or stays
/// unchanged (10%). Returns the corrupted ids and `(position, original id)`.
pub fn apply_mlm_mask<R: Rng>(
    ids: &[u32],
    mask_rate: f64,
    vocab_size: usize,
    rng: &mut R,
) -> (Vec<u32>, Vec<(usize, u32)>) {
    let mut eligible: Vec<usize> = (0..ids.len()).filter(|&t| ids[t] as usize >= NUM_RESERVED).collect();
    let count = libm::round(mask_rate * eligible.len() as f64) as usize;
    eligible.shuffle(rng);
    let mut chosen: Vec<usize> = eligible.into_iter().take(count).collect();
    chosen.sort_unstable();
    let mut out = ids.to_vec();
    let mut targets = Vec::with_capacity(chosen.len());
    for t in chosen {
        targets.push((t, ids[t]));
        let roll: f64 = rng.gen();
        if roll < 0.8 {
            out[t] = MASK_ID;
        } else if roll < 0.9 && vocab_size > NUM_RESERVED {
            out[t] = rng.gen_range(NUM_RESERVED as u32..vocab_size as u32);
        }
    }
    (out, targets)
}

struct Masked {
    ids: Vec<u32>,
    targets: Vec<(usize, u32)>,
}

/// Mean masked-position cross-entropy, optionally accumulating gradients.
fn mlm_loss(
    params: &ModelParams,
    head: &MlmHead,
    batch: &[Masked],
    mut grads: Option<(&mut ModelParams, &mut MlmHead)>,
) -> Result<(f64, usize), ModelError> {
    let total: usize = batch.iter().map(|m| m.targets.len()).sum();
    if total == 0 {
        return Ok((0.0, 0));
    }
    let d = params.config.embed_dim;
    let v = head.bias.len();
    let inv = 1.0 / total as f64;
    let mut loss = 0.0;
    for m in batch.iter().filter(|m| !m.targets.is_empty()) {
        let trace = params.encode(&m.ids)?;
        let l = m.ids.len();
        let mut dstates = vec![0.0; l * d];
        let mut dpooled = vec![0.0; d];
        for &(t, target) in &m.targets {
            let rep = match params.config.encoder {
                EncoderKind::SingleHeadAttention => &trace.states[t * d..(t + 1) * d],
                EncoderKind::MeanPool => &trace.pooled[..],
            };
            let probs = softmax(&head.logits(rep));
            loss -= libm::log(probs[target as usize].max(f64::MIN_POSITIVE)) * inv;
            if let Some((_, hg)) = grads.as_mut() {
                let dlogits: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (p - if i == target as usize { 1.0 } else { 0.0 }) * inv)
                    .collect();
                let drep = match params.config.encoder {
                    EncoderKind::SingleHeadAttention => &mut dstates[t * d..(t + 1) * d],
                    EncoderKind::MeanPool => &mut dpooled[..],
                };
                for j in 0..d {
                    let wrow = &head.weights[j * v..(j + 1) * v];
                    let grow = &mut hg.weights[j * v..(j + 1) * v];
                    let mut acc = 0.0;
                    for i in 0..v {
                        grow[i] += rep[j] * dlogits[i];
                        acc += wrow[i] * dlogits[i];
                    }
                    drep[j] += acc;
                }
                for (b, g) in hg.bias.iter_mut().zip(&dlogits) {
                    *b += g;
                }
            }
        }
        if let Some((pg, _)) = grads.as_mut() {
            params.encoder_backward(&trace, Some(&dpooled), Some(&dstates), Some(pg));
        }
    }
    Ok((loss, total))
}

/// Masked-language-model pretraining of the embedding and encoder. The
/// classification head of `params` is returned untouched and the MLM head is
/// discarded.
pub fn pretrain_mlm(
    params: &ModelParams,
    corpus: &[Vec<u32>],
    cfg: &TrainConfig,
    mask_rate: f64,
) -> Result<(ModelParams, MlmLog), ModelError> {
    cfg.validate()?;
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(ModelError::BadMaskRate(mask_rate));
    }
    if corpus.is_empty() || corpus.len() < cfg.batch_size {
        return Err(ModelError::CorpusTooSmall { len: corpus.len(), batch_size: cfg.batch_size });
    }
    let (d, v) = (params.config.embed_dim, params.config.vocab_size);
    let mut current = params.clone();
    let mut head = MlmHead::init(d, v, cfg.seed ^ 0x6d6c_6d68);
    let mut opt = AdamW::new(&current, cfg.learning_rate, cfg.weight_decay);
    let mut head_opt = AdamW::empty(cfg.learning_rate, cfg.weight_decay);

    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6576_616c);
    let eval_set: Vec<Masked> = corpus
        .iter()
        .map(|ids| {
            let (ids, targets) = apply_mlm_mask(ids, mask_rate, v, &mut eval_rng);
            Masked { ids, targets }
        })
        .collect();
    let eval = |p: &ModelParams, h: &MlmHead| mlm_loss(p, h, &eval_set, None).map(|(l, _)| l);

    let mut log = MlmLog { initial_loss: eval(&current, &head)?, ..MlmLog::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Masked> = chunk
                .iter()
                .map(|&i| {
                    let (ids, targets) = apply_mlm_mask(&corpus[i], mask_rate, v, &mut rng);
                    Masked { ids, targets }
                })
                .collect();
            let mut pg = current.zeros_like();
            let mut hg = MlmHead { weights: vec![0.0; head.weights.len()], bias: vec![0.0; v] };
            let (loss, n) = mlm_loss(&current, &head, &batch, Some((&mut pg, &mut hg)))?;
            log.steps += 1;
            if n == 0 {
                log.skipped_steps += 1;
                continue;
            }
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { step: log.steps });
            }
            // The classification head gets no signal here and must not decay.
            for name in ["hidden_w", "hidden_b", "head_w", "head_b"] {
                pg.tensor_mut(name).expect("known").fill(0.0);
            }
            let keep =
                (current.hidden_w.clone(), current.hidden_b.clone(), current.head_w.clone(), current.head_b.clone());
            opt.step(&mut current, &pg);
            (current.hidden_w, current.hidden_b, current.head_w, current.head_b) = keep;
            head_opt.step_extra(&mut [(&mut head.weights, &hg.weights, true), (&mut head.bias, &hg.bias, false)]);
        }
        log.epoch_losses.push(eval(&current, &head)?);
    }
    log.final_loss = *log.epoch_losses.last().unwrap_or(&log.initial_loss);
    Ok((current, log))
}

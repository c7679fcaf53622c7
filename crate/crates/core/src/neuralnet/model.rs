use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{EncoderKind, ModelError, ModelParams};
use crate::text::PAD_ID;

/// A labeled id sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub ids: Vec<u32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Lowest index among the maximal probabilities.
    pub label: usize,
    /// Probability of `label`.
    pub confidence: f64,
    pub distribution: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Prediction {
        let distribution = softmax(&logits);
        let mut label = 0;
        for (i, &p) in distribution.iter().enumerate() {
            if p > distribution[label] {
                label = i;
            }
        }
        Prediction { label, confidence: distribution[label], distribution, logits }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub ids: Vec<u32>,
    pub active: Vec<bool>,
    pub n_active: usize,
    /// Encoder inputs, `L × d`.
    pub x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights, `L × L`.
    attn: Vec<f64>,
    /// Token states, `L × d`.
    pub states: Vec<f64>,
    pub pooled: Vec<f64>,
    hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out (rows × cols) = x (rows × inner) · w (inner × cols)`.
fn matmul(x: &[f64], w: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let xr = &x[r * inner..(r + 1) * inner];
        let or = &mut out[r * cols..(r + 1) * cols];
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wi = &w[i * cols..(i + 1) * cols];
            for (o, &wij) in or.iter_mut().zip(wi) {
                *o += xi * wij;
            }
        }
    }
    out
}

/// `dw += xᵀ · dy` and `dx += dy · wᵀ` for `y = x · w`.
#[allow(clippy::too_many_arguments)]
fn matmul_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    inner: usize,
    cols: usize,
    dw: Option<&mut [f64]>,
    dx: &mut [f64],
) {
    if let Some(dw) = dw {
        for r in 0..rows {
            let dyr = &dy[r * cols..(r + 1) * cols];
            for i in 0..inner {
                let xi = x[r * inner + i];
                if xi == 0.0 {
                    continue;
                }
                for (g, &d) in dw[i * cols..(i + 1) * cols].iter_mut().zip(dyr) {
                    *g += xi * d;
                }
            }
        }
    }
    for r in 0..rows {
        let dyr = &dy[r * cols..(r + 1) * cols];
        for i in 0..inner {
            dx[r * inner + i] += dot(&w[i * cols..(i + 1) * cols], dyr);
        }
    }
}

impl ModelParams {
    fn check_ids(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if ids.len() > self.config.max_len {
            return Err(ModelError::TooLong { len: ids.len(), max_len: self.config.max_len });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::IdOutOfRange { id, vocab_size: self.config.vocab_size });
        }
        Ok(())
    }

    /// Runs the encoder and pooling; the head is left for [`Self::trace`].
    pub fn encode(&self, ids: &[u32]) -> Result<Trace, ModelError> {
        self.check_ids(ids)?;
        let d = self.config.embed_dim;
        let l = ids.len();
        let mut x = vec![0.0; l * d];
        for (t, &id) in ids.iter().enumerate() {
            let row = &mut x[t * d..(t + 1) * d];
            row.copy_from_slice(&self.embedding[id as usize * d..(id as usize + 1) * d]);
            if self.config.encoder == EncoderKind::SingleHeadAttention {
                for (r, p) in row.iter_mut().zip(&self.position[t * d..(t + 1) * d]) {
                    *r += p;
                }
            }
        }
        Ok(self.encode_inputs(x, ids))
    }

    fn encode_inputs(&self, x: Vec<f64>, ids: &[u32]) -> Trace {
        let d = self.config.embed_dim;
        let l = ids.len();
        let active: Vec<bool> = ids.iter().map(|&id| id != PAD_ID).collect();
        let n_active = active.iter().filter(|&&a| a).count();
        let (mut q, mut k, mut v, mut attn) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let states = match self.config.encoder {
            EncoderKind::MeanPool => x.clone(),
            EncoderKind::SingleHeadAttention => {
                q = matmul(&x, &self.query, l, d, d);
                k = matmul(&x, &self.key, l, d, d);
                v = matmul(&x, &self.value, l, d, d);
                let scale = 1.0 / libm::sqrt(d as f64);
                attn = vec![0.0; l * l];
                let mut states = x.clone();
                for t in 0..l {
                    if !active[t] {
                        continue;
                    }
                    let qt = &q[t * d..(t + 1) * d];
                    let scores: Vec<f64> =
                        (0..l).filter(|&u| active[u]).map(|u| dot(qt, &k[u * d..(u + 1) * d]) * scale).collect();
                    let weights = softmax(&scores);
                    let mut w = weights.into_iter();
                    for u in (0..l).filter(|&u| active[u]) {
                        let a = w.next().unwrap();
                        attn[t * l + u] = a;
                        for (s, vu) in states[t * d..(t + 1) * d].iter_mut().zip(&v[u * d..(u + 1) * d]) {
                            *s += a * vu;
                        }
                    }
                }
                states
            }
        };
        let mut pooled = vec![0.0; d];
        if n_active > 0 {
            for t in (0..l).filter(|&t| active[t]) {
                for (p, s) in pooled.iter_mut().zip(&states[t * d..(t + 1) * d]) {
                    *p += s;
                }
            }
            for p in &mut pooled {
                *p /= n_active as f64;
            }
        }
        Trace {
            ids: ids.to_vec(),
            active,
            n_active,
            x,
            q,
            k,
            v,
            attn,
            states,
            pooled,
            hidden: Vec::new(),
            logits: Vec::new(),
        }
    }

    #[cfg(test)]
    fn logits_from_inputs(&self, x: &[f64], ids: &[u32]) -> Vec<f64> {
        let mut t = self.encode_inputs(x.to_vec(), ids);
        self.head_forward(&mut t);
        t.logits
    }

    fn head_forward(&self, trace: &mut Trace) {
        let (d, h, c) = (self.config.embed_dim, self.config.hidden_dim, self.config.num_classes);
        let features = if h > 0 {
            let mut pre = matmul(&trace.pooled, &self.hidden_w, 1, d, h);
            for (z, b) in pre.iter_mut().zip(&self.hidden_b) {
                *z = libm::tanh(*z + b);
            }
            trace.hidden = pre;
            &trace.hidden
        } else {
            &trace.pooled
        };
        let mut logits = matmul(features, &self.head_w, 1, features.len(), c);
        for (z, b) in logits.iter_mut().zip(&self.head_b) {
            *z += b;
        }
        trace.logits = logits;
    }

    /// Full forward pass keeping activations.
    pub fn trace(&self, ids: &[u32]) -> Result<Trace, ModelError> {
        let mut t = self.encode(ids)?;
        self.head_forward(&mut t);
        Ok(t)
    }

    pub fn forward(&self, ids: &[u32]) -> Result<Prediction, ModelError> {
        Ok(Prediction::from_logits(self.trace(ids)?.logits))
    }

    /// Contextual token vectors (encoder outputs), one per position.
    pub fn token_states(&self, ids: &[u32]) -> Result<Vec<Vec<f64>>, ModelError> {
        let t = self.encode(ids)?;
        Ok(t.states.chunks(self.config.embed_dim).map(<[f64]>::to_vec).collect())
    }

    /// Backpropagates `dlogits` through the head, returning `d pooled`.
    fn head_backward(&self, trace: &Trace, dlogits: &[f64], mut grads: Option<&mut ModelParams>) -> Vec<f64> {
        let (d, h, c) = (self.config.embed_dim, self.config.hidden_dim, self.config.num_classes);
        let features = if h > 0 { &trace.hidden } else { &trace.pooled };
        let f = features.len();
        let mut dfeat = vec![0.0; f];
        matmul_backward(
            features,
            &self.head_w,
            dlogits,
            1,
            f,
            c,
            grads.as_deref_mut().map(|g| g.head_w.as_mut_slice()),
            &mut dfeat,
        );
        if let Some(g) = grads.as_deref_mut() {
            for (gb, dz) in g.head_b.iter_mut().zip(dlogits) {
                *gb += dz;
            }
        }
        if h == 0 {
            return dfeat;
        }
        let dpre: Vec<f64> = dfeat.iter().zip(&trace.hidden).map(|(g, z)| g * (1.0 - z * z)).collect();
        let mut dpooled = vec![0.0; d];
        matmul_backward(
            &trace.pooled,
            &self.hidden_w,
            &dpre,
            1,
            d,
            h,
            grads.as_deref_mut().map(|g| g.hidden_w.as_mut_slice()),
            &mut dpooled,
        );
        if let Some(g) = grads {
            for (gb, dz) in g.hidden_b.iter_mut().zip(&dpre) {
                *gb += dz;
            }
        }
        dpooled
    }

    /// Backpropagates into the encoder given `d pooled` and optional extra
    /// per-token state gradients; returns `d x` (`L × d`) and accumulates
    /// parameter gradients when `grads` is given.
    pub(crate) fn encoder_backward(
        &self,
        trace: &Trace,
        dpooled: Option<&[f64]>,
        dstates_extra: Option<&[f64]>,
        mut grads: Option<&mut ModelParams>,
    ) -> Vec<f64> {
        let d = self.config.embed_dim;
        let l = trace.ids.len();
        let mut dstates = match dstates_extra {
            Some(extra) => extra.to_vec(),
            None => vec![0.0; l * d],
        };
        if let Some(dp) = dpooled {
            if trace.n_active > 0 {
                let inv = 1.0 / trace.n_active as f64;
                for t in (0..l).filter(|&t| trace.active[t]) {
                    for (ds, g) in dstates[t * d..(t + 1) * d].iter_mut().zip(dp) {
                        *ds += g * inv;
                    }
                }
            }
        }
        let dx = match self.config.encoder {
            EncoderKind::MeanPool => {
                let mut dx = dstates;
                for t in (0..l).filter(|&t| !trace.active[t]) {
                    dx[t * d..(t + 1) * d].fill(0.0);
                }
                dx
            }
            EncoderKind::SingleHeadAttention => {
                let scale = 1.0 / libm::sqrt(d as f64);
                // Residual path.
                let mut dx = dstates.clone();
                let mut dq = vec![0.0; l * d];
                let mut dk = vec![0.0; l * d];
                let mut dv = vec![0.0; l * d];
                let mut da = vec![0.0; l];
                for t in 0..l {
                    if !trace.active[t] {
                        dx[t * d..(t + 1) * d].fill(0.0);
                        continue;
                    }
                    let dh = &dstates[t * d..(t + 1) * d];
                    if dh.iter().all(|&g| g == 0.0) {
                        continue;
                    }
                    let arow = &trace.attn[t * l..(t + 1) * l];
                    let mut weighted = 0.0;
                    for u in (0..l).filter(|&u| trace.active[u]) {
                        da[u] = dot(dh, &trace.v[u * d..(u + 1) * d]);
                        weighted += arow[u] * da[u];
                        for (g, &x) in dv[u * d..(u + 1) * d].iter_mut().zip(dh) {
                            *g += arow[u] * x;
                        }
                    }
                    for u in (0..l).filter(|&u| trace.active[u]) {
                        let ds = arow[u] * (da[u] - weighted) * scale;
                        for j in 0..d {
                            dq[t * d + j] += ds * trace.k[u * d + j];
                            dk[u * d + j] += ds * trace.q[t * d + j];
                        }
                    }
                }
                let g = grads.as_deref_mut();
                let (gq, gk, gv) = match g {
                    Some(g) => (Some(g.query.as_mut_slice()), Some(g.key.as_mut_slice()), Some(g.value.as_mut_slice())),
                    None => (None, None, None),
                };
                matmul_backward(&trace.x, &self.query, &dq, l, d, d, gq, &mut dx);
                matmul_backward(&trace.x, &self.key, &dk, l, d, d, gk, &mut dx);
                matmul_backward(&trace.x, &self.value, &dv, l, d, d, gv, &mut dx);
                for t in (0..l).filter(|&t| !trace.active[t]) {
                    dx[t * d..(t + 1) * d].fill(0.0);
                }
                dx
            }
        };
        if let Some(g) = grads {
            for (t, &id) in trace.ids.iter().enumerate() {
                if !trace.active[t] {
                    continue;
                }
                let row = &dx[t * d..(t + 1) * d];
                for (ge, x) in g.embedding[id as usize * d..(id as usize + 1) * d].iter_mut().zip(row) {
                    *ge += x;
                }
                if self.config.encoder == EncoderKind::SingleHeadAttention {
                    for (gp, x) in g.position[t * d..(t + 1) * d].iter_mut().zip(row) {
                        *gp += x;
                    }
                }
            }
        }
        dx
    }

    /// Mean cross-entropy over the batch and its gradient for every tensor.
    pub fn loss_and_gradients(&self, batch: &[Sample]) -> Result<(f64, ModelParams), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let c = self.config.num_classes;
        let mut grads = self.zeros_like();
        let mut loss = 0.0;
        let inv = 1.0 / batch.len() as f64;
        for sample in batch {
            if sample.label >= c {
                return Err(ModelError::LabelOutOfRange { label: sample.label, num_classes: c });
            }
            let trace = self.trace(&sample.ids)?;
            let probs = softmax(&trace.logits);
            loss -= libm::log(probs[sample.label].max(f64::MIN_POSITIVE)) * inv;
            let dlogits: Vec<f64> =
                probs.iter().enumerate().map(|(i, p)| (p - if i == sample.label { 1.0 } else { 0.0 }) * inv).collect();
            let dpooled = self.head_backward(&trace, &dlogits, Some(&mut grads));
            self.encoder_backward(&trace, Some(&dpooled), None, Some(&mut grads));
        }
        Ok((loss, grads))
    }

    /// Gradient of the `class` logit with respect to the embedding row used
    /// at each position. PAD positions get zero rows.
    pub fn input_embedding_gradient(&self, ids: &[u32], class: usize) -> Result<Vec<Vec<f64>>, ModelError> {
        let c = self.config.num_classes;
        if class >= c {
            return Err(ModelError::LabelOutOfRange { label: class, num_classes: c });
        }
        let trace = self.trace(ids)?;
        let mut dlogits = vec![0.0; c];
        dlogits[class] = 1.0;
        let dpooled = self.head_backward(&trace, &dlogits, None);
        let dx = self.encoder_backward(&trace, Some(&dpooled), None, None);
        Ok(dx.chunks(self.config.embed_dim).map(<[f64]>::to_vec).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{ModelConfig, PARAM_NAMES};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(encoder: EncoderKind, hidden_dim: usize, num_classes: usize, seed: u64) -> ModelParams {
        ModelParams::init(&ModelConfig {
            vocab_size: 9,
            embed_dim: 4,
            encoder,
            hidden_dim,
            num_classes,
            max_len: 8,
            seed,
        })
        .unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn uniform_logits_give_uniform_distribution() {
        let p = Prediction::from_logits(vec![0.3; 8]);
        assert!(p.distribution.iter().all(|&x| (x - 0.125).abs() < 1e-15));
        assert_eq!(p.label, 0);
        assert!((p.confidence - 0.125).abs() < 1e-15);
    }

    #[test]
    fn shift_invariance() {
        let a = Prediction::from_logits(vec![0.1, 2.0, -1.0]);
        let b = Prediction::from_logits(vec![100.1, 102.0, 99.0]);
        assert_eq!(a.label, b.label);
        for (x, y) in a.distribution.iter().zip(&b.distribution) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_normalized_and_pure() {
        let m = small(EncoderKind::SingleHeadAttention, 3, 8, 1);
        let p = m.forward(&[4, 5, 6]).unwrap();
        assert!((p.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.distribution.iter().all(|&x| x > 0.0 && x < 1.0));
        assert_eq!(p, m.forward(&[4, 5, 6]).unwrap());
    }

    #[test]
    fn forward_errors() {
        let m = small(EncoderKind::MeanPool, 0, 2, 1);
        assert_eq!(m.forward(&[]), Err(ModelError::EmptyInput));
        assert_eq!(m.forward(&[99]), Err(ModelError::IdOutOfRange { id: 99, vocab_size: 9 }));
        assert!(matches!(m.forward(&[4; 9]), Err(ModelError::TooLong { .. })));
        let err = m.loss_and_gradients(&[Sample { ids: vec![4], label: 5 }]);
        assert!(matches!(err, Err(ModelError::LabelOutOfRange { .. })));
        assert!(matches!(m.loss_and_gradients(&[]), Err(ModelError::EmptyBatch)));
    }

    #[test]
    fn loss_vanishes_with_margin() {
        let mut m = small(EncoderKind::MeanPool, 0, 2, 1);
        let mut last = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            m.head_b = vec![0.0, margin];
            m.head_w.fill(0.0);
            let (loss, _) = m.loss_and_gradients(&[Sample { ids: vec![4, 5], label: 1 }]).unwrap();
            assert!(loss < last);
            last = loss;
        }
        assert!(last < 1e-20);
    }

    #[test]
    fn duplicated_example_same_gradient() {
        let m = small(EncoderKind::SingleHeadAttention, 3, 2, 4);
        let s = Sample { ids: vec![4, 7, 5], label: 1 };
        let (l1, g1) = m.loss_and_gradients(core::slice::from_ref(&s)).unwrap();
        let (l2, g2) = m.loss_and_gradients(&[s.clone(), s]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for name in PARAM_NAMES {
            for (a, b) in g1.tensor(name).unwrap().iter().zip(g2.tensor(name).unwrap()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_pool_linear_closed_form() {
        let m = small(EncoderKind::MeanPool, 0, 8, 2);
        let ids = [4u32, 5, 6, 7];
        for class in 0..8 {
            let g = m.input_embedding_gradient(&ids, class).unwrap();
            for row in &g {
                for (j, x) in row.iter().enumerate() {
                    let expected = m.head_w[j * 8 + class] / ids.len() as f64;
                    assert!((x - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn pad_positions_get_zero_gradient() {
        for encoder in [EncoderKind::MeanPool, EncoderKind::SingleHeadAttention] {
            let m = small(encoder, 3, 2, 5);
            let g = m.input_embedding_gradient(&[4, 0, 5, 0], 1).unwrap();
            assert!(g[1].iter().chain(&g[3]).all(|&x| x == 0.0));
            let all_pad = m.input_embedding_gradient(&[0, 0], 0).unwrap();
            assert!(all_pad.iter().flatten().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..12u64 {
            let encoder = if case % 2 == 0 { EncoderKind::MeanPool } else { EncoderKind::SingleHeadAttention };
            let m = small(encoder, (case % 3) as usize, if case % 4 < 2 { 2 } else { 8 }, case);
            let batch: Vec<Sample> = (0..3)
                .map(|_| {
                    let len = rng.gen_range(1..=6);
                    Sample {
                        ids: (0..len).map(|_| rng.gen_range(0..9)).collect(),
                        label: rng.gen_range(0..m.config.num_classes),
                    }
                })
                .collect();
            let (_, grads) = m.loss_and_gradients(&batch).unwrap();
            for name in PARAM_NAMES {
                for i in 0..m.tensor(name).unwrap().len() {
                    let mut plus = m.clone();
                    plus.tensor_mut(name).unwrap()[i] += h;
                    let mut minus = m.clone();
                    minus.tensor_mut(name).unwrap()[i] -= h;
                    let numeric = (plus.loss_and_gradients(&batch).unwrap().0
                        - minus.loss_and_gradients(&batch).unwrap().0)
                        / (2.0 * h);
                    let analytic = grads.tensor(name).unwrap()[i];
                    assert!(rel_err(analytic, numeric) < 1e-3, "case {case} {name}[{i}]: {analytic} vs {numeric}");
                }
            }
        }
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        let h = 1e-4;
        for case in 0..8u64 {
            let encoder = if case % 2 == 0 { EncoderKind::MeanPool } else { EncoderKind::SingleHeadAttention };
            let m = small(encoder, 3, 8, case + 100);
            let ids = [4u32, 6, 0, 5, 4];
            let class = (case % 8) as usize;
            let g = m.input_embedding_gradient(&ids, class).unwrap();
            for pos in 0..ids.len() {
                if ids[pos] == 0 {
                    continue;
                }
                for (j, &analytic) in g[pos].iter().enumerate() {
                    let logit_with = |delta: f64| {
                        let mut t = m.encode(&ids).unwrap();
                        t.x[pos * 4 + j] += delta;
                        m.logits_from_inputs(&t.x, &ids)[class]
                    };
                    let numeric = (logit_with(h) - logit_with(-h)) / (2.0 * h);
                    assert!(rel_err(analytic, numeric) < 1e-3, "{case} {pos} {j}: {analytic} vs {numeric}");
                }
            }
        }
    }
}

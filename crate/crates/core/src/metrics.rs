//! Evaluation metrics: classification reports, sentence BLEU, Cohen's kappa,
//! greedy cosine embedding similarity and cause-extraction accuracy.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::neuralnet::{ModelError, ModelParams};
use crate::text::PAD_ID;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("kappa undefined: chance agreement is 1 but observed agreement is {0}")]
    DegenerateKappa(f64),
    #[error("{side} token {index} has a zero-norm vector")]
    ZeroNorm { side: &'static str, index: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(c: &ConfusionCounts) -> Prf {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        Prf { precision, recall, f1: harmonic(precision, recall) }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub prf: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Prf,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Prf>,
    pub total: usize,
}

impl MetricReport {
    pub fn class(&self, class: usize) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.class == class)
    }
}

/// Per-class and macro precision/recall/F1 plus accuracy. Per-class rows
/// cover every class seen in either sequence; the macro average runs over the
/// classes present in the gold labels only.
pub fn classification_report(
    labels: &[usize],
    predictions: &[usize],
    target_class: Option<usize>,
) -> Result<MetricReport, MetricError> {
    if labels.len() != predictions.len() {
        return Err(MetricError::LengthMismatch(labels.len(), predictions.len()));
    }
    if labels.is_empty() {
        return Err(MetricError::Empty);
    }
    let gold: BTreeSet<usize> = labels.iter().copied().collect();
    let mut classes = gold.clone();
    classes.extend(predictions.iter().copied());
    classes.extend(target_class);

    let total = labels.len();
    let per_class: Vec<ClassMetrics> = classes
        .iter()
        .map(|&class| {
            let mut c = ConfusionCounts::default();
            for (&y, &p) in labels.iter().zip(predictions) {
                match (y == class, p == class) {
                    (true, true) => c.tp += 1,
                    (false, true) => c.fp += 1,
                    (true, false) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
            ClassMetrics { class, support: c.tp + c.fn_, counts: c, prf: Prf::from_counts(&c) }
        })
        .collect();

    let macro_rows: Vec<&ClassMetrics> = per_class.iter().filter(|c| gold.contains(&c.class)).collect();
    let k = macro_rows.len() as f64;
    let macro_avg = Prf {
        precision: macro_rows.iter().map(|c| c.prf.precision).sum::<f64>() / k,
        recall: macro_rows.iter().map(|c| c.prf.recall).sum::<f64>() / k,
        f1: macro_rows.iter().map(|c| c.prf.f1).sum::<f64>() / k,
    };
    let correct = labels.iter().zip(predictions).filter(|(y, p)| y == p).count();
    let target = target_class.and_then(|t| per_class.iter().find(|c| c.class == t)).map(|c| c.prf);
    Ok(MetricReport { per_class, macro_avg, accuracy: ratio(correct, total), target_class, target, total })
}

/// Clipped n-gram matches and candidate n-gram count for order `n`.
pub fn modified_precision<T: Ord>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize) {
    if n == 0 || candidate.len() < n {
        return (0, 0);
    }
    let mut ref_counts: BTreeMap<&[T], usize> = BTreeMap::new();
    if reference.len() >= n {
        for g in reference.windows(n) {
            *ref_counts.entry(g).or_default() += 1;
        }
    }
    let mut cand_counts: BTreeMap<&[T], usize> = BTreeMap::new();
    for g in candidate.windows(n) {
        *cand_counts.entry(g).or_default() += 1;
    }
    let matches = cand_counts.iter().map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0))).sum();
    (matches, candidate.len() + 1 - n)
}

/// Additive smoothing applied to zero n-gram precisions.
pub const BLEU_EPSILON: f64 = 1e-9;

/// Sentence-level BLEU. Orders longer than the candidate are left out of
/// the geometric mean, so any non-empty sentence scores 1 against itself.
pub fn bleu<T: Ord>(candidate: &[T], reference: &[T], max_n: usize, epsilon: f64) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::Empty);
    }
    let c = candidate.len();
    if c == 0 {
        return Ok(0.0);
    }
    let orders = max_n.max(1).min(c);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let (matches, total) = modified_precision(candidate, reference, n);
        let p = if matches == 0 { epsilon } else { matches as f64 / total as f64 };
        log_sum += libm::log(p);
    }
    let r = reference.len();
    let bp = if c < r { libm::exp(1.0 - r as f64 / c as f64) } else { 1.0 };
    Ok((bp * libm::exp(log_sum / orders as f64)).clamp(0.0, 1.0))
}

/// Cohen's kappa between two raters over the same items.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut margins: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    for x in a {
        margins.entry(x).or_default().0 += 1;
    }
    for y in b {
        margins.entry(y).or_default().1 += 1;
    }
    let chance: f64 = margins.values().map(|&(ca, cb)| (ca as f64 / n) * (cb as f64 / n)).sum();
    if (1.0 - chance).abs() < 1e-15 {
        return if observed == 1.0 { Ok(1.0) } else { Err(MetricError::DegenerateKappa(observed)) };
    }
    Ok((observed - chance) / (1.0 - chance))
}

/// Embedding-similarity score: greedy cosine matching between token vectors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EmbedScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision is the mean over candidate vectors of the best cosine against
/// any reference vector; recall is the mirror image. F1 is 0 unless both are
/// positive.
pub fn greedy_cosine<V: AsRef<[f64]>>(candidate: &[V], reference: &[V]) -> Result<EmbedScore, MetricError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricError::Empty);
    }
    let unit = |side: &'static str, vs: &[V]| -> Result<Vec<Vec<f64>>, MetricError> {
        vs.iter()
            .enumerate()
            .map(|(index, v)| {
                let v = v.as_ref();
                let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
                if norm == 0.0 || !norm.is_finite() {
                    Err(MetricError::ZeroNorm { side, index })
                } else {
                    Ok(v.iter().map(|x| x / norm).collect())
                }
            })
            .collect()
    };
    let cand = unit("candidate", candidate)?;
    let refs = unit("reference", reference)?;
    let sim: Vec<Vec<f64>> =
        cand.iter().map(|c| refs.iter().map(|r| c.iter().zip(r).map(|(x, y)| x * y).sum()).collect()).collect();
    let precision = sim.iter().map(|row| row.iter().copied().fold(f64::MIN, f64::max)).sum::<f64>() / cand.len() as f64;
    let recall =
        (0..refs.len()).map(|j| sim.iter().map(|row| row[j]).fold(f64::MIN, f64::max)).sum::<f64>() / refs.len() as f64;
    let f1 = if precision <= 0.0 || recall <= 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(EmbedScore { precision, recall, f1 })
}

/// [`greedy_cosine`] over the encoder's contextual token vectors. PAD
/// positions are skipped.
pub fn embed_score(params: &ModelParams, candidate: &[u32], reference: &[u32]) -> Result<EmbedScore, MetricError> {
    let states = |ids: &[u32]| -> Result<Vec<Vec<f64>>, MetricError> {
        if ids.is_empty() {
            return Err(MetricError::Empty);
        }
        let all = params.token_states(ids)?;
        Ok(all.into_iter().zip(ids).filter(|(_, &id)| id != PAD_ID).map(|(v, _)| v).collect())
    };
    greedy_cosine(&states(candidate)?, &states(reference)?)
}

/// Fraction of matched examples; `None` for an empty slice.
pub fn cause_accuracy(matches: &[bool]) -> Option<f64> {
    if matches.is_empty() {
        None
    } else {
        Some(matches.iter().filter(|&&m| m).count() as f64 / matches.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn perfect_predictor() {
        let y = [0, 1, 2, 1, 0];
        let r = classification_report(&y, &y, Some(1)).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_avg, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(r.target.unwrap().f1, 1.0);
    }

    #[test]
    fn hand_confusion_matrix() {
        // class 1: tp=1 fp=0 fn=1 -> P=1, R=1/2, F1=2/3
        // class 0: tp=2 fp=1 fn=0 -> P=2/3, R=1, F1=4/5
        let r = classification_report(&[1, 1, 0, 0], &[1, 0, 0, 0], Some(1)).unwrap();
        assert!((r.class(1).unwrap().prf.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.class(0).unwrap().prf.f1 - 0.8).abs() < 1e-12);
        assert!((r.macro_avg.f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert!((r.macro_avg.f1 - 0.733_333_333_333_333_3).abs() < 1e-9);
        assert_eq!(r.accuracy, 0.75);
    }

    #[test]
    fn target_never_predicted() {
        let r = classification_report(&[1, 0, 0], &[0, 0, 0], Some(1)).unwrap();
        let t = r.target.unwrap();
        assert_eq!((t.precision, t.recall, t.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn report_errors() {
        assert_eq!(classification_report(&[1], &[1, 0], None), Err(MetricError::LengthMismatch(1, 2)));
        assert_eq!(classification_report(&[], &[], None), Err(MetricError::Empty));
    }

    #[test]
    fn phantom_predicted_class_not_in_macro() {
        let r = classification_report(&[0, 0, 1, 1], &[0, 2, 1, 1], None).unwrap();
        assert!(r.class(2).is_some());
        let expected = (r.class(0).unwrap().prf.f1 + r.class(1).unwrap().prf.f1) / 2.0;
        assert!((r.macro_avg.f1 - expected).abs() < 1e-12);
    }

    #[test]
    fn bleu_identity_and_worked_example() {
        let refr: Vec<&str> = "the cat is on the mat".split(' ').collect();
        assert!((bleu(&refr, &refr, 4, BLEU_EPSILON).unwrap() - 1.0).abs() < 1e-12);
        let cand: Vec<&str> = "the the the the the the the".split(' ').collect();
        assert_eq!(modified_precision(&cand, &refr, 1), (2, 7));
        let short = ["x"];
        assert!((bleu(&short, &short, 4, BLEU_EPSILON).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_no_overlap_is_floored() {
        let s = bleu(&["a", "b"], &["c", "d"], 4, BLEU_EPSILON).unwrap();
        assert!(s <= BLEU_EPSILON * (1.0 + 1e-9));
        assert_eq!(bleu::<&str>(&["a"], &[], 4, BLEU_EPSILON), Err(MetricError::Empty));
    }

    #[test]
    fn bleu_brevity_penalty() {
        // Candidate is a perfect prefix of half the reference length.
        let r = ["a", "b", "c", "d"];
        let s = bleu(&r[..2], &r, 2, BLEU_EPSILON).unwrap();
        assert!((s - libm::exp(1.0 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn kappa_hand_case() {
        // p_o = 3/4; marginals A: (2,2), B: (1,3) -> p_e = 2/4*1/4 + 2/4*3/4 = 1/2
        let k = cohen_kappa(&["A", "A", "B", "B"], &["A", "B", "B", "B"]).unwrap();
        assert!((k - 0.5).abs() < 1e-9);
        let k2 = cohen_kappa(&["A", "B", "B", "B"], &["A", "A", "B", "B"]).unwrap();
        assert_eq!(k, k2);
    }

    #[test]
    fn kappa_perfect_and_degenerate() {
        assert_eq!(cohen_kappa(&[1, 2, 1], &[1, 2, 1]).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&[1, 1], &[1, 1]).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&[1, 2], &[1]), Err(MetricError::LengthMismatch(2, 1)));
        assert_eq!(cohen_kappa::<u8>(&[], &[]), Err(MetricError::Empty));
    }

    #[test]
    fn cosine_identity_orthogonal_and_scale() {
        let a = vec![vec![1.0, 2.0, 0.5], vec![-0.3, 0.1, 2.0]];
        let s = greedy_cosine(&a, &a).unwrap();
        assert!((s.f1 - 1.0).abs() < 1e-9);
        let x = vec![vec![1.0, 0.0]];
        let y = vec![vec![0.0, 3.0]];
        assert_eq!(greedy_cosine(&x, &y).unwrap().f1, 0.0);
        let b = vec![vec![0.2, -1.0, 0.4], vec![1.0, 1.0, 1.0]];
        let scaled: Vec<Vec<f64>> = b.iter().map(|v| v.iter().map(|x| x * 7.5).collect()).collect();
        let s1 = greedy_cosine(&a, &b).unwrap();
        let s2 = greedy_cosine(&a, &scaled).unwrap();
        assert!((s1.f1 - s2.f1).abs() < 1e-12);
        // Duality.
        let ba = greedy_cosine(&b, &a).unwrap();
        assert!((s1.precision - ba.recall).abs() < 1e-12);
        assert_eq!(
            greedy_cosine(&a, &[vec![0.0, 0.0, 0.0]]),
            Err(MetricError::ZeroNorm { side: "reference", index: 0 })
        );
    }

    #[test]
    fn cause_accuracy_counts() {
        assert_eq!(cause_accuracy(&[true, true]), Some(1.0));
        assert_eq!(cause_accuracy(&[true, false, true, false]), Some(0.5));
        assert_eq!(cause_accuracy(&[false, true, false, true]), Some(0.5));
        assert_eq!(cause_accuracy(&[]), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};

        proptest! {
            #[test]
            fn macro_invariant_under_relabeling(
                pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60),
                perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
            ) {
                let (y, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
                let y2: Vec<usize> = y.iter().map(|&c| perm[c]).collect();
                let p2: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
                let a = classification_report(&y, &p, None).unwrap();
                let b = classification_report(&y2, &p2, None).unwrap();
                prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
                prop_assert!((a.macro_avg.precision - b.macro_avg.precision).abs() < 1e-12);
                prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
                for c in &a.per_class {
                    prop_assert!((c.prf.f1 - harmonic(c.prf.precision, c.prf.recall)).abs() < 1e-12);
                }
            }

            #[test]
            fn bleu_bounded(c in proptest::collection::vec(0u8..5, 0..12), r in proptest::collection::vec(0u8..5, 1..12)) {
                let s = bleu(&c, &r, 4, BLEU_EPSILON).unwrap();
                prop_assert!((0.0..=1.0).contains(&s));
                if !c.is_empty() {
                    prop_assert!((bleu(&c, &c, 4, BLEU_EPSILON).unwrap() - 1.0).abs() < 1e-12);
                }
            }

            #[test]
            fn kappa_symmetric_and_bounded(pairs in proptest::collection::vec((0u8..3, 0u8..3), 1..40)) {
                let (a, b): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
                if let (Ok(k1), Ok(k2)) = (cohen_kappa(&a, &b), cohen_kappa(&b, &a)) {
                    prop_assert!((k1 - k2).abs() < 1e-12);
                    prop_assert!((-1.0..=1.0 + 1e-12).contains(&k1));
                }
            }
        }

        #[test]
        fn independent_raters_average_zero() {
            let mut total = 0.0;
            let seeds = 20;
            for seed in 0..seeds {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let a: Vec<u8> = (0..10_000).map(|_| rng.gen_range(0..3)).collect();
                let b: Vec<u8> = (0..10_000).map(|_| rng.gen_range(0..3)).collect();
                total += cohen_kappa(&a, &b).unwrap();
            }
            assert!((total / seeds as f64).abs() < 0.05);
        }
    }

    #[test]
    fn embed_score_self_and_duality() {
        use crate::neuralnet::{EncoderKind, ModelConfig};
        let m = ModelParams::init(&ModelConfig {
            vocab_size: 10,
            embed_dim: 4,
            encoder: EncoderKind::SingleHeadAttention,
            hidden_dim: 0,
            num_classes: 2,
            max_len: 8,
            seed: 2,
        })
        .unwrap();
        let a = [4u32, 5, 6];
        let b = [7u32, 0, 8];
        let s = embed_score(&m, &a, &a).unwrap();
        assert!((s.f1 - 1.0).abs() < 1e-9);
        let (ab, ba) = (embed_score(&m, &a, &b).unwrap(), embed_score(&m, &b, &a).unwrap());
        assert!((ab.precision - ba.recall).abs() < 1e-15);
        assert_eq!(embed_score(&m, &[], &a), Err(MetricError::Empty));
    }
}

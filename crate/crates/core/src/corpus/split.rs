use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, LabeledExample};

/// Train/dev/test proportions plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, dev: f64, test: f64, seed: u64) -> Self {
        SplitSpec { ratios: [train, dev, test], seed }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let ok = self.ratios.iter().all(|r| r.is_finite() && (0.0..=1.0).contains(r))
            && (self.ratios.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(CorpusError::BadRatios(self.ratios))
        }
    }

    /// Largest-remainder apportionment of `n` items.
    fn targets(&self, n: usize) -> [usize; 3] {
        let exact: Vec<f64> = self.ratios.iter().map(|r| r * n as f64).collect();
        let mut out = [0usize; 3];
        for i in 0..3 {
            // Guard against 0.1 * 10 = 1.0000000000000002 style noise.
            out[i] = libm::floor(exact[i] + 1e-9) as usize;
        }
        let mut rest = n.saturating_sub(out.iter().sum());
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = exact[a] - out[a] as f64;
            let fb = exact[b] - out[b] as f64;
            fb.partial_cmp(&fa).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if rest == 0 {
                break;
            }
            if self.ratios[i] > 0.0 {
                out[i] += 1;
                rest -= 1;
            }
        }
        out
    }
}

/// Train, dev and test examples.
pub type ExampleSplits = (Vec<LabeledExample>, Vec<LabeledExample>, Vec<LabeledExample>);

/// Splits examples into (train, dev, test), keeping every dialogue inside a
/// single split.
pub fn split_dataset(examples: Vec<LabeledExample>, spec: &SplitSpec) -> Result<ExampleSplits, CorpusError> {
    let [train, dev, test] = split_grouped(examples, |e| e.dialogue_id.as_str(), spec)?;
    Ok((train, dev, test))
}

/// Grouped split: groups are visited in seeded random order and each goes to
/// the split with the largest remaining deficit. Single-item groups therefore
/// hit the apportioned sizes exactly; larger groups are off by less than the
/// group size. Items keep their input order within each split.
pub fn split_grouped<T, F>(items: Vec<T>, key: F, spec: &SplitSpec) -> Result<[Vec<T>; 3], CorpusError>
where
    F: Fn(&T) -> &str,
{
    spec.validate()?;
    if items.is_empty() {
        return Err(CorpusError::EmptyExamples);
    }
    let mut groups: BTreeMap<&str, usize> = BTreeMap::new();
    for item in &items {
        *groups.entry(key(item)).or_default() += 1;
    }
    let mut order: Vec<(&str, usize)> = groups.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    let targets = spec.targets(items.len());
    let mut filled = [0usize; 3];
    let mut assignment: BTreeMap<&str, usize> = BTreeMap::new();
    for (group, size) in order {
        let split = (0..3)
            .filter(|&i| spec.ratios[i] > 0.0)
            .max_by(|&a, &b| {
                let da = targets[a] as i64 - filled[a] as i64;
                let db = targets[b] as i64 - filled[b] as i64;
                da.cmp(&db).then(b.cmp(&a))
            })
            .expect("at least one positive ratio");
        filled[split] += size;
        assignment.insert(group, split);
    }
    let assigned: Vec<usize> = items.iter().map(|item| assignment[key(item)]).collect();
    let mut out: [Vec<T>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (item, split) in items.into_iter().zip(assigned) {
        out[split].push(item);
    }
    Ok(out)
}

//! Negative sampling: the other targets of a mini-batch plus `N_A` shared
//! extra samples drawn proportionally to `support^alpha` from a pre-filled
//! cache.

use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use serde::{Deserialize, Serialize};

use crate::data::SessionCorpus;
use crate::error::{Error, Result};

pub const DEFAULT_CACHE_CAPACITY: usize = 10_000_000;

/// Item distribution with `P(i) ∝ supp_i^alpha`. Items with zero support are
/// never drawn.
#[derive(Clone, Debug)]
pub struct SampleDistribution {
    alpha: f64,
    weights: Vec<f64>,
    table: WeightedAliasIndex<f64>,
}

impl SampleDistribution {
    pub fn new(corpus: &SessionCorpus, alpha: f64) -> Result<Self> {
        SampleDistribution::from_supports(corpus.supports(), alpha)
    }

    pub fn from_supports(supports: &[u64], alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha = {alpha} outside [0, 1]")));
        }
        let weights: Vec<f64> = supports
            .iter()
            .map(|&s| if s == 0 { 0.0 } else { (s as f64).powf(alpha) })
            .collect();
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::EmptyCorpus);
        }
        let table = WeightedAliasIndex::new(weights.clone())
            .map_err(|e| Error::Config(format!("cannot build alias table: {e}")))?;
        Ok(SampleDistribution {
            alpha,
            weights,
            table,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_items(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Normalized draw probabilities.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.table.sample(rng)
    }
}

/// Buffer of pre-drawn item indices, refilled only when fully consumed.
#[derive(Clone, Debug)]
pub struct SampleCache {
    buffer: Vec<usize>,
    cursor: usize,
    capacity: usize,
    rng: ChaCha8Rng,
    refills: usize,
}

impl SampleCache {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "cache capacity must be positive");
        SampleCache {
            buffer: Vec::new(),
            cursor: 0,
            capacity,
            rng: ChaCha8Rng::seed_from_u64(seed),
            refills: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of refills so far.
    pub fn refills(&self) -> usize {
        self.refills
    }

    pub fn remaining(&self) -> usize {
        self.buffer.len() - self.cursor
    }

    fn refill(&mut self, dist: &SampleDistribution) {
        self.buffer.clear();
        let rng = &mut self.rng;
        self.buffer
            .extend((0..self.capacity).map(|_| dist.table.sample(rng)));
        self.cursor = 0;
        self.refills += 1;
    }

    /// Takes `n` i.i.d. draws, consuming the cache and refilling whenever it
    /// runs empty.
    pub fn draw(&mut self, dist: &SampleDistribution, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.remaining() == 0 {
                self.refill(dist);
            }
            let take = (n - out.len()).min(self.remaining());
            out.extend_from_slice(&self.buffer[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}

/// What to do with a negative that is the example's own target item.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionPolicy {
    /// The collision stays in the slate and scores a tie.
    #[default]
    Keep,
    /// The colliding column is removed from that example's negatives.
    Filter,
}

/// Column layout of one batch: every example scores the same columns (the
/// batch targets followed by the shared extra samples); example `k`'s target
/// is column `k` and its negatives are the listed other columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlateLayout {
    pub items: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
}

impl SlateLayout {
    pub fn new(targets: &[usize], additional: &[usize], policy: CollisionPolicy) -> Self {
        let b = targets.len();
        let mut items = Vec::with_capacity(b + additional.len());
        items.extend_from_slice(targets);
        items.extend_from_slice(additional);
        let negatives = (0..b)
            .map(|k| {
                (0..items.len())
                    .filter(|&c| c != k)
                    .filter(|&c| policy == CollisionPolicy::Keep || items[c] != targets[k])
                    .collect()
            })
            .collect();
        SlateLayout { items, negatives }
    }

    pub fn n_columns(&self) -> usize {
        self.items.len()
    }
}

/// Negative item lists per example: the other batch targets, then the shared
/// extra samples.
pub fn assemble_slate_negatives(targets: &[usize], additional: &[usize], policy: CollisionPolicy) -> Vec<Vec<usize>> {
    let layout = SlateLayout::new(targets, additional, policy);
    layout
        .negatives
        .iter()
        .map(|cols| cols.iter().map(|&c| layout.items[c]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(supports: &[u64], alpha: f64) -> SampleDistribution {
        SampleDistribution::from_supports(supports, alpha).unwrap()
    }

    #[test]
    fn probabilities_follow_support_power() {
        let p = dist(&[1, 3], 1.0).probabilities();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        let p = dist(&[1, 3], 0.0).probabilities();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = dist(&[1, 4], 0.5).probabilities();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15 && (p[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_alpha_and_empty_support() {
        assert!(matches!(SampleDistribution::from_supports(&[1, 2], 1.5), Err(Error::Config(_))));
        assert!(matches!(SampleDistribution::from_supports(&[0, 0], 0.5), Err(Error::EmptyCorpus)));
        let p = dist(&[0, 5], 0.0).probabilities();
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn zero_draws_is_empty() {
        let mut cache = SampleCache::new(16, 1);
        assert!(cache.draw(&dist(&[1, 2], 1.0), 0).is_empty());
        assert_eq!(cache.refills(), 0);
    }

    #[test]
    fn cache_refills_only_when_empty() {
        let d = dist(&[1, 2, 3], 1.0);
        let mut cache = SampleCache::new(8, 7);
        cache.draw(&d, 5);
        assert_eq!(cache.refills(), 1);
        cache.draw(&d, 5);
        assert_eq!(cache.refills(), 2);
        assert_eq!(cache.remaining(), 6);
        let big = cache.draw(&d, 30);
        assert_eq!(big.len(), 30);
        assert!(big.iter().all(|&i| i < 3));
    }

    #[test]
    fn empirical_frequencies_converge() {
        let d = dist(&[1, 3], 1.0);
        let mut cache = SampleCache::new(100_000, 3);
        let draws = cache.draw(&d, 1_000_000);
        let ones = draws.iter().filter(|&&i| i == 1).count() as f64 / 1e6;
        assert!((ones - 0.75).abs() < 0.005);
    }

    #[test]
    fn slate_negatives() {
        let n = assemble_slate_negatives(&[10, 20], &[30], CollisionPolicy::Keep);
        assert_eq!(n, vec![vec![20, 30], vec![10, 30]]);
        let targets: Vec<usize> = (0..32).collect();
        let n = assemble_slate_negatives(&targets, &[], CollisionPolicy::Keep);
        assert!(n.iter().all(|v| v.len() == 31));
        // repeated target: kept as a tie, or dropped under the filter policy
        let n = assemble_slate_negatives(&[5, 5], &[], CollisionPolicy::Keep);
        assert_eq!(n, vec![vec![5], vec![5]]);
        let n = assemble_slate_negatives(&[5, 6], &[5, 7], CollisionPolicy::Filter);
        assert_eq!(n, vec![vec![6, 7], vec![5, 5, 7]]);
    }

    #[test]
    fn shared_samples_identical_across_examples() {
        let layout = SlateLayout::new(&[1, 2, 3, 4], &[9, 8, 9], CollisionPolicy::Keep);
        for cols in &layout.negatives {
            let tail: Vec<usize> = cols.iter().rev().take(3).rev().map(|&c| layout.items[c]).collect();
            assert_eq!(tail, vec![9, 8, 9]);
        }
    }
}

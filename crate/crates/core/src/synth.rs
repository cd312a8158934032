//! Synthetic corpora for smoke tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::data::SessionCorpus;
use crate::error::{Error, Result};

/// `n_sessions` sessions over `n_items` items; session `k` is the walk
/// `s, s+1, ..., s+len-1 (mod n_items)` with `s = k mod n_items`.
pub fn cyclic_corpus(n_items: usize, n_sessions: usize, len: usize) -> Result<SessionCorpus> {
    let sessions = (0..n_sessions)
        .map(|k| (0..len).map(|t| (k + t) % n_items).collect())
        .collect();
    SessionCorpus::from_sessions(n_items, sessions)
}

/// Parameters of [`zipf_markov_corpus`].
#[derive(Clone, Debug, PartialEq)]
pub struct ZipfMarkov {
    pub n_items: usize,
    pub n_events: usize,
    /// Zipf exponent of item popularity.
    pub exponent: f64,
    /// Successor candidates per item, drawn by popularity.
    pub branching: usize,
    /// The `j`-th successor is taken with probability proportional to
    /// `(j + 1)^-transition_exponent`.
    pub transition_exponent: f64,
    /// Probability that the next item ignores the chain and is drawn by
    /// popularity.
    pub jump_prob: f64,
    /// Probability of continuing the session after each event.
    pub continue_prob: f64,
    pub seed: u64,
}

impl Default for ZipfMarkov {
    fn default() -> Self {
        ZipfMarkov {
            n_items: 10_000,
            n_events: 200_000,
            exponent: 0.8,
            branching: 30,
            transition_exponent: 1.0,
            jump_prob: 0.2,
            continue_prob: 0.8,
            seed: 7,
        }
    }
}

/// Sessions generated by a sparse Markov chain. Each item has `branching`
/// successors sampled with Zipf weights; the next item is the `j`-th
/// successor with probability proportional to `(j + 1)^-transition_exponent`,
/// or, with probability `jump_prob`, a fresh Zipf draw. Session starts are
/// Zipf distributed too, so supports are heavily skewed.
/// Returns sessions in generation order with unit-spaced session start
/// times, which [`SessionCorpus::time_split`] can cut.
pub fn zipf_markov_corpus(p: &ZipfMarkov) -> Result<SessionCorpus> {
    if p.n_items <= p.branching || p.branching == 0 || !(0.0..1.0).contains(&p.continue_prob) || !(0.0..=1.0).contains(&p.jump_prob) {
        return Err(Error::Config("invalid synthetic corpus parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let zipf: Vec<f64> = (0..p.n_items).map(|r| 1.0 / ((r + 1) as f64).powf(p.exponent)).collect();
    let popularity = WeightedAliasIndex::new(zipf).map_err(|e| Error::Config(e.to_string()))?;
    let successors: Vec<Vec<usize>> = (0..p.n_items)
        .map(|i| {
            let mut next = Vec::with_capacity(p.branching);
            while next.len() < p.branching {
                let j = popularity.sample(&mut rng);
                if j != i && !next.contains(&j) {
                    next.push(j);
                }
            }
            next
        })
        .collect();
    let step = WeightedAliasIndex::new((0..p.branching).map(|j| ((j + 1) as f64).powf(-p.transition_exponent)).collect())
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut sessions = Vec::new();
    let mut events = 0;
    while events < p.n_events {
        let mut item = popularity.sample(&mut rng);
        let mut s = vec![item];
        loop {
            let next = if rng.random_bool(p.jump_prob) {
                popularity.sample(&mut rng)
            } else {
                successors[item][step.sample(&mut rng)]
            };
            if next == item {
                continue;
            }
            item = next;
            s.push(item);
            if !rng.random_bool(p.continue_prob) {
                break;
            }
        }
        events += s.len();
        sessions.push(s);
    }
    // from_sessions times session k from k, so start times are 0, 1, 2, ...
    SessionCorpus::from_sessions(p.n_items, sessions)
}

/// [`zipf_markov_corpus`] cut into train and test, with the last
/// `test_fraction` of sessions as test.
pub fn zipf_markov_split(p: &ZipfMarkov, test_fraction: f64) -> Result<(SessionCorpus, SessionCorpus)> {
    let all = zipf_markov_corpus(p)?;
    let boundary = ((1.0 - test_fraction) * all.sessions().len() as f64).floor();
    all.time_split(boundary)
}

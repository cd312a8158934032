//! Next-item evaluation (Recall@k, MRR@k) and the target-gradient versus
//! target-rank diagnostic.

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MiniBatchState, SessionCorpus};
use crate::error::{Error, Result};
use crate::losses::{LossName, LossSpec, ScoreSlate};
use crate::model::GruParams;
use crate::num::Real;
use crate::sampler::{CollisionPolicy, SampleCache, SampleDistribution, SlateLayout};

/// Rank buckets of the report histogram, inclusive bounds.
pub const RANK_BUCKETS: [(usize, usize); 7] = [
    (1, 1),
    (2, 5),
    (6, 10),
    (11, 20),
    (21, 50),
    (51, 100),
    (101, usize::MAX),
];

const EVAL_BATCH: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub low: usize,
    pub high: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub recall: f64,
    pub mrr: f64,
    pub n_cases: usize,
    /// Cases where the scorer produced no rank at all (item-kNN misses).
    pub n_unranked: usize,
    pub rank_histogram: Vec<HistogramBucket>,
}

impl EvalReport {
    /// Aggregates per-event ranks (1-based; `None` = not ranked). The result
    /// does not depend on the order of the ranks.
    pub fn from_ranks<I>(k: usize, ranks: I) -> Result<Self>
    where
        I: IntoIterator<Item = Option<usize>>,
    {
        let mut hits = Vec::new();
        let mut n = 0usize;
        let mut unranked = 0usize;
        let mut hist: Vec<HistogramBucket> = RANK_BUCKETS
            .iter()
            .map(|&(low, high)| HistogramBucket { low, high, count: 0 })
            .collect();
        for rank in ranks {
            n += 1;
            let Some(rank) = rank else {
                unranked += 1;
                continue;
            };
            debug_assert!(rank >= 1);
            if rank <= k {
                hits.push(rank);
            }
            if let Some(b) = hist.iter_mut().find(|b| rank >= b.low && rank <= b.high) {
                b.count += 1;
            }
        }
        if n == 0 {
            return Err(Error::EmptyTestSet);
        }
        hits.sort_unstable();
        let rr: f64 = hits.iter().map(|&r| 1.0 / r as f64).sum();
        Ok(EvalReport {
            k,
            recall: hits.len() as f64 / n as f64,
            mrr: rr / n as f64,
            n_cases: n,
            n_unranked: unranked,
            rank_histogram: hist,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "Recall@{k}: {:.4}\nMRR@{k}: {:.4}\nevaluated events: {}\n",
            self.recall,
            self.mrr,
            self.n_cases,
            k = self.k
        );
        if self.n_unranked > 0 {
            let _ = writeln!(s, "unranked events: {}", self.n_unranked);
        }
        s
    }

    /// Header plus one row: `k, recall, mrr, n_cases`.
    pub fn to_tsv(&self) -> String {
        format!(
            "k\trecall\tmrr\tn_cases\n{}\t{:.6}\t{:.6}\t{}\n",
            self.k, self.recall, self.mrr, self.n_cases
        )
    }

    pub fn histogram_tsv(&self) -> String {
        let mut s = String::from("rank_low\trank_high\tcount\n");
        for b in &self.rank_histogram {
            let high = if b.high == usize::MAX {
                "inf".to_string()
            } else {
                b.high.to_string()
            };
            let _ = writeln!(s, "{}\t{}\t{}", b.low, high, b.count);
        }
        if self.n_unranked > 0 {
            let _ = writeln!(s, "unranked\tunranked\t{}", self.n_unranked);
        }
        s
    }
}

/// `1 +` the number of candidates scoring strictly above the target. With no
/// restriction every item is a candidate.
pub fn rank_of<F: Real>(scores: &[F], target: usize, candidates: Option<&[usize]>) -> usize {
    let t = scores[target];
    1 + match candidates {
        None => scores.iter().filter(|&&s| s > t).count(),
        Some(c) => c.iter().filter(|&&i| i != target && scores[i] > t).count(),
    }
}

/// Rank of the next item for every event after the first of each test
/// session, in session-parallel batch order.
pub fn target_ranks<F: Real>(params: &GruParams<F>, test: &SessionCorpus, restrict: Option<&[usize]>) -> Result<Vec<usize>> {
    if test.n_items() != params.n_items() {
        return Err(Error::Dimension(format!(
            "model scores {} items, test corpus is indexed over {}",
            params.n_items(),
            test.n_items()
        )));
    }
    if let Some(&bad) = restrict.and_then(|r| r.iter().find(|&&i| i >= params.n_items())) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            n_items: params.n_items(),
        });
    }
    let mut hidden = Array2::<F>::zeros((EVAL_BATCH, params.hidden()));
    let mut state = MiniBatchState::new(EVAL_BATCH);
    let mut ranks = Vec::with_capacity(test.n_pairs());
    while let Some(batch) = state.next_batch(test) {
        let h_prev = hidden.select(Axis(0), &batch.slots);
        let rec = params.forward_step(&batch.inputs, h_prev.view(), &batch.reset, &[], None)?;
        for (k, &slot) in batch.slots.iter().enumerate() {
            hidden.row_mut(slot).assign(&rec.h_new.row(k));
        }
        let scores = params.score_all(rec.h_new.view());
        for (k, &t) in batch.targets.iter().enumerate() {
            let row = scores.row(k);
            ranks.push(rank_of(row.as_slice().unwrap(), t, restrict));
        }
    }
    Ok(ranks)
}

/// Recall@k and MRR@k over the next-item protocol. `restrict` limits the
/// competing items (the target is always scored).
pub fn evaluate<F: Real>(params: &GruParams<F>, test: &SessionCorpus, k: usize, restrict: Option<&[usize]>) -> Result<EvalReport> {
    let ranks = target_ranks(params, test, restrict)?;
    EvalReport::from_ranks(k, ranks.into_iter().map(Some))
}

/// One report per cutoff from a single pass.
pub fn evaluate_cutoffs<F: Real>(
    params: &GruParams<F>,
    test: &SessionCorpus,
    cutoffs: &[usize],
    restrict: Option<&[usize]>,
) -> Result<Vec<EvalReport>> {
    let ranks = target_ranks(params, test, restrict)?;
    cutoffs
        .iter()
        .map(|&k| EvalReport::from_ranks(k, ranks.iter().copied().map(Some)))
        .collect()
}

/// The `n` items with the highest support, ties broken by lower index.
pub fn popularity_set(train: &SessionCorpus, n: usize) -> Vec<usize> {
    popular_items(train.supports(), n)
}

pub fn popular_items(supports: &[u64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..supports.len()).collect();
    idx.sort_by(|&a, &b| supports[b].cmp(&supports[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradRankConfig {
    pub loss: LossSpec,
    pub batch_size: usize,
    pub n_additional: usize,
    pub alpha: f64,
    pub collision: CollisionPolicy,
    pub cache_capacity: usize,
    pub seed: u64,
    /// Number of events to sample.
    pub max_events: usize,
    /// Half-open rank intervals `[low, high)`.
    pub buckets: Vec<(usize, usize)>,
}

impl Default for GradRankConfig {
    fn default() -> Self {
        GradRankConfig {
            loss: LossSpec {
                lambda: 0.0,
                ..LossSpec::named(LossName::Bpr)
            },
            batch_size: 32,
            n_additional: 0,
            alpha: 0.5,
            collision: CollisionPolicy::Keep,
            cache_capacity: 1_000_000,
            seed: 42,
            max_events: 10_000,
            buckets: uniform_buckets(1, 32),
        }
    }
}

/// `[0, w), [w, 2w), ...` up to `max_rank` (exclusive).
pub fn uniform_buckets(width: usize, max_rank: usize) -> Vec<(usize, usize)> {
    let width = width.max(1);
    (0..max_rank.div_ceil(width))
        .map(|i| (i * width, ((i + 1) * width).min(max_rank)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradRankRow {
    pub low: usize,
    pub high: usize,
    /// Median of `-dL/dr_target`; NaN for empty buckets.
    pub median_neg_grad: f64,
    pub count: usize,
}

/// One sampled training example: how many negatives outscored the target
/// and the loss gradient with respect to the target score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradObservation {
    pub rank: usize,
    pub neg_grad: f64,
}

/// Replays the training slate construction (mini-batch negatives plus shared
/// extra samples) without updating the model and records, for a sample of
/// events, the target's rank among its negatives and `-dL/dr_target`.
pub fn gradient_observations<F: Real>(params: &GruParams<F>, corpus: &SessionCorpus, cfg: &GradRankConfig) -> Result<Vec<GradObservation>> {
    if corpus.n_items() != params.n_items() {
        return Err(Error::Dimension(format!(
            "model scores {} items, corpus is indexed over {}",
            params.n_items(),
            corpus.n_items()
        )));
    }
    if cfg.batch_size == 0 || (cfg.batch_size < 2 && cfg.n_additional == 0) {
        return Err(Error::Config("no negatives available".into()));
    }
    let dist = if cfg.n_additional > 0 {
        Some(SampleDistribution::new(corpus, cfg.alpha)?)
    } else {
        None
    };
    let mut cache = SampleCache::new(cfg.cache_capacity.max(cfg.n_additional).max(1), cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(17));
    let rate = (cfg.max_events as f64 / corpus.n_pairs().max(1) as f64).min(1.0);
    let mut hidden = Array2::<F>::zeros((cfg.batch_size, params.hidden()));
    let mut state = MiniBatchState::new(cfg.batch_size);
    let mut out = Vec::with_capacity(cfg.max_events);
    let mut negs: Vec<F> = Vec::new();
    while let Some(batch) = state.next_batch(corpus) {
        if out.len() >= cfg.max_events {
            break;
        }
        let additional = match &dist {
            Some(d) => cache.draw(d, cfg.n_additional),
            None => Vec::new(),
        };
        let picked: Vec<bool> = (0..batch.len()).map(|_| rng.random::<f64>() < rate).collect();
        let layout = SlateLayout::new(&batch.targets, &additional, cfg.collision);
        let h_prev = hidden.select(Axis(0), &batch.slots);
        let slate: &[usize] = if picked.iter().any(|&p| p) { &layout.items } else { &[] };
        let rec = params.forward_step(&batch.inputs, h_prev.view(), &batch.reset, slate, None)?;
        for (k, &slot) in batch.slots.iter().enumerate() {
            hidden.row_mut(slot).assign(&rec.h_new.row(k));
        }
        if slate.is_empty() {
            continue;
        }
        for k in 0..batch.len() {
            if !picked[k] || layout.negatives[k].is_empty() || out.len() >= cfg.max_events {
                continue;
            }
            let row = rec.scores.row(k);
            let target = row[k];
            negs.clear();
            negs.extend(layout.negatives[k].iter().map(|&c| row[c]));
            let rank = negs.iter().filter(|&&s| s > target).count();
            let res = cfg.loss.evaluate(ScoreSlate::new(target, &negs));
            out.push(GradObservation {
                rank,
                neg_grad: -res.d_target.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(out)
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Buckets observations by rank and reports the median per bucket.
pub fn bucket_medians(obs: &[GradObservation], buckets: &[(usize, usize)]) -> Vec<GradRankRow> {
    buckets
        .iter()
        .map(|&(low, high)| {
            let mut vals: Vec<f64> = obs
                .iter()
                .filter(|o| o.rank >= low && o.rank < high)
                .map(|o| o.neg_grad)
                .collect();
            GradRankRow {
                low,
                high,
                count: vals.len(),
                median_neg_grad: median(&mut vals),
            }
        })
        .collect()
}

/// Median negative target-score gradient per target-rank bucket.
pub fn gradient_vs_rank<F: Real>(params: &GruParams<F>, corpus: &SessionCorpus, cfg: &GradRankConfig) -> Result<Vec<GradRankRow>> {
    let obs = gradient_observations(params, corpus, cfg)?;
    Ok(bucket_medians(&obs, &cfg.buckets))
}

/// `bucket_low, bucket_high, median_neg_grad, count`, tab separated.
pub fn grad_rank_tsv(rows: &[GradRankRow]) -> String {
    let mut s = String::from("bucket_low\tbucket_high\tmedian_neg_grad\tcount\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{:.8}\t{}", r.low, r.high, r.median_neg_grad, r.count);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::bpr_loss;
    use crate::model::ModelConfig;

    #[test]
    fn unique_maximum_is_rank_one() {
        assert_eq!(rank_of(&[0.1f32, 0.9, 0.3], 1, None), 1);
        // ties rank optimistically
        assert_eq!(rank_of(&[0.5f32, 0.5, 0.3], 1, None), 1);
        assert_eq!(rank_of(&[0.5f32, 0.4, 0.3, 0.9], 1, Some(&[0, 2])), 2);
    }

    #[test]
    fn rank_beyond_cutoff_contributes_nothing() {
        let r = EvalReport::from_ranks(20, [Some(21)]).unwrap();
        assert_eq!((r.recall, r.mrr), (0.0, 0.0));
        let r = EvalReport::from_ranks(20, [Some(1), Some(4), None, Some(30)]).unwrap();
        assert_eq!(r.recall, 0.5);
        assert_eq!(r.mrr, (1.0 + 0.25) / 4.0);
        assert_eq!(r.n_unranked, 1);
        assert!(matches!(EvalReport::from_ranks(20, Vec::new()), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn popularity_ties_prefer_lower_index() {
        assert_eq!(popular_items(&[5, 1, 3], 2), vec![0, 2]);
        assert_eq!(popular_items(&[2, 3, 3, 1], 2), vec![1, 2]);
        assert_eq!(popular_items(&[2, 3, 3, 1], 10).len(), 4);
    }

    #[test]
    fn full_popularity_restriction_is_noop() {
        let c = SessionCorpus::from_sessions(6, vec![vec![0, 1, 2, 3], vec![4, 5, 1], vec![2, 0]]).unwrap();
        let p = GruParams::<f32>::init(ModelConfig::new(6, 5), 3).unwrap();
        let all = popularity_set(&c, 6);
        let a = evaluate(&p, &c, 2, None).unwrap();
        let b = evaluate(&p, &c, 2, Some(&all)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_cases, 3 + 2 + 1);
    }

    #[test]
    fn buckets_and_medians() {
        assert_eq!(uniform_buckets(50, 120), vec![(0, 50), (50, 100), (100, 120)]);
        let obs: Vec<GradObservation> = [(0, 0.1), (0, 0.3), (1, 0.5), (0, 0.2)]
            .iter()
            .map(|&(rank, neg_grad)| GradObservation { rank, neg_grad })
            .collect();
        let rows = bucket_medians(&obs, &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(rows[0].median_neg_grad, 0.2);
        assert_eq!(rows[1].count, 1);
        assert!(rows[2].median_neg_grad.is_nan());
    }

    #[test]
    fn bpr_gradient_saturates_at_extreme_ranks() {
        let top = bpr_loss(ScoreSlate::new(20.0f64, &[0.0; 2079])).d_target;
        assert!(-top < 1e-6);
        let bottom = bpr_loss(ScoreSlate::new(-20.0f64, &[0.0; 31])).d_target;
        assert!((-bottom - 1.0).abs() < 1e-6);
    }
}

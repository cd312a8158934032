mod common;

use std::collections::HashSet;

use common::{brute_force_ranks, metrics, random_corpus};
use ndarray::array;
use proptest::prelude::*;
use sessrec::eval::evaluate_cutoffs;
use sessrec::knn::{self, SimilarityTable};
use sessrec::{evaluate, popularity_set, EmbeddingMode, GruParams, ModelConfig, OutputActivation, SessionCorpus};

fn model(n_items: usize, seed: u64) -> GruParams<f64> {
    let cfg = ModelConfig {
        output_bias: seed % 2 == 0,
        activation: if seed % 3 == 0 { OutputActivation::Tanh } else { OutputActivation::Identity },
        embedding: EmbeddingMode::Separate,
        embedding_dim: 4,
        ..ModelConfig::new(n_items, 6)
    };
    let mut p = GruParams::<f32>::init(cfg, seed).unwrap().convert::<f64>();
    p.w_out.mapv_inplace(|x| 3.0 * x);
    p
}

#[test]
fn gru_metrics_match_full_sort_oracle() {
    for seed in 0..30u64 {
        let n = 5 + (seed as usize * 7) % 46;
        let test = random_corpus(n, 1 + seed as usize % 20, 7, seed);
        let p = model(n, seed);
        let ranks: Vec<Option<usize>> = brute_force_ranks(&p, &test).into_iter().map(Some).collect();
        let reports = evaluate_cutoffs(&p, &test, &[1, 5, 20], None).unwrap();
        for r in reports {
            let (recall, mrr) = metrics(&ranks, r.k);
            assert_eq!(r.recall, recall, "seed {seed} k {}", r.k);
            assert_eq!(r.mrr, mrr, "seed {seed} k {}", r.k);
            assert_eq!(r.n_cases, test.n_pairs());
        }
    }
}

#[test]
fn hand_set_three_item_model() {
    // one-hot model, H = 1, zero recurrent weights: h = z * tanh(w_cand[x]),
    // scores are h * w_out. With w_out = (1, 2, -1) the order is 1, 0, 2 for
    // h > 0 and reversed for h < 0.
    let cfg = ModelConfig::new(3, 1);
    let mut p = GruParams::<f64>::zeros(cfg);
    p.w_in = array![[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [0.0, 0.0, 2.0]];
    p.w_out = array![[1.0], [2.0], [-1.0]];
    let test = SessionCorpus::from_sessions(3, vec![vec![0, 1, 2], vec![1, 0, 2]]).unwrap();
    // events: 0->1 (h>0, rank 1), 1->2 (h<0, rank 1), 1->0 (h<0, rank 2), 0->2 (h>0, rank 3)
    let r = evaluate(&p, &test, 1, None).unwrap();
    assert_eq!(r.n_cases, 4);
    assert_eq!(r.recall, 0.5);
    assert_eq!(r.mrr, 0.5);
    let r = evaluate(&p, &test, 20, None).unwrap();
    assert_eq!(r.recall, 1.0);
    assert!((r.mrr - (1.0 + 1.0 + 0.5 + 1.0 / 3.0) / 4.0).abs() < 1e-15);
}

#[test]
fn restriction_never_lowers_metrics() {
    for seed in 0..10u64 {
        let test = random_corpus(40, 15, 6, seed);
        let p = model(40, seed);
        let full = evaluate(&p, &test, 5, None).unwrap();
        let all = popularity_set(&test, 40);
        assert_eq!(evaluate(&p, &test, 5, Some(&all)).unwrap(), full);
        let top = popularity_set(&test, 10);
        let restricted = evaluate(&p, &test, 5, Some(&top)).unwrap();
        assert!(restricted.recall >= full.recall && restricted.mrr >= full.mrr);
    }
}

proptest! {
    #[test]
    fn metrics_monotone_in_k(seed in 0u64..1000) {
        let test = random_corpus(30, 10, 6, seed);
        let p = model(30, seed);
        let reports = evaluate_cutoffs(&p, &test, &[1, 2, 5, 10, 20, 30], None).unwrap();
        for w in reports.windows(2) {
            prop_assert!(w[0].recall <= w[1].recall);
            prop_assert!(w[0].mrr <= w[1].mrr);
        }
        for r in &reports {
            prop_assert!(r.mrr <= r.recall);
        }
    }
}

/// Pairwise similarities recomputed from scratch for every pair.
fn oracle_similarity(train: &SessionCorpus, shrinkage: f64) -> Vec<Vec<f64>> {
    let n = train.n_items();
    let sets: Vec<HashSet<usize>> = train.sessions().iter().map(|s| s.items.iter().copied().collect()).collect();
    let supp: Vec<f64> = (0..n).map(|i| sets.iter().filter(|s| s.contains(&i)).count() as f64).collect();
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let c = sets.iter().filter(|s| s.contains(&i) && s.contains(&j)).count() as f64;
            if c > 0.0 {
                sim[i][j] = c / ((supp[i] * supp[j]).sqrt() + shrinkage);
            }
        }
    }
    sim
}

#[test]
fn knn_metrics_match_oracle() {
    for seed in 0..25u64 {
        let n = 4 + seed as usize % 17;
        let train = random_corpus(n, 12, 6, seed);
        let test = random_corpus(n, 8, 5, seed + 100);
        let shrinkage = (seed % 4) as f64;
        let sim = oracle_similarity(&train, shrinkage);
        for i in 0..n {
            for j in 0..n {
                assert!((sim[i][j] - sim[j][i]).abs() < 1e-15);
            }
        }
        let table = SimilarityTable::fit(&train, shrinkage, n);
        let ranks: Vec<Option<usize>> = test
            .sessions()
            .iter()
            .flat_map(|s| s.items.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>())
            .map(|(cur, next)| {
                let row = &sim[cur];
                (row[next] > 0.0).then(|| 1 + row.iter().filter(|&&s| s > row[next]).count())
            })
            .collect();
        for k in [1, 5, 20] {
            let r = knn::evaluate(&table, &test, k, None).unwrap();
            let (recall, mrr) = metrics(&ranks, k);
            assert_eq!(r.recall, recall, "seed {seed} k {k}");
            assert_eq!(r.mrr, mrr, "seed {seed} k {k}");
            assert_eq!(r.n_unranked, ranks.iter().filter(|r| r.is_none()).count());
        }
    }
}

//! Item-kNN baseline: session co-occurrence cosine similarity with additive
//! shrinkage, recommending the neighbors of the last clicked item.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::data::{ItemIndex, SessionCorpus};
use crate::error::{Error, Result};
use crate::eval::EvalReport;

pub const DEFAULT_SHRINKAGE: f64 = 20.0;
pub const DEFAULT_TOP_M: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityTable {
    /// Per item, neighbors sorted by decreasing similarity (ties by index).
    neighbors: Vec<Vec<(usize, f64)>>,
}

/// Session counts and pairwise co-occurrence counts (set semantics).
fn cooccurrence(train: &SessionCorpus) -> (Vec<u64>, Vec<HashMap<usize, u64>>) {
    let n = train.n_items();
    let mut sessions_with = vec![0u64; n];
    let mut cooc: Vec<HashMap<usize, u64>> = vec![HashMap::new(); n];
    for s in train.sessions() {
        let mut uniq: Vec<usize> = s.items.iter().copied().collect::<HashSet<_>>().into_iter().collect();
        uniq.sort_unstable();
        for (a, &i) in uniq.iter().enumerate() {
            sessions_with[i] += 1;
            for &j in &uniq[a + 1..] {
                *cooc[i].entry(j).or_default() += 1;
                *cooc[j].entry(i).or_default() += 1;
            }
        }
    }
    (sessions_with, cooc)
}

/// `cooc(i, j) / (sqrt(supp_i * supp_j) + shrinkage)` with supports counted
/// in sessions.
pub fn similarity(cooc: u64, supp_i: u64, supp_j: u64, shrinkage: f64) -> f64 {
    cooc as f64 / (((supp_i * supp_j) as f64).sqrt() + shrinkage)
}

impl SimilarityTable {
    pub fn fit(train: &SessionCorpus, shrinkage: f64, top_m: usize) -> Self {
        let (supp, cooc) = cooccurrence(train);
        let neighbors = cooc
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut list: Vec<(usize, f64)> = row
                    .iter()
                    .map(|(&j, &c)| (j, similarity(c, supp[i], supp[j], shrinkage)))
                    .filter(|&(_, s)| s > 0.0)
                    .collect();
                list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                list.truncate(top_m);
                list
            })
            .collect();
        SimilarityTable { neighbors }
    }

    pub fn n_items(&self) -> usize {
        self.neighbors.len()
    }

    /// Ranked recommendation list for the current item; empty for unknown
    /// items.
    pub fn score_next(&self, current: usize) -> &[(usize, f64)] {
        self.neighbors.get(current).map_or(&[], Vec::as_slice)
    }

    /// Rank of `target` among the neighbors of `current` (1 + number of
    /// candidates with strictly higher similarity), or `None` when it is not
    /// in the list.
    pub fn rank(&self, current: usize, target: usize, candidates: Option<&[bool]>) -> Option<usize> {
        let list = self.score_next(current);
        let sim = list.iter().find(|&&(j, _)| j == target)?.1;
        let allowed = |j: usize| candidates.is_none_or(|c| c[j]);
        Some(1 + list.iter().filter(|&&(j, s)| j != target && allowed(j) && s > sim).count())
    }

    /// `item, neighbor, similarity` rows with external keys.
    pub fn to_tsv(&self, index: &ItemIndex) -> String {
        let mut s = String::from("item\tneighbor\tsimilarity\n");
        for (i, list) in self.neighbors.iter().enumerate() {
            for &(j, sim) in list {
                let _ = writeln!(s, "{}\t{}\t{:e}", index.key(i), index.key(j), sim);
            }
        }
        s
    }

    pub fn from_tsv(text: &str, index: &ItemIndex) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); index.len()];
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |m: String| Error::Parse { line: n + 1, message: m };
            if f.len() != 3 {
                return Err(bad("expected `item<TAB>neighbor<TAB>similarity`".into()));
            }
            let i = index.get(f[0]).ok_or_else(|| bad(format!("unknown item `{}`", f[0])))?;
            let j = index.get(f[1]).ok_or_else(|| bad(format!("unknown item `{}`", f[1])))?;
            let sim: f64 = f[2].parse().map_err(|_| bad(format!("invalid similarity `{}`", f[2])))?;
            neighbors[i].push((j, sim));
        }
        for list in &mut neighbors {
            list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        }
        Ok(SimilarityTable { neighbors })
    }
}

/// Next-item evaluation with the same protocol and metrics as the GRU.
pub fn evaluate(table: &SimilarityTable, test: &SessionCorpus, k: usize, restrict: Option<&[usize]>) -> Result<EvalReport> {
    let mask = restrict.map(|r| {
        let mut m = vec![false; test.n_items()];
        for &i in r {
            if i < m.len() {
                m[i] = true;
            }
        }
        m
    });
    let ranks = test.sessions().iter().flat_map(|s| {
        let mask = mask.as_deref();
        s.items.windows(2).map(move |w| table.rank(w[0], w[1], mask))
    });
    EvalReport::from_ranks(k, ranks)
}

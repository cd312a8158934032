//! Losses over a score slate (one target score against `N_S` negative scores)
//! together with their analytic gradients.
//!
//! The ranking-max losses weight each pairwise term by the softmax of the
//! negative scores only; cross-entropy takes its softmax over the target and
//! the negatives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::num::{cast, log_sigmoid, logsumexp, sigmoid, softplus, Real};

/// Scores of one training example.
#[derive(Clone, Copy, Debug)]
pub struct ScoreSlate<'a, F> {
    pub target: F,
    pub negatives: &'a [F],
}

impl<'a, F: Real> ScoreSlate<'a, F> {
    pub fn new(target: F, negatives: &'a [F]) -> Self {
        ScoreSlate { target, negatives }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossResult<F> {
    pub value: F,
    pub d_target: F,
    pub d_negatives: Vec<F>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossName {
    Xe,
    Top1,
    Bpr,
    Top1Max,
    BprMax,
}

impl LossName {
    pub const ALL: [LossName; 5] = [
        LossName::Xe,
        LossName::Top1,
        LossName::Bpr,
        LossName::Top1Max,
        LossName::BprMax,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossName::Xe => "xe",
            LossName::Top1 => "top1",
            LossName::Bpr => "bpr",
            LossName::Top1Max => "top1-max",
            LossName::BprMax => "bpr-max",
        }
    }
}

impl fmt::Display for LossName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        LossName::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown loss `{s}` (expected xe, top1, bpr, top1-max, bpr-max)"))
    }
}

/// How cross-entropy avoids `log(0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XeStabilizer {
    /// `-log(s_i + eps)`
    Epsilon,
    /// `-r_i + logsumexp(r)`
    LogSumExp,
}

pub const DEFAULT_XE_EPSILON: f64 = 1e-24;

/// A loss selected by name plus its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSpec {
    pub name: LossName,
    /// Score regularization weight of BPR-max.
    pub lambda: f64,
    pub xe_stabilizer: XeStabilizer,
    pub xe_epsilon: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            name: LossName::BprMax,
            lambda: 1.0,
            xe_stabilizer: XeStabilizer::LogSumExp,
            xe_epsilon: DEFAULT_XE_EPSILON,
        }
    }
}

impl LossSpec {
    pub fn named(name: LossName) -> Self {
        LossSpec {
            name,
            ..LossSpec::default()
        }
    }

    pub fn evaluate<F: Real>(&self, slate: ScoreSlate<'_, F>) -> LossResult<F> {
        match self.name {
            LossName::Xe => match self.xe_stabilizer {
                XeStabilizer::Epsilon => xe_loss_epsilon(slate, cast(self.xe_epsilon)),
                XeStabilizer::LogSumExp => xe_loss(slate),
            },
            LossName::Top1 => top1_loss(slate),
            LossName::Bpr => bpr_loss(slate),
            LossName::Top1Max => top1_max_loss(slate),
            LossName::BprMax => bpr_max_loss(slate, cast(self.lambda)),
        }
    }
}

/// Max-shifted softmax.
pub fn softmax<F: Real>(scores: &[F]) -> Vec<F> {
    let max = scores.iter().copied().fold(F::neg_infinity(), F::max);
    let mut out: Vec<F> = scores.iter().map(|&r| (r - max).exp()).collect();
    let sum: F = out.iter().copied().sum();
    for s in &mut out {
        *s /= sum;
    }
    out
}

#[inline]
fn dsigmoid<F: Real>(x: F) -> F {
    let s = sigmoid(x);
    s * (F::one() - s)
}

/// Cross-entropy as `-r_i + log(sum(exp(r)))`.
pub fn xe_loss<F: Real>(slate: ScoreSlate<'_, F>) -> LossResult<F> {
    let mut all = Vec::with_capacity(slate.negatives.len() + 1);
    all.push(slate.target);
    all.extend_from_slice(slate.negatives);
    let lse = logsumexp(&all);
    let s = softmax(&all);
    LossResult {
        value: lse - slate.target,
        d_target: s[0] - F::one(),
        d_negatives: s[1..].to_vec(),
    }
}

/// Cross-entropy as `-log(s_i + eps)`; gradients are those of this exact
/// expression.
pub fn xe_loss_epsilon<F: Real>(slate: ScoreSlate<'_, F>, epsilon: F) -> LossResult<F> {
    let mut all = Vec::with_capacity(slate.negatives.len() + 1);
    all.push(slate.target);
    all.extend_from_slice(slate.negatives);
    let s = softmax(&all);
    let si = s[0];
    let denom = si + epsilon;
    let scale = si / denom;
    LossResult {
        value: -denom.ln(),
        d_target: -scale * (F::one() - si),
        d_negatives: s[1..].iter().map(|&sk| scale * sk).collect(),
    }
}

/// TOP1: mean of `sigmoid(r_j - r_i) + sigmoid(r_j^2)`.
pub fn top1_loss<F: Real>(slate: ScoreSlate<'_, F>) -> LossResult<F> {
    let n: F = cast(slate.negatives.len() as f64);
    let ri = slate.target;
    let mut value = F::zero();
    let mut d_target = F::zero();
    let two: F = cast(2.0);
    let d_negatives = slate
        .negatives
        .iter()
        .map(|&rj| {
            let diff = rj - ri;
            let sq = rj * rj;
            value += sigmoid(diff) + sigmoid(sq);
            let dd = dsigmoid(diff);
            d_target -= dd;
            (dd + two * rj * dsigmoid(sq)) / n
        })
        .collect();
    LossResult {
        value: value / n,
        d_target: d_target / n,
        d_negatives,
    }
}

/// BPR: mean of `-log sigmoid(r_i - r_j)`.
pub fn bpr_loss<F: Real>(slate: ScoreSlate<'_, F>) -> LossResult<F> {
    let n: F = cast(slate.negatives.len() as f64);
    let ri = slate.target;
    let mut value = F::zero();
    let mut d_target = F::zero();
    let d_negatives = slate
        .negatives
        .iter()
        .map(|&rj| {
            value += softplus(rj - ri);
            // 1 - sigmoid(r_i - r_j)
            let g = sigmoid(rj - ri);
            d_target -= g;
            g / n
        })
        .collect();
    LossResult {
        value: value / n,
        d_target: d_target / n,
        d_negatives,
    }
}

/// TOP1-max: TOP1 terms weighted by the softmax of the negative scores.
pub fn top1_max_loss<F: Real>(slate: ScoreSlate<'_, F>) -> LossResult<F> {
    let ri = slate.target;
    let s = softmax(slate.negatives);
    let two: F = cast(2.0);
    let mut value = F::zero();
    let mut d_target = F::zero();
    let mut terms = Vec::with_capacity(s.len());
    for (&rj, &sj) in slate.negatives.iter().zip(&s) {
        let diff = rj - ri;
        let sq = rj * rj;
        let f = sigmoid(diff) + sigmoid(sq);
        let dd = dsigmoid(diff);
        value += sj * f;
        d_target -= sj * dd;
        terms.push((f, dd + two * rj * dsigmoid(sq)));
    }
    let d_negatives = s
        .iter()
        .zip(&terms)
        .map(|(&sk, &(f, df))| sk * df + sk * (f - value))
        .collect();
    LossResult {
        value,
        d_target,
        d_negatives,
    }
}

/// BPR-max with softmax-weighted score regularization:
/// `-log(sum_j s_j sigmoid(r_i - r_j)) + lambda * sum_j s_j r_j^2`.
///
/// The log-probability is accumulated in log space, so the result stays
/// finite when every `sigmoid(r_i - r_j)` underflows.
pub fn bpr_max_loss<F: Real>(slate: ScoreSlate<'_, F>, lambda: F) -> LossResult<F> {
    let ri = slate.target;
    let negs = slate.negatives;
    let lse = logsumexp(negs);
    let log_s: Vec<F> = negs.iter().map(|&rj| rj - lse).collect();
    let a: Vec<F> = negs
        .iter()
        .zip(&log_s)
        .map(|(&rj, &ls)| ls + log_sigmoid(ri - rj))
        .collect();
    let log_q = logsumexp(&a);
    let mut d_target = F::zero();
    let mut reg = F::zero();
    let mut d_negatives = Vec::with_capacity(negs.len());
    for ((&rj, &ls), &aj) in negs.iter().zip(&log_s).zip(&a) {
        // w_j = s_j sigmoid(r_i - r_j) / Q
        let w = (aj - log_q).exp();
        let sj = ls.exp();
        let sig = sigmoid(ri - rj);
        d_target -= w * sigmoid(rj - ri);
        reg += sj * rj * rj;
        d_negatives.push(sj - w * sig);
    }
    if lambda != F::zero() {
        let two: F = cast(2.0);
        for ((d, &rj), &ls) in d_negatives.iter_mut().zip(negs).zip(&log_s) {
            let sj = ls.exp();
            *d += lambda * sj * (two * rj + rj * rj - reg);
        }
    }
    LossResult {
        value: -log_q + lambda * reg,
        d_target,
        d_negatives,
    }
}

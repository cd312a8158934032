//! Browser bindings for the loss functions and the negative sampler.
//!
//! Each export has a plain Rust counterpart so the logic can be tested
//! natively; the wrappers only convert errors to JavaScript exceptions.

use sessrec::{LossName, LossSpec, SampleCache, SampleDistribution, ScoreSlate};
use wasm_bindgen::prelude::*;

fn spec(loss: &str, lambda: f64) -> Result<LossSpec, String> {
    let name: LossName = loss.parse()?;
    Ok(LossSpec {
        lambda,
        ..LossSpec::named(name)
    })
}

/// Loss value and `dL/dr_target` as the target score sweeps `[from, to]` in
/// `steps` points against fixed negative scores. Returns
/// `[x_0, value_0, grad_0, x_1, ...]`.
pub fn loss_curve_impl(loss: &str, lambda: f64, negatives: &[f64], from: f64, to: f64, steps: usize) -> Result<Vec<f64>, String> {
    let spec = spec(loss, lambda)?;
    if negatives.is_empty() {
        return Err("at least one negative score is needed".into());
    }
    if steps < 2 || !(to > from) {
        return Err("need steps >= 2 and to > from".into());
    }
    let mut out = Vec::with_capacity(3 * steps);
    for k in 0..steps {
        let x = from + (to - from) * k as f64 / (steps - 1) as f64;
        let r = spec.evaluate(ScoreSlate::new(x, negatives));
        out.extend([x, r.value, r.d_target]);
    }
    Ok(out)
}

/// `|dL/dr_target|` of BPR and BPR-max (no regularization) for a target at
/// 0, one negative at `high` and `m` negatives at `low`, for every `m` in
/// `counts`. Returns `[bpr_0, bpr_max_0, bpr_1, ...]`.
pub fn vanishing_gradient_impl(counts: &[u32], high: f64, low: f64) -> Vec<f64> {
    let bpr = LossSpec::named(LossName::Bpr);
    let bpr_max = LossSpec {
        lambda: 0.0,
        ..LossSpec::named(LossName::BprMax)
    };
    let mut out = Vec::with_capacity(2 * counts.len());
    for &m in counts {
        let mut negs = vec![high];
        negs.resize(m as usize + 1, low);
        let slate = ScoreSlate::new(0.0, &negs);
        out.push(bpr.evaluate(slate).d_target.abs());
        out.push(bpr_max.evaluate(slate).d_target.abs());
    }
    out
}

/// Items with Zipf supports `round(top * (i + 1)^-exponent)`, at least 1.
pub fn zipf_supports(n_items: usize, exponent: f64, top: f64) -> Vec<u64> {
    (0..n_items)
        .map(|i| (top * ((i + 1) as f64).powf(-exponent)).round().max(1.0) as u64)
        .collect()
}

/// Target probabilities `supp^alpha / sum` for Zipf supports and the
/// empirical frequencies of `n_draws` cached draws. Returns the `n_items`
/// targets followed by the `n_items` frequencies.
pub fn sampling_distribution_impl(n_items: usize, exponent: f64, alpha: f64, n_draws: usize, seed: u64) -> Result<Vec<f64>, String> {
    if n_items == 0 || n_draws == 0 {
        return Err("need at least one item and one draw".into());
    }
    let dist = SampleDistribution::from_supports(&zipf_supports(n_items, exponent, 1e4), alpha).map_err(|e| e.to_string())?;
    let mut cache = SampleCache::new(n_draws.min(1 << 20), seed);
    let mut counts = vec![0u64; n_items];
    let mut left = n_draws;
    while left > 0 {
        let n = left.min(cache.capacity());
        for i in cache.draw(&dist, n) {
            counts[i] += 1;
        }
        left -= n;
    }
    let mut out = dist.probabilities();
    out.extend(counts.iter().map(|&c| c as f64 / n_draws as f64));
    Ok(out)
}

#[wasm_bindgen]
pub fn loss_curve(loss: &str, lambda: f64, negatives: &[f64], from: f64, to: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    loss_curve_impl(loss, lambda, negatives, from, to, steps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn vanishing_gradient(counts: &[u32], high: f64, low: f64) -> Vec<f64> {
    vanishing_gradient_impl(counts, high, low)
}

#[wasm_bindgen]
pub fn sampling_distribution(n_items: usize, exponent: f64, alpha: f64, n_draws: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    sampling_distribution_impl(n_items, exponent, alpha, n_draws, seed).map_err(|e| JsError::new(&e))
}

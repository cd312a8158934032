#![allow(dead_code)]

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sessrec::model::StepRecord;
use sessrec::sampler::{CollisionPolicy, SlateLayout};
use sessrec::{GruGrads, GruParams, LossSpec, ScoreSlate, SessionCorpus};

/// Every weight of the model as one mutable list, in a fixed order.
pub fn weights_mut(p: &mut GruParams<f64>) -> Vec<&mut f64> {
    let mut v: Vec<&mut f64> = Vec::new();
    if let Some(e) = p.embedding.as_mut() {
        v.extend(e.iter_mut());
    }
    v.extend(p.w_in.iter_mut());
    v.extend(p.u_zr.iter_mut());
    v.extend(p.u_h.iter_mut());
    v.extend(p.b_in.iter_mut());
    v.extend(p.w_out.iter_mut());
    if let Some(b) = p.b_out.as_mut() {
        v.extend(b.iter_mut());
    }
    v
}

/// Gradients flattened in the order of [`weights_mut`].
pub fn flat_grads(p: &GruParams<f64>, g: &GruGrads<f64>) -> Vec<f64> {
    let n = p.n_items();
    let mut v = Vec::new();
    if p.embedding.is_some() {
        v.extend(g.embedding.to_dense(n));
    }
    v.extend(g.w_in.to_dense(p.w_in.nrows()));
    v.extend(g.u_zr.iter().copied());
    v.extend(g.u_h.iter().copied());
    v.extend(g.b_in.iter().copied());
    v.extend(g.w_out.to_dense(n));
    if p.b_out.is_some() {
        v.extend(g.b_out.to_dense(n));
    }
    v
}

/// A two-step session-parallel scenario: both steps are scored with the
/// loss and gradients flow from the second step back into the first.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub steps: Vec<(Vec<usize>, Vec<usize>, Vec<bool>)>,
    pub additional: Vec<usize>,
    pub h0: Array2<f64>,
    pub masks: Vec<Option<Array2<f64>>>,
    pub loss: LossSpec,
}

impl Scenario {
    pub fn random(n_items: usize, hidden: usize, batch: usize, n_additional: usize, dropout: bool, loss: LossSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = |rng: &mut ChaCha8Rng| (0..batch).map(|_| rng.random_range(0..n_items)).collect::<Vec<_>>();
        let s1 = (items(&mut rng), items(&mut rng), vec![false; batch]);
        let mut reset = vec![false; batch];
        reset[0] = true;
        let s2 = (s1.1.clone(), items(&mut rng), reset);
        let additional = (0..n_additional).map(|_| rng.random_range(0..n_items)).collect();
        let h0 = Array2::from_shape_simple_fn((batch, hidden), || rng.random_range(-0.8..0.8));
        let mask = |rng: &mut ChaCha8Rng| {
            dropout.then(|| Array2::from_shape_simple_fn((batch, hidden), || if rng.random_bool(0.3) { 0.0 } else { 1.0 / 0.7 }))
        };
        let masks = vec![mask(&mut rng), mask(&mut rng)];
        Scenario {
            steps: vec![s1, s2],
            additional,
            h0,
            masks,
            loss,
        }
    }

    fn step_loss(&self, rec: &StepRecord<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
        let layout = SlateLayout::new(targets, &self.additional, CollisionPolicy::Keep);
        let mut d = Array2::zeros(rec.scores.dim());
        let mut total = 0.0;
        for k in 0..targets.len() {
            let row = rec.scores.row(k);
            let negs: Vec<f64> = layout.negatives[k].iter().map(|&c| row[c]).collect();
            if negs.is_empty() {
                continue;
            }
            let r = self.loss.evaluate(ScoreSlate::new(row[k], &negs));
            total += r.value;
            d[(k, k)] += r.d_target;
            for (&c, &g) in layout.negatives[k].iter().zip(&r.d_negatives) {
                d[(k, c)] += g;
            }
        }
        (total, d)
    }

    fn forward(&self, p: &GruParams<f64>) -> (f64, Vec<(StepRecord<f64>, Array2<f64>)>) {
        let mut h = self.h0.clone();
        let mut total = 0.0;
        let mut recs = Vec::new();
        for ((inputs, targets, reset), mask) in self.steps.iter().zip(&self.masks) {
            let layout = SlateLayout::new(targets, &self.additional, CollisionPolicy::Keep);
            let rec = p
                .forward_step(inputs, h.view(), reset, &layout.items, mask.clone())
                .unwrap();
            let (l, d) = self.step_loss(&rec, targets);
            total += l;
            h = rec.h_new.clone();
            recs.push((rec, d));
        }
        (total, recs)
    }

    pub fn objective(&self, p: &GruParams<f64>) -> f64 {
        self.forward(p).0
    }

    pub fn analytic(&self, p: &GruParams<f64>) -> GruGrads<f64> {
        let (_, recs) = self.forward(p);
        let mut g = GruGrads::new(&p.config);
        let (rec2, d2) = &recs[1];
        let dh1 = p.backward_step(rec2, d2.view(), &mut g);
        let (rec1, d1) = &recs[0];
        p.backward_step(rec1, d1.view(), &mut g);
        p.backward_cell(rec1, dh1, &mut g);
        g
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between analytic gradients and five-point finite
/// differences over every weight selected by `which` (indices into the
/// flattened weight list; `None` checks all).
pub fn model_gradient_error(p: &GruParams<f64>, sc: &Scenario, which: Option<std::ops::Range<usize>>) -> f64 {
    let analytic = flat_grads(p, &sc.analytic(p));
    let range = which.unwrap_or(0..analytic.len());
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut q = p.clone();
    for idx in range {
        let orig = *weights_mut(&mut q)[idx];
        let mut at = |x: f64| {
            *weights_mut(&mut q)[idx] = x;
            sc.objective(&q)
        };
        let fd = (8.0 * (at(orig + h) - at(orig - h)) - (at(orig + 2.0 * h) - at(orig - 2.0 * h))) / (12.0 * h);
        *weights_mut(&mut q)[idx] = orig;
        worst = worst.max(rel_error(analytic[idx], fd, 1e-6));
    }
    worst
}

/// Naive evaluation: every session on its own, full score vectors sorted
/// descending, rank = 1 + position of the first item with the target's score.
pub fn brute_force_ranks(p: &GruParams<f64>, test: &SessionCorpus) -> Vec<usize> {
    let mut ranks = Vec::new();
    for s in test.sessions() {
        let mut h = Array2::<f64>::zeros((1, p.hidden()));
        for w in s.items.windows(2) {
            let rec = p.forward_step(&[w[0]], h.view(), &[false], &[], None).unwrap();
            h = rec.h_new;
            let scores: Vec<f64> = full_scores(p, h.view());
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            let t = scores[w[1]];
            let pos = order.iter().position(|&i| scores[i] == t).unwrap();
            ranks.push(pos + 1);
        }
    }
    ranks
}

fn full_scores(p: &GruParams<f64>, h: ArrayView2<'_, f64>) -> Vec<f64> {
    (0..p.n_items())
        .map(|i| {
            let mut s: f64 = h.row(0).iter().zip(p.w_out.row(i)).map(|(a, b)| a * b).sum();
            if let Some(b) = &p.b_out {
                s += b[i];
            }
            if p.config.activation == sessrec::OutputActivation::Tanh {
                s = s.tanh();
            }
            s
        })
        .collect()
}

/// Recall@k and MRR@k from raw ranks (`None` = miss); reciprocal ranks are
/// summed in increasing rank order.
pub fn metrics(ranks: &[Option<usize>], k: usize) -> (f64, f64) {
    let n = ranks.len() as f64;
    let mut hits: Vec<usize> = ranks.iter().flatten().copied().filter(|&r| r <= k).collect();
    hits.sort_unstable();
    let rr: f64 = hits.iter().map(|&r| 1.0 / r as f64).sum();
    (hits.len() as f64 / n, rr / n)
}

/// Random corpus with `n_sessions` sessions of length 2..=max_len.
pub fn random_corpus(n_items: usize, n_sessions: usize, max_len: usize, seed: u64) -> SessionCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sessions = (0..n_sessions)
        .map(|_| {
            let len = rng.random_range(2..=max_len);
            (0..len).map(|_| rng.random_range(0..n_items)).collect()
        })
        .collect();
    SessionCorpus::from_sessions(n_items, sessions).unwrap()
}

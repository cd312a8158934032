//! Training loop: session-parallel batches, shared negative samples, one
//! optimizer step per mini-batch on the mean gradient.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MiniBatchState, SessionCorpus};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::losses::{LossName, LossSpec, ScoreSlate, XeStabilizer, DEFAULT_XE_EPSILON};
use crate::model::{dropout_mask, EmbeddingMode, GruGrads, GruParams, ModelConfig, OutputActivation, StepRecord};
use crate::num::{cast, Real};
use crate::sampler::{CollisionPolicy, SampleCache, SampleDistribution, SlateLayout, DEFAULT_CACHE_CAPACITY};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Adagrad,
    Sgd,
    Momentum,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adagrad" => Some(OptimizerKind::Adagrad),
            "sgd" => Some(OptimizerKind::Sgd),
            "momentum" => Some(OptimizerKind::Momentum),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
}

const ADAGRAD_EPS: f64 = 1e-6;

/// All training hyperparameters. Missing keys in a config file take these
/// defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossName,
    /// BPR-max score regularization.
    pub lambda: f64,
    pub xe_stabilizer: XeStabilizer,
    pub xe_epsilon: f64,
    pub batch_size: usize,
    /// Extra negatives shared by every example of a batch.
    pub n_additional: usize,
    pub alpha: f64,
    pub collision: CollisionPolicy,
    pub cache_capacity: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
    pub dropout: f64,
    pub epochs: usize,
    /// Number of steps gradients flow back through; 1 keeps them inside the
    /// current step.
    pub truncation: usize,
    pub hidden: usize,
    pub embedding: EmbeddingMode,
    pub embedding_dim: usize,
    pub activation: OutputActivation,
    pub output_bias: bool,
    pub seed: u64,
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossName::BprMax,
            lambda: 1.0,
            xe_stabilizer: XeStabilizer::LogSumExp,
            xe_epsilon: DEFAULT_XE_EPSILON,
            batch_size: 32,
            n_additional: 2048,
            alpha: 0.5,
            collision: CollisionPolicy::Keep,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            optimizer: OptimizerKind::Adagrad,
            learning_rate: 0.1,
            momentum: 0.9,
            l2: 0.0,
            dropout: 0.0,
            epochs: 10,
            truncation: 1,
            hidden: 100,
            embedding: EmbeddingMode::OneHot,
            embedding_dim: 100,
            activation: OutputActivation::Identity,
            output_bias: false,
            seed: 42,
            divergence_threshold: 1e4,
        }
    }
}

impl TrainConfig {
    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            name: self.loss,
            lambda: self.lambda,
            xe_stabilizer: self.xe_stabilizer,
            xe_epsilon: self.xe_epsilon,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            l2: self.l2,
        }
    }

    pub fn model_config(&self, n_items: usize) -> ModelConfig {
        ModelConfig {
            n_items,
            hidden: self.hidden,
            embedding: self.embedding,
            embedding_dim: if self.embedding == EmbeddingMode::Tied {
                self.hidden
            } else {
                self.embedding_dim
            },
            output_bias: self.output_bias,
            activation: self.activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha = {} outside [0, 1]", self.alpha));
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.batch_size < 2 && self.n_additional == 0 {
            return fail("no negatives available: batch size 1 with no additional samples".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.l2 < 0.0 || self.lambda < 0.0 || self.xe_epsilon < 0.0 {
            return fail("l2, lambda and epsilon must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.epochs == 0 || self.truncation == 0 || self.hidden == 0 || self.cache_capacity == 0 {
            return fail("epochs, truncation, hidden and cache capacity must be positive".into());
        }
        if self.embedding == EmbeddingMode::Separate && self.embedding_dim == 0 {
            return fail("embedding dimension must be positive".into());
        }
        if !(self.divergence_threshold > 0.0) {
            return fail("divergence threshold must be positive".into());
        }
        Ok(())
    }
}

/// Per-parameter optimizer accumulators: squared-gradient sums for Adagrad,
/// velocities for momentum, unused for SGD.
#[derive(Clone, Debug)]
pub struct OptimizerState<F> {
    pub embedding: Option<Array2<F>>,
    pub w_in: Array2<F>,
    pub u_zr: Array2<F>,
    pub u_h: Array2<F>,
    pub b_in: ndarray::Array1<F>,
    pub w_out: Array2<F>,
    pub b_out: Option<ndarray::Array1<F>>,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(params: &GruParams<F>) -> Self {
        OptimizerState {
            embedding: params.embedding.as_ref().map(|e| Array2::zeros(e.raw_dim())),
            w_in: Array2::zeros(params.w_in.raw_dim()),
            u_zr: Array2::zeros(params.u_zr.raw_dim()),
            u_h: Array2::zeros(params.u_h.raw_dim()),
            b_in: ndarray::Array1::zeros(params.b_in.raw_dim()),
            w_out: Array2::zeros(params.w_out.raw_dim()),
            b_out: params.b_out.as_ref().map(|b| ndarray::Array1::zeros(b.raw_dim())),
        }
    }
}

#[inline]
fn update_slice<F: Real>(theta: &mut [F], grad: &[F], acc: &mut [F], cfg: &OptimizerConfig) {
    let lr: F = cast(cfg.learning_rate);
    let l2: F = cast(cfg.l2);
    let eps: F = cast(ADAGRAD_EPS);
    let mu: F = cast(cfg.momentum);
    for ((t, &g), a) in theta.iter_mut().zip(grad).zip(acc.iter_mut()) {
        let g = g + l2 * *t;
        match cfg.kind {
            OptimizerKind::Adagrad => {
                *a += g * g;
                *t -= lr * g / (a.sqrt() + eps);
            }
            OptimizerKind::Sgd => *t -= lr * g,
            OptimizerKind::Momentum => {
                *a = mu * *a - lr * g;
                *t += *a;
            }
        }
    }
}

fn update_rows<F: Real>(theta: &mut Array2<F>, acc: &mut Array2<F>, grad: &crate::model::SparseRows<F>, cfg: &OptimizerConfig) {
    for (row, g) in grad.iter() {
        let mut t = theta.row_mut(row);
        let mut a = acc.row_mut(row);
        update_slice(t.as_slice_mut().unwrap(), g, a.as_slice_mut().unwrap(), cfg);
    }
}

/// Applies one update. Item-indexed matrices change only on rows present in
/// the gradient; the ℓ2 term is added to the gradient before accumulation.
pub fn apply_update<F: Real>(params: &mut GruParams<F>, grads: &GruGrads<F>, state: &mut OptimizerState<F>, cfg: &OptimizerConfig) {
    if let (Some(e), Some(acc)) = (params.embedding.as_mut(), state.embedding.as_mut()) {
        update_rows(e, acc, &grads.embedding, cfg);
    }
    update_rows(&mut params.w_in, &mut state.w_in, &grads.w_in, cfg);
    update_slice(
        params.u_zr.as_slice_mut().unwrap(),
        grads.u_zr.as_slice().unwrap(),
        state.u_zr.as_slice_mut().unwrap(),
        cfg,
    );
    update_slice(
        params.u_h.as_slice_mut().unwrap(),
        grads.u_h.as_slice().unwrap(),
        state.u_h.as_slice_mut().unwrap(),
        cfg,
    );
    update_slice(
        params.b_in.as_slice_mut().unwrap(),
        grads.b_in.as_slice().unwrap(),
        state.b_in.as_slice_mut().unwrap(),
        cfg,
    );
    update_rows(&mut params.w_out, &mut state.w_out, &grads.w_out, cfg);
    if let (Some(b), Some(acc)) = (params.b_out.as_mut(), state.b_out.as_mut()) {
        for (row, g) in grads.b_out.iter() {
            update_slice(std::slice::from_mut(&mut b[row]), g, std::slice::from_mut(&mut acc[row]), cfg);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub n_examples: usize,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// `epoch, mean_loss, wall_seconds` as tab-separated text.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\tmean_loss\twall_seconds\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{}\t{:.9}\t{:.3}", e.epoch, e.mean_loss, e.wall_seconds);
        }
        s
    }

    /// Epoch losses only; wall time is not reproducible.
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

/// Statistics of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutcome {
    pub loss: f64,
    pub n_examples: usize,
}

/// Stateful trainer; [`train`] drives it for the configured epochs.
pub struct Trainer<'a, F: Real> {
    corpus: &'a SessionCorpus,
    config: TrainConfig,
    loss: LossSpec,
    optimizer: OptimizerConfig,
    params: GruParams<F>,
    grads: GruGrads<F>,
    state: OptimizerState<F>,
    dist: Option<SampleDistribution>,
    cache: SampleCache,
    dropout_rng: ChaCha8Rng,
    hidden: Array2<F>,
    history: VecDeque<(Vec<usize>, StepRecord<F>)>,
    epoch: usize,
    log: TrainLog,
}

impl<'a, F: Real> Trainer<'a, F> {
    pub fn new(corpus: &'a SessionCorpus, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = GruParams::init(config.model_config(corpus.n_items()), config.seed)?;
        Trainer::with_params(corpus, config, params)
    }

    /// Starts from given weights instead of a fresh initialization.
    pub fn with_params(corpus: &'a SessionCorpus, config: TrainConfig, params: GruParams<F>) -> Result<Self> {
        config.validate()?;
        if params.n_items() != corpus.n_items() {
            return Err(Error::Dimension(format!(
                "model has {} items, corpus has {}",
                params.n_items(),
                corpus.n_items()
            )));
        }
        let dist = if config.n_additional > 0 {
            Some(SampleDistribution::new(corpus, config.alpha)?)
        } else {
            None
        };
        let capacity = config.cache_capacity.max(config.n_additional).max(1);
        Ok(Trainer {
            corpus,
            loss: config.loss_spec(),
            optimizer: config.optimizer_config(),
            grads: GruGrads::new(&params.config),
            state: OptimizerState::new(&params),
            cache: SampleCache::new(capacity, config.seed.wrapping_add(1)),
            dropout_rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2)),
            hidden: Array2::zeros((config.batch_size, params.hidden())),
            history: VecDeque::new(),
            epoch: 0,
            log: TrainLog::default(),
            dist,
            params,
            config,
        })
    }

    pub fn params(&self) -> &GruParams<F> {
        &self.params
    }

    pub fn into_params(self) -> GruParams<F> {
        self.params
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One full pass over the corpus.
    pub fn run_epoch(&mut self) -> Result<&EpochLog> {
        let start = Instant::now();
        let mut state = MiniBatchState::new(self.config.batch_size);
        self.hidden.fill(F::zero());
        self.history.clear();
        let mut total = 0.0;
        let mut count = 0usize;
        let mut batch_no = 0usize;
        while let Some(batch) = state.next_batch(self.corpus) {
            let outcome = self.step(&batch.slots, &batch.inputs, &batch.targets, &batch.reset)?;
            if let Some(o) = outcome {
                if !o.loss.is_finite() || o.loss > self.config.divergence_threshold {
                    return Err(Error::Divergence {
                        epoch: self.epoch + 1,
                        batch: batch_no,
                        loss: o.loss,
                    });
                }
                total += o.loss * o.n_examples as f64;
                count += o.n_examples;
            }
            batch_no += 1;
        }
        self.epoch += 1;
        self.log.epochs.push(EpochLog {
            epoch: self.epoch,
            mean_loss: if count > 0 { total / count as f64 } else { 0.0 },
            n_examples: count,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        Ok(self.log.epochs.last().unwrap())
    }

    /// Forward, loss, backward and update for one batch. Returns `None` when
    /// no example of the batch has a negative (a shrunk batch of one without
    /// extra samples); such a batch only advances the hidden state.
    pub fn step(&mut self, slots: &[usize], inputs: &[usize], targets: &[usize], reset: &[bool]) -> Result<Option<BatchOutcome>> {
        let b = inputs.len();
        let additional = match &self.dist {
            Some(d) => self.cache.draw(d, self.config.n_additional),
            None => Vec::new(),
        };
        let layout = SlateLayout::new(targets, &additional, self.config.collision);
        let h_prev = self.hidden.select(Axis(0), slots);
        let mask = dropout_mask(b, self.params.hidden(), self.config.dropout, &mut self.dropout_rng);
        let rec = self
            .params
            .forward_step(inputs, h_prev.view(), reset, &layout.items, mask)?;
        for (k, &slot) in slots.iter().enumerate() {
            self.hidden.row_mut(slot).assign(&rec.h_new.row(k));
        }

        let mut results = Vec::with_capacity(b);
        let mut negs: Vec<F> = Vec::with_capacity(layout.n_columns());
        for k in 0..b {
            let cols = &layout.negatives[k];
            if cols.is_empty() {
                results.push(None);
                continue;
            }
            let row = rec.scores.row(k);
            negs.clear();
            negs.extend(cols.iter().map(|&c| row[c]));
            results.push(Some(self.loss.evaluate(ScoreSlate::new(row[k], &negs))));
        }
        let n_ex = results.iter().flatten().count();
        if n_ex == 0 {
            self.history.clear();
            return Ok(None);
        }
        let scale: F = cast(1.0 / n_ex as f64);
        let mut d_scores = Array2::<F>::zeros((b, layout.n_columns()));
        let mut loss_sum = 0.0;
        for (k, res) in results.iter().enumerate() {
            let Some(res) = res else { continue };
            loss_sum += res.value.to_f64().unwrap_or(f64::NAN);
            let mut row = d_scores.row_mut(k);
            row[k] += res.d_target * scale;
            for (&c, &d) in layout.negatives[k].iter().zip(&res.d_negatives) {
                row[c] += d * scale;
            }
        }

        self.grads.clear();
        let mut dh = self.params.backward_step(&rec, d_scores.view(), &mut self.grads);
        let mut newer_slots = slots.to_vec();
        for (old_slots, old_rec) in self.history.iter().rev() {
            let mut dh_old = Array2::<F>::zeros((old_slots.len(), self.params.hidden()));
            for (j, slot) in old_slots.iter().enumerate() {
                if let Some(k) = newer_slots.iter().position(|s| s == slot) {
                    dh_old.row_mut(j).assign(&dh.row(k));
                }
            }
            dh = self.params.backward_cell(old_rec, dh_old, &mut self.grads);
            newer_slots.clone_from(old_slots);
        }
        if self.config.truncation > 1 {
            self.history.push_back((slots.to_vec(), rec));
            while self.history.len() > self.config.truncation - 1 {
                self.history.pop_front();
            }
        }
        apply_update(&mut self.params, &self.grads, &mut self.state, &self.optimizer);
        Ok(Some(BatchOutcome {
            loss: loss_sum / n_ex as f64,
            n_examples: n_ex,
        }))
    }
}

/// Trains a fresh `f32` model for `config.epochs` epochs.
pub fn train(corpus: &SessionCorpus, config: &TrainConfig) -> Result<(GruParams<f32>, TrainLog)> {
    let mut trainer = Trainer::<f32>::new(corpus, config.clone())?;
    for _ in 0..config.epochs {
        trainer.run_epoch()?;
    }
    let log = trainer.log().clone();
    Ok((trainer.into_params(), log))
}

/// Trains every candidate configuration and evaluates it on `validation`;
/// results are sorted by decreasing Recall@k.
pub fn grid_search(
    train_set: &SessionCorpus,
    validation: &SessionCorpus,
    candidates: impl IntoIterator<Item = TrainConfig>,
    k: usize,
) -> Result<Vec<(TrainConfig, EvalReport)>> {
    let mut out = Vec::new();
    for cfg in candidates {
        let (params, _) = train(train_set, &cfg)?;
        let report = evaluate(&params, validation, k, None)?;
        out.push((cfg, report));
    }
    out.sort_by(|a, b| b.1.recall.total_cmp(&a.1.recall));
    Ok(out)
}

//! Single-layer GRU scoring network.
//!
//! Row-vector convention throughout: a batch of hidden states is a `B × H`
//! matrix and gate weights act from the right. Input weights for the three
//! gates are stored side by side in one `input_dim × 3H` matrix (update,
//! reset, candidate), likewise the recurrent weights of the two gates.
//!
//! During training only the columns of the current slate are scored; the
//! output layer of all `N` items is touched only by [`GruParams::score_all`].

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{cast, sigmoid, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMode {
    /// Input weights are indexed directly by item (a row select).
    #[default]
    OneHot,
    /// A separate `N × d_e` embedding table feeds the gates.
    Separate,
    /// The output matrix doubles as the embedding table (`d_e = H`).
    Tied,
}

impl EmbeddingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingMode::OneHot => "one-hot",
            EmbeddingMode::Separate => "separate",
            EmbeddingMode::Tied => "tied",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "one-hot" => Some(EmbeddingMode::OneHot),
            "separate" => Some(EmbeddingMode::Separate),
            "tied" => Some(EmbeddingMode::Tied),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputActivation {
    #[default]
    Identity,
    Tanh,
}

impl OutputActivation {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputActivation::Identity => "identity",
            OutputActivation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" | "linear" => Some(OutputActivation::Identity),
            "tanh" => Some(OutputActivation::Tanh),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_items: usize,
    pub hidden: usize,
    pub embedding: EmbeddingMode,
    /// Only used by [`EmbeddingMode::Separate`].
    pub embedding_dim: usize,
    pub output_bias: bool,
    pub activation: OutputActivation,
}

impl ModelConfig {
    pub fn new(n_items: usize, hidden: usize) -> Self {
        ModelConfig {
            n_items,
            hidden,
            embedding: EmbeddingMode::OneHot,
            embedding_dim: hidden,
            output_bias: false,
            activation: OutputActivation::Identity,
        }
    }

    /// Width of the vector entering the gates.
    pub fn input_dim(&self) -> usize {
        match self.embedding {
            EmbeddingMode::OneHot => self.n_items,
            EmbeddingMode::Separate => self.embedding_dim,
            EmbeddingMode::Tied => self.hidden,
        }
    }
}

/// Network weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<F> {
    pub config: ModelConfig,
    /// `N × d_e`, present only in separate-embedding mode.
    pub embedding: Option<Array2<F>>,
    /// `input_dim × 3H`: update, reset and candidate input weights.
    pub w_in: Array2<F>,
    /// `H × 2H`: update and reset recurrent weights.
    pub u_zr: Array2<F>,
    /// `H × H`: candidate recurrent weights (applied to `r ⊙ h`).
    pub u_h: Array2<F>,
    /// `3H` gate biases.
    pub b_in: Array1<F>,
    /// `N × H` output item vectors; also the embedding table in tied mode.
    pub w_out: Array2<F>,
    pub b_out: Option<Array1<F>>,
}

fn uniform_matrix<F: Real, R: Rng>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<F> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || cast(rng.random_range(-bound..bound)))
}

impl<F: Real> GruParams<F> {
    /// Gate blocks are drawn from `U(±sqrt(6 / (fan_in + fan_out)))` per
    /// matrix; biases start at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.n_items == 0 || config.hidden == 0 {
            return Err(Error::Config("model needs at least one item and one hidden unit".into()));
        }
        if config.embedding == EmbeddingMode::Separate && config.embedding_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let n = config.n_items;
        let d = config.input_dim();
        let embedding = (config.embedding == EmbeddingMode::Separate)
            .then(|| uniform_matrix(n, config.embedding_dim, n, config.embedding_dim, &mut rng));
        let mut w_in = Array2::zeros((d, 3 * h));
        for g in 0..3 {
            w_in.slice_mut(s![.., g * h..(g + 1) * h])
                .assign(&uniform_matrix::<F, _>(d, h, d, h, &mut rng));
        }
        let mut u_zr = Array2::zeros((h, 2 * h));
        for g in 0..2 {
            u_zr.slice_mut(s![.., g * h..(g + 1) * h])
                .assign(&uniform_matrix::<F, _>(h, h, h, h, &mut rng));
        }
        let u_h = uniform_matrix(h, h, h, h, &mut rng);
        let w_out = uniform_matrix(n, h, h, n, &mut rng);
        Ok(GruParams {
            config,
            embedding,
            w_in,
            u_zr,
            u_h,
            b_in: Array1::zeros(3 * h),
            w_out,
            b_out: config.output_bias.then(|| Array1::zeros(n)),
        })
    }

    /// All-zero weights of the right shapes.
    pub fn zeros(config: ModelConfig) -> Self {
        let h = config.hidden;
        let n = config.n_items;
        GruParams {
            config,
            embedding: (config.embedding == EmbeddingMode::Separate)
                .then(|| Array2::zeros((n, config.embedding_dim))),
            w_in: Array2::zeros((config.input_dim(), 3 * h)),
            u_zr: Array2::zeros((h, 2 * h)),
            u_h: Array2::zeros((h, h)),
            b_in: Array1::zeros(3 * h),
            w_out: Array2::zeros((n, h)),
            b_out: config.output_bias.then(|| Array1::zeros(n)),
        }
    }

    pub fn n_items(&self) -> usize {
        self.config.n_items
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn n_params(&self) -> usize {
        self.embedding.as_ref().map_or(0, |e| e.len())
            + self.w_in.len()
            + self.u_zr.len()
            + self.u_h.len()
            + self.b_in.len()
            + self.w_out.len()
            + self.b_out.as_ref().map_or(0, |b| b.len())
    }

    /// Same weights in another float width.
    pub fn convert<G: Real>(&self) -> GruParams<G> {
        let m2 = |a: &Array2<F>| a.mapv(|x| cast::<G>(x.to_f64().unwrap_or(f64::NAN)));
        let m1 = |a: &Array1<F>| a.mapv(|x| cast::<G>(x.to_f64().unwrap_or(f64::NAN)));
        GruParams {
            config: self.config,
            embedding: self.embedding.as_ref().map(m2),
            w_in: m2(&self.w_in),
            u_zr: m2(&self.u_zr),
            u_h: m2(&self.u_h),
            b_in: m1(&self.b_in),
            w_out: m2(&self.w_out),
            b_out: self.b_out.as_ref().map(m1),
        }
    }

    pub fn is_finite(&self) -> bool {
        let f2 = |a: &Array2<F>| a.iter().all(|x| x.is_finite());
        let f1 = |a: &Array1<F>| a.iter().all(|x| x.is_finite());
        self.embedding.as_ref().is_none_or(f2)
            && f2(&self.w_in)
            && f2(&self.u_zr)
            && f2(&self.u_h)
            && f1(&self.b_in)
            && f2(&self.w_out)
            && self.b_out.as_ref().is_none_or(f1)
    }

    /// Sum of squared weights.
    pub fn squared_norm(&self) -> f64 {
        let sq = |it: &mut dyn Iterator<Item = &F>| it.map(|x| x.to_f64().unwrap().powi(2)).sum::<f64>();
        self.embedding.as_ref().map_or(0.0, |e| sq(&mut e.iter()))
            + sq(&mut self.w_in.iter())
            + sq(&mut self.u_zr.iter())
            + sq(&mut self.u_h.iter())
            + sq(&mut self.b_in.iter())
            + sq(&mut self.w_out.iter())
            + self.b_out.as_ref().map_or(0.0, |b| sq(&mut b.iter()))
    }

    fn check_items(&self, items: &[usize]) -> Result<()> {
        let n = self.n_items();
        match items.iter().find(|&&i| i >= n) {
            Some(&index) => Err(Error::IndexOutOfRange { index, n_items: n }),
            None => Ok(()),
        }
    }

    /// Embedded inputs (`B × d_e`), or `None` in one-hot mode.
    fn embed(&self, inputs: &[usize]) -> Option<Array2<F>> {
        match self.config.embedding {
            EmbeddingMode::OneHot => None,
            EmbeddingMode::Separate => Some(self.embedding.as_ref().unwrap().select(Axis(0), inputs)),
            EmbeddingMode::Tied => Some(self.w_out.select(Axis(0), inputs)),
        }
    }

    fn activate(&self, pre: &mut Array2<F>) {
        if self.config.activation == OutputActivation::Tanh {
            pre.mapv_inplace(F::tanh);
        }
    }

    /// One GRU step for a batch followed by scoring of the `slate` items.
    ///
    /// Rows of `h_prev` flagged in `reset` are replaced by zeros before the
    /// step. `dropout_mask`, if given, multiplies the new hidden state on its
    /// way to the output layer; the carried state is unaffected.
    pub fn forward_step(
        &self,
        inputs: &[usize],
        h_prev: ArrayView2<'_, F>,
        reset: &[bool],
        slate: &[usize],
        dropout_mask: Option<Array2<F>>,
    ) -> Result<StepRecord<F>> {
        let b = inputs.len();
        let hd = self.hidden();
        if h_prev.dim() != (b, hd) || reset.len() != b {
            return Err(Error::Dimension(format!(
                "{b} inputs, hidden state {:?}, {} reset flags, expected hidden width {hd}",
                h_prev.dim(),
                reset.len()
            )));
        }
        if let Some(m) = &dropout_mask {
            if m.dim() != (b, hd) {
                return Err(Error::Dimension(format!("dropout mask {:?}", m.dim())));
            }
        }
        self.check_items(inputs)?;
        self.check_items(slate)?;

        let mut h = h_prev.to_owned();
        for (mut row, &r) in h.rows_mut().into_iter().zip(reset) {
            if r {
                row.fill(F::zero());
            }
        }
        let x = self.embed(inputs);
        let mut proj = match &x {
            None => self.w_in.select(Axis(0), inputs),
            Some(x) => x.dot(&self.w_in),
        };
        proj += &self.b_in;
        let hu = h.dot(&self.u_zr);
        let mut z = proj.slice(s![.., ..hd]).to_owned();
        z += &hu.slice(s![.., ..hd]);
        z.mapv_inplace(sigmoid);
        let mut r = proj.slice(s![.., hd..2 * hd]).to_owned();
        r += &hu.slice(s![.., hd..]);
        r.mapv_inplace(sigmoid);
        let rh = &r * &h;
        let mut cand = proj.slice(s![.., 2 * hd..]).to_owned();
        cand += &rh.dot(&self.u_h);
        cand.mapv_inplace(F::tanh);
        let mut h_new = h.clone();
        Zip::from(&mut h_new)
            .and(&z)
            .and(&cand)
            .for_each(|hn, &zz, &c| *hn = *hn + zz * (c - *hn));
        let h_out = match &dropout_mask {
            Some(m) => &h_new * m,
            None => h_new.clone(),
        };
        let w_sel = self.w_out.select(Axis(0), slate);
        let mut scores = h_out.dot(&w_sel.t());
        if let Some(bias) = &self.b_out {
            let bsel = bias.select(Axis(0), slate);
            scores += &bsel;
        }
        self.activate(&mut scores);
        Ok(StepRecord {
            inputs: inputs.to_vec(),
            reset: reset.to_vec(),
            x,
            h_prev: h,
            z,
            r,
            cand,
            h_new,
            h_out,
            dropout_mask,
            slate: slate.to_vec(),
            w_sel,
            scores,
        })
    }

    /// Scores of every item for each row of `hidden`.
    pub fn score_all(&self, hidden: ArrayView2<'_, F>) -> Array2<F> {
        let mut scores = hidden.dot(&self.w_out.t());
        if !scores.is_standard_layout() {
            scores = scores.as_standard_layout().into_owned();
        }
        if let Some(bias) = &self.b_out {
            scores += bias;
        }
        self.activate(&mut scores);
        scores
    }

    /// Backpropagates slate-score gradients through the output layer and the
    /// cell. Returns the gradient w.r.t. the (post-reset) previous hidden
    /// state, which is zero on reset rows.
    pub fn backward_step(&self, rec: &StepRecord<F>, d_scores: ArrayView2<'_, F>, grads: &mut GruGrads<F>) -> Array2<F> {
        let mut da = d_scores.to_owned();
        if self.config.activation == OutputActivation::Tanh {
            Zip::from(&mut da)
                .and(&rec.scores)
                .for_each(|d, &s| *d *= F::one() - s * s);
        }
        let dw = da.t().dot(&rec.h_out);
        for (c, &item) in rec.slate.iter().enumerate() {
            grads.w_out.add_row(item, dw.row(c));
        }
        if self.b_out.is_some() {
            let db = da.sum_axis(Axis(0));
            for (c, &item) in rec.slate.iter().enumerate() {
                grads.b_out.row_mut(item)[0] += db[c];
            }
        }
        let mut dh_new = da.dot(&rec.w_sel);
        if let Some(m) = &rec.dropout_mask {
            dh_new *= m;
        }
        self.backward_cell(rec, dh_new, grads)
    }

    /// Backpropagates a gradient w.r.t. the step's new hidden state through
    /// the GRU cell.
    pub fn backward_cell(&self, rec: &StepRecord<F>, dh_new: Array2<F>, grads: &mut GruGrads<F>) -> Array2<F> {
        let hd = self.hidden();
        let b = rec.inputs.len();
        let h = &rec.h_prev;
        let one = F::one();
        let mut daz = Array2::zeros((b, hd));
        let mut dcand = Array2::zeros((b, hd));
        let mut dh = Array2::zeros((b, hd));
        Zip::from(&mut daz)
            .and(&mut dcand)
            .and(&dh_new)
            .and(&rec.z)
            .and(&rec.cand)
            .and(h)
            .for_each(|az, dc, &g, &z, &c, &hp| {
                *az = g * (c - hp) * z * (one - z);
                *dc = g * z * (one - c * c);
            });
        Zip::from(&mut dh)
            .and(&dh_new)
            .and(&rec.z)
            .for_each(|dhp, &g, &z| *dhp = g * (one - z));
        let rh = &rec.r * h;
        grads.u_h += &rh.t().dot(&dcand);
        let drh = dcand.dot(&self.u_h.t());
        let mut dar = Array2::zeros((b, hd));
        Zip::from(&mut dar)
            .and(&mut dh)
            .and(&drh)
            .and(&rec.r)
            .and(h)
            .for_each(|ar, dhp, &g, &r, &hp| {
                *ar = g * hp * r * (one - r);
                *dhp += g * r;
            });
        let mut dgates = Array2::zeros((b, 3 * hd));
        dgates.slice_mut(s![.., ..hd]).assign(&daz);
        dgates.slice_mut(s![.., hd..2 * hd]).assign(&dar);
        dgates.slice_mut(s![.., 2 * hd..]).assign(&dcand);
        let dzr = dgates.slice(s![.., ..2 * hd]);
        grads.u_zr += &h.t().dot(&dzr);
        dh += &dzr.dot(&self.u_zr.t());
        grads.b_in += &dgates.sum_axis(Axis(0));
        match &rec.x {
            None => {
                for (k, &item) in rec.inputs.iter().enumerate() {
                    grads.w_in.add_row(item, dgates.row(k));
                }
            }
            Some(x) => {
                let dw = x.t().dot(&dgates);
                for (row, vals) in dw.rows().into_iter().enumerate() {
                    grads.w_in.add_row(row, vals);
                }
                let dx = dgates.dot(&self.w_in.t());
                let target = match self.config.embedding {
                    EmbeddingMode::Tied => &mut grads.w_out,
                    _ => &mut grads.embedding,
                };
                for (k, &item) in rec.inputs.iter().enumerate() {
                    target.add_row(item, dx.row(k));
                }
            }
        }
        for (mut row, &r) in dh.rows_mut().into_iter().zip(&rec.reset) {
            if r {
                row.fill(F::zero());
            }
        }
        dh
    }
}

/// Inverted-dropout mask (`0` or `1/(1-rate)`), or `None` when `rate == 0`.
pub fn dropout_mask<F: Real, R: Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Option<Array2<F>> {
    if rate <= 0.0 {
        return None;
    }
    let keep: F = cast(1.0 / (1.0 - rate));
    Some(Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < rate {
            F::zero()
        } else {
            keep
        }
    }))
}

/// Everything a forward step computed that its backward pass needs.
#[derive(Clone, Debug)]
pub struct StepRecord<F> {
    pub inputs: Vec<usize>,
    pub reset: Vec<bool>,
    pub x: Option<Array2<F>>,
    /// Previous hidden state after the reset mask was applied.
    pub h_prev: Array2<F>,
    pub z: Array2<F>,
    pub r: Array2<F>,
    pub cand: Array2<F>,
    pub h_new: Array2<F>,
    pub h_out: Array2<F>,
    pub dropout_mask: Option<Array2<F>>,
    pub slate: Vec<usize>,
    pub w_sel: Array2<F>,
    /// `B × C` slate scores, after the output activation.
    pub scores: Array2<F>,
}

/// Row-sparse gradient accumulator for item-indexed matrices.
#[derive(Clone, Debug, Default)]
pub struct SparseRows<F> {
    width: usize,
    slot: HashMap<usize, usize>,
    rows: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> SparseRows<F> {
    pub fn new(width: usize) -> Self {
        SparseRows {
            width,
            slot: HashMap::new(),
            rows: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn clear(&mut self) {
        self.slot.clear();
        self.rows.clear();
        self.data.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Touched row indices in first-touch order.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn get(&self, row: usize) -> Option<&[F]> {
        self.slot
            .get(&row)
            .map(|&s| &self.data[s * self.width..(s + 1) * self.width])
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [F] {
        let w = self.width;
        let s = match self.slot.get(&row) {
            Some(&s) => s,
            None => {
                let s = self.rows.len();
                self.slot.insert(row, s);
                self.rows.push(row);
                self.data.resize(self.data.len() + w, F::zero());
                s
            }
        };
        &mut self.data[s * w..(s + 1) * w]
    }

    pub fn add_row(&mut self, row: usize, values: ArrayView1<'_, F>) {
        for (d, &v) in self.row_mut(row).iter_mut().zip(values.iter()) {
            *d += v;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[F])> {
        self.rows
            .iter()
            .enumerate()
            .map(move |(s, &r)| (r, &self.data[s * self.width..(s + 1) * self.width]))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (usize, &mut [F])> {
        self.rows.iter().copied().zip(self.data.chunks_mut(self.width.max(1)))
    }

    /// Dense `rows × width` copy, zero for untouched rows.
    pub fn to_dense(&self, rows: usize) -> Array2<F> {
        let mut out = Array2::zeros((rows, self.width));
        for (r, vals) in self.iter() {
            for (o, &v) in out.row_mut(r).iter_mut().zip(vals) {
                *o = v;
            }
        }
        out
    }
}

/// Parameter gradients of one batch. Item-indexed matrices are row-sparse; in
/// tied mode both the embedding and output paths accumulate into `w_out`.
#[derive(Clone, Debug)]
pub struct GruGrads<F> {
    pub embedding: SparseRows<F>,
    pub w_in: SparseRows<F>,
    pub u_zr: Array2<F>,
    pub u_h: Array2<F>,
    pub b_in: Array1<F>,
    pub w_out: SparseRows<F>,
    pub b_out: SparseRows<F>,
}

impl<F: Real> GruGrads<F> {
    pub fn new(config: &ModelConfig) -> Self {
        let h = config.hidden;
        GruGrads {
            embedding: SparseRows::new(config.embedding_dim),
            w_in: SparseRows::new(3 * h),
            u_zr: Array2::zeros((h, 2 * h)),
            u_h: Array2::zeros((h, h)),
            b_in: Array1::zeros(3 * h),
            w_out: SparseRows::new(h),
            b_out: SparseRows::new(1),
        }
    }

    pub fn clear(&mut self) {
        self.embedding.clear();
        self.w_in.clear();
        self.u_zr.fill(F::zero());
        self.u_h.fill(F::zero());
        self.b_in.fill(F::zero());
        self.w_out.clear();
        self.b_out.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn config(mode: EmbeddingMode, n: usize, h: usize) -> ModelConfig {
        ModelConfig {
            embedding: mode,
            embedding_dim: 3,
            output_bias: true,
            ..ModelConfig::new(n, h)
        }
    }

    #[test]
    fn zero_weights_give_zero_state_and_scores() {
        let p = GruParams::<f64>::zeros(config(EmbeddingMode::OneHot, 5, 4));
        let h0 = Array2::zeros((2, 4));
        let rec = p.forward_step(&[1, 3], h0.view(), &[true, true], &[0, 2, 4], None).unwrap();
        assert!(rec.h_new.iter().all(|&x| x == 0.0));
        assert!(rec.scores.iter().all(|&x| x == 0.0));
        assert!(rec.z.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn reset_ignores_prior_state() {
        let p = GruParams::<f64>::init(config(EmbeddingMode::OneHot, 5, 4), 1).unwrap();
        let junk = Array2::from_elem((1, 4), 3.0);
        let zero = Array2::zeros((1, 4));
        let a = p.forward_step(&[2], junk.view(), &[true], &[0, 1], None).unwrap();
        let b = p.forward_step(&[2], zero.view(), &[false], &[0, 1], None).unwrap();
        assert_eq!(a.h_new, b.h_new);
        assert_eq!(a.scores, b.scores);
        let c = p.forward_step(&[2], junk.view(), &[false], &[0, 1], None).unwrap();
        assert_ne!(a.h_new, c.h_new);
    }

    #[test]
    fn slate_scores_match_full_scores() {
        for mode in [EmbeddingMode::OneHot, EmbeddingMode::Separate, EmbeddingMode::Tied] {
            let p = GruParams::<f32>::init(config(mode, 7, 4), 2).unwrap();
            let h0 = Array2::zeros((2, 4));
            let slate = [6, 0, 3];
            let rec = p.forward_step(&[1, 5], h0.view(), &[true, true], &slate, None).unwrap();
            let full = p.score_all(rec.h_new.view());
            for k in 0..2 {
                for (c, &item) in slate.iter().enumerate() {
                    assert_eq!(rec.scores[[k, c]], full[[k, item]]);
                }
            }
        }
    }

    #[test]
    fn tied_scores_are_inner_products_with_embedding_rows() {
        let p = GruParams::<f64>::init(config(EmbeddingMode::Tied, 4, 3), 3).unwrap();
        let h = array![[0.1, -0.2, 0.3]];
        let full = p.score_all(h.view());
        for m in 0..4 {
            let want = h.row(0).dot(&p.w_out.row(m)) + p.b_out.as_ref().unwrap()[m];
            assert!((full[[0, m]] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_shapes_and_indices() {
        let p = GruParams::<f32>::zeros(config(EmbeddingMode::OneHot, 3, 2));
        let h = Array2::zeros((1, 2));
        assert!(matches!(
            p.forward_step(&[3], h.view(), &[false], &[0], None),
            Err(Error::IndexOutOfRange { index: 3, .. })
        ));
        assert!(matches!(
            p.forward_step(&[0, 1], h.view(), &[false, false], &[0], None),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn slate_only_output_rows_get_gradient() {
        let p = GruParams::<f64>::init(config(EmbeddingMode::OneHot, 6, 3), 4).unwrap();
        let h = Array2::zeros((2, 3));
        let rec = p.forward_step(&[0, 1], h.view(), &[true, true], &[2, 4], None).unwrap();
        let mut g = GruGrads::new(&p.config);
        let d = Array2::from_elem((2, 2), 0.5);
        p.backward_step(&rec, d.view(), &mut g);
        let mut touched = g.w_out.rows().to_vec();
        touched.sort();
        assert_eq!(touched, vec![2, 4]);
        let mut inputs = g.w_in.rows().to_vec();
        inputs.sort();
        assert_eq!(inputs, vec![0, 1]);
    }

    #[test]
    fn parameter_counts() {
        let sep = GruParams::<f32>::zeros(ModelConfig {
            embedding: EmbeddingMode::Separate,
            embedding_dim: 8,
            ..ModelConfig::new(50, 8)
        });
        let tied = GruParams::<f32>::zeros(ModelConfig {
            embedding: EmbeddingMode::Tied,
            ..ModelConfig::new(50, 8)
        });
        assert_eq!(sep.n_params() - tied.n_params(), 50 * 8);
    }

    #[test]
    fn hidden_state_stays_bounded() {
        let p = GruParams::<f32>::init(config(EmbeddingMode::OneHot, 20, 8), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut h = Array2::zeros((1, 8));
        for _ in 0..100_000 {
            let item = rng.random_range(0..20);
            let rec = p.forward_step(&[item], h.view(), &[false], &[], None).unwrap();
            h = rec.h_new;
        }
        assert!(h.iter().all(|x| x.is_finite() && x.abs() <= 1.0));
    }
}

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{init_parameters, LayerLayout, ParamLayout};
use super::scalar::{gemm, View};
use super::{ModelConfig, ModelError, Scalar};
use crate::encoding::{sinusoidal, PositionEncodingKind};
use crate::vocab::TokenId;

const LN_EPS: f64 = 1e-5;

/// A batch of variable-length sequences packed row after row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchInput {
    pub ids: Vec<TokenId>,
    /// Row offsets; sequence `s` spans `offsets[s]..offsets[s + 1]`.
    pub offsets: Vec<usize>,
    /// Stack-symbol ids per row for key/value position encodings. Empty
    /// when the model uses another encoding.
    pub symbols: Vec<Vec<TokenId>>,
}

impl BatchInput {
    pub fn new() -> Self {
        BatchInput { ids: Vec::new(), offsets: vec![0], symbols: Vec::new() }
    }

    /// A batch holding one sequence.
    pub fn single(ids: &[TokenId], symbols: &[Vec<TokenId>]) -> Self {
        let mut batch = Self::new();
        batch.push(ids, symbols);
        batch
    }

    /// Appends a sequence. `symbols` is either empty or one entry per id.
    pub fn push(&mut self, ids: &[TokenId], symbols: &[Vec<TokenId>]) {
        assert!(symbols.is_empty() || symbols.len() == ids.len(), "one stack per position");
        self.ids.extend_from_slice(ids);
        if symbols.is_empty() {
            self.symbols.extend(std::iter::repeat_n(Vec::new(), ids.len()));
        } else {
            self.symbols.extend_from_slice(symbols);
        }
        self.offsets.push(self.ids.len());
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn sequences(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn sequence(&self, s: usize) -> Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    /// Position of every row within its sequence.
    pub fn positions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.rows());
        for s in 0..self.sequences() {
            out.extend(0..self.sequence(s).len());
        }
        out
    }
}

/// Rows for which output logits are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadRows {
    All,
    /// Only the final row of each sequence (next-token prediction).
    LastPerSequence,
}

struct LayerCache<T> {
    xhat1: Vec<T>,
    rstd1: Vec<T>,
    a: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    att: Vec<T>,
    drop1: Option<Vec<T>>,
    xhat2: Vec<T>,
    rstd2: Vec<T>,
    c: Vec<T>,
    f: Vec<T>,
    g: Vec<T>,
    drop2: Option<Vec<T>>,
}

struct Cache<T> {
    emb_drop: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    xhatf: Vec<T>,
    rstdf: Vec<T>,
    hsel: Vec<T>,
}

/// Output of a forward pass. Holds activations for backpropagation when
/// requested.
pub struct ForwardPass<T> {
    /// Row-major logits, one row per entry of `rows`.
    pub logits: Vec<T>,
    /// Batch rows the logits belong to.
    pub rows: Vec<usize>,
    cache: Option<Cache<T>>,
}

/// Transformer parameters and configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub params: Vec<T>,
    sinusoid: Vec<T>,
}

impl<T: Scalar> Model<T> {
    /// A freshly initialized model, seeded from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let params = init_parameters(&layout, config.seed);
        Self::from_parts(config, params)
    }

    pub fn from_parts(config: ModelConfig, params: Vec<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(ModelError::GradientShape { got: params.len(), expected: layout.total });
        }
        let sinusoid = if config.pe_kind == PositionEncodingKind::Sinusoidal {
            sinusoidal(config.max_len, config.d_model)
        } else {
            Vec::new()
        };
        Ok(Model { config, layout, params, sinusoid })
    }

    pub fn num_parameters(&self) -> usize {
        self.layout.total
    }

    fn p(&self, r: &Range<usize>) -> &[T] {
        &self.params[r.clone()]
    }

    fn validate_input(&self, input: &BatchInput) -> Result<(), ModelError> {
        let size = self.config.vocab_size;
        for s in 0..input.sequences() {
            let len = input.sequence(s).len();
            if len > self.config.max_len {
                return Err(ModelError::TooLong { len, max_len: self.config.max_len });
            }
        }
        let in_range = |id: TokenId| if (id as usize) < size { Ok(()) } else { Err(ModelError::IdOutOfRange { id, size }) };
        for &id in &input.ids {
            in_range(id)?;
        }
        if self.config.pe_kind == PositionEncodingKind::KeyValue {
            for &id in input.symbols.iter().flatten() {
                in_range(id)?;
            }
        }
        Ok(())
    }

    /// Token embeddings plus position encodings, one row of `d_model` per
    /// input row.
    pub fn embed(&self, input: &BatchInput) -> Result<Vec<T>, ModelError> {
        self.validate_input(input)?;
        let d = self.config.d_model;
        let table = self.p(&self.layout.tok_emb);
        let mut x = vec![T::zero(); input.rows() * d];
        let positions = input.positions();
        for (r, &id) in input.ids.iter().enumerate() {
            let row = &mut x[r * d..(r + 1) * d];
            row.copy_from_slice(&table[id as usize * d..(id as usize + 1) * d]);
            let pe: Option<&[T]> = match self.config.pe_kind {
                PositionEncodingKind::KeyValue => {
                    for &sym in &input.symbols[r] {
                        add_into(row, &table[sym as usize * d..(sym as usize + 1) * d]);
                    }
                    None
                }
                PositionEncodingKind::AbsoluteLearned => {
                    let pos = self.layout.pos_emb.as_ref().expect("absolute table").start + positions[r] * d;
                    Some(&self.params[pos..pos + d])
                }
                PositionEncodingKind::Sinusoidal => Some(&self.sinusoid[positions[r] * d..(positions[r] + 1) * d]),
                PositionEncodingKind::None => None,
            };
            if let Some(pe) = pe {
                add_into(row, pe);
            }
        }
        Ok(x)
    }

    /// Logits for a single sequence, one row of `vocab_size` per position.
    pub fn logits(&self, ids: &[TokenId], symbols: &[Vec<TokenId>]) -> Result<Vec<T>, ModelError> {
        let input = BatchInput::single(ids, symbols);
        Ok(self.forward(&input, HeadRows::All, None, false)?.logits)
    }

    /// Runs the network. With `dropout_rng`, dropout is applied at the
    /// configured rate; without it the pass is deterministic.
    pub fn forward(
        &self,
        input: &BatchInput,
        head_rows: HeadRows,
        dropout_rng: Option<&mut ChaCha8Rng>,
        keep_cache: bool,
    ) -> Result<ForwardPass<T>, ModelError> {
        let cfg = &self.config;
        let (d, v, rows) = (cfg.d_model, cfg.vocab_size, input.rows());
        let mut x = self.embed(input)?;
        let mut rng = dropout_rng.filter(|_| cfg.dropout > 0.0);
        let emb_drop = rng.as_deref_mut().map(|r| dropout(&mut x, cfg.dropout, r));

        let mut layers = Vec::new();
        for layer in &self.layout.layers {
            let cache = self.layer_forward(layer, input, &mut x, rng.as_deref_mut());
            if keep_cache {
                layers.push(cache);
            }
        }

        let (hf, xhatf, rstdf) =
            layer_norm(&x, self.p(&self.layout.lnf_gain), self.p(&self.layout.lnf_bias), rows, d);
        let sel: Vec<usize> = match head_rows {
            HeadRows::All => (0..rows).collect(),
            HeadRows::LastPerSequence => {
                (0..input.sequences()).filter(|&s| !input.sequence(s).is_empty()).map(|s| input.offsets[s + 1] - 1).collect()
            }
        };
        let hsel: Vec<T> = if head_rows == HeadRows::All {
            hf
        } else {
            sel.iter().flat_map(|&r| hf[r * d..(r + 1) * d].iter().copied()).collect()
        };
        let mut logits = vec![T::zero(); sel.len() * v];
        gemm(View::dense(&hsel, sel.len(), d), View::dense(self.p(&self.layout.head), d, v), &mut logits, v, T::zero());
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(ModelError::NonFinite("logits"));
        }
        let cache = keep_cache.then_some(Cache { emb_drop, layers, xhatf, rstdf, hsel });
        Ok(ForwardPass { logits, rows: sel, cache })
    }

    fn layer_forward(
        &self,
        layer: &LayerLayout,
        input: &BatchInput,
        x: &mut [T],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> LayerCache<T> {
        let cfg = &self.config;
        let (d, rows, heads, dh) = (cfg.d_model, input.rows(), cfg.heads, cfg.head_dim());
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let (a, xhat1, rstd1) = layer_norm(x, self.p(&layer.ln1_gain), self.p(&layer.ln1_bias), rows, d);
        let mut qkv = bias_rows(self.p(&layer.qkv_bias), rows);
        gemm(View::dense(&a, rows, d), View::dense(self.p(&layer.qkv_weight), d, 3 * d), &mut qkv, 3 * d, T::one());

        let prob_len: usize = (0..input.sequences()).map(|s| heads * input.sequence(s).len().pow(2)).sum();
        let mut probs = vec![T::zero(); prob_len];
        let mut att = vec![T::zero(); rows * d];
        let mut poff = 0;
        for s in 0..input.sequences() {
            let seq = input.sequence(s);
            let (o, len) = (seq.start, seq.len());
            if len == 0 {
                continue;
            }
            for h in 0..heads {
                let p = &mut probs[poff..poff + len * len];
                let q = head_view(&qkv, o, len, 3 * d, h * dh, dh);
                let k = head_view(&qkv, o, len, 3 * d, d + h * dh, dh);
                let vv = head_view(&qkv, o, len, 3 * d, 2 * d + h * dh, dh);
                gemm(q, k.t(), p, len, T::zero());
                causal_softmax(p, len, scale);
                gemm(View::dense(p, len, len), vv, &mut att[o * d + h * dh..], d, T::zero());
                poff += len * len;
            }
        }

        let mut y = bias_rows(self.p(&layer.out_bias), rows);
        gemm(View::dense(&att, rows, d), View::dense(self.p(&layer.out_weight), d, d), &mut y, d, T::one());
        let drop1 = rng.as_deref_mut().map(|r| dropout(&mut y, cfg.dropout, r));
        add_into(x, &y);

        let (c, xhat2, rstd2) = layer_norm(x, self.p(&layer.ln2_gain), self.p(&layer.ln2_bias), rows, d);
        let mut f = bias_rows(self.p(&layer.fc_bias), rows);
        gemm(View::dense(&c, rows, d), View::dense(self.p(&layer.fc_weight), d, 4 * d), &mut f, 4 * d, T::one());
        let g: Vec<T> = f.iter().map(|&v| gelu(v)).collect();
        let mut m = bias_rows(self.p(&layer.proj_bias), rows);
        gemm(View::dense(&g, rows, 4 * d), View::dense(self.p(&layer.proj_weight), 4 * d, d), &mut m, d, T::one());
        let drop2 = rng.map(|r| dropout(&mut m, cfg.dropout, r));
        add_into(x, &m);

        LayerCache { xhat1, rstd1, a, qkv, probs, att, drop1, xhat2, rstd2, c, f, g, drop2 }
    }

    /// Gradient of a scalar objective with respect to all parameters, given
    /// its gradient with respect to the logits of `pass`.
    pub fn backward(&self, input: &BatchInput, pass: &ForwardPass<T>, dlogits: &[T]) -> Vec<T> {
        let cache = pass.cache.as_ref().expect("forward pass was run without keep_cache");
        let cfg = &self.config;
        let (d, v, rows) = (cfg.d_model, cfg.vocab_size, input.rows());
        let nsel = pass.rows.len();
        assert_eq!(dlogits.len(), nsel * v, "dlogits shape");
        let mut grads = vec![T::zero(); self.layout.total];

        // output projection
        gemm(
            View::dense(&cache.hsel, nsel, d).t(),
            View::dense(dlogits, nsel, v),
            &mut grads[self.layout.head.clone()],
            v,
            T::one(),
        );
        let mut dhsel = vec![T::zero(); nsel * d];
        gemm(View::dense(dlogits, nsel, v), View::dense(self.p(&self.layout.head), d, v).t(), &mut dhsel, d, T::zero());
        let mut dhf = vec![T::zero(); rows * d];
        for (i, &r) in pass.rows.iter().enumerate() {
            dhf[r * d..(r + 1) * d].copy_from_slice(&dhsel[i * d..(i + 1) * d]);
        }
        let mut dx = vec![T::zero(); rows * d];
        layer_norm_backward(
            &dhf,
            &cache.xhatf,
            &cache.rstdf,
            self.p(&self.layout.lnf_gain),
            &mut grads,
            (&self.layout.lnf_gain, &self.layout.lnf_bias),
            &mut dx,
            d,
        );

        for (layer, lc) in self.layout.layers.iter().zip(&cache.layers).rev() {
            self.layer_backward(layer, lc, input, &mut dx, &mut grads);
        }

        if let Some(mask) = &cache.emb_drop {
            mul_into(&mut dx, mask);
        }
        let positions = input.positions();
        let emb = self.layout.tok_emb.start;
        for (r, &id) in input.ids.iter().enumerate() {
            let src = &dx[r * d..(r + 1) * d];
            add_into(&mut grads[emb + id as usize * d..emb + (id as usize + 1) * d], src);
            match cfg.pe_kind {
                PositionEncodingKind::KeyValue => {
                    for &sym in &input.symbols[r] {
                        add_into(&mut grads[emb + sym as usize * d..emb + (sym as usize + 1) * d], src);
                    }
                }
                PositionEncodingKind::AbsoluteLearned => {
                    let pos = self.layout.pos_emb.as_ref().expect("absolute table").start + positions[r] * d;
                    add_into(&mut grads[pos..pos + d], src);
                }
                PositionEncodingKind::Sinusoidal | PositionEncodingKind::None => {}
            }
        }
        grads
    }

    fn layer_backward(
        &self,
        layer: &LayerLayout,
        lc: &LayerCache<T>,
        input: &BatchInput,
        dx: &mut [T],
        grads: &mut [T],
    ) {
        let cfg = &self.config;
        let (d, rows, heads, dh) = (cfg.d_model, input.rows(), cfg.heads, cfg.head_dim());
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        // MLP branch
        let mut dm = dx.to_vec();
        if let Some(mask) = &lc.drop2 {
            mul_into(&mut dm, mask);
        }
        bias_grad(&dm, rows, d, &mut grads[layer.proj_bias.clone()]);
        gemm(View::dense(&lc.g, rows, 4 * d).t(), View::dense(&dm, rows, d), &mut grads[layer.proj_weight.clone()], d, T::one());
        let mut df = vec![T::zero(); rows * 4 * d];
        gemm(View::dense(&dm, rows, d), View::dense(self.p(&layer.proj_weight), 4 * d, d).t(), &mut df, 4 * d, T::zero());
        for (g, &f) in df.iter_mut().zip(&lc.f) {
            *g *= gelu_grad(f);
        }
        bias_grad(&df, rows, 4 * d, &mut grads[layer.fc_bias.clone()]);
        gemm(View::dense(&lc.c, rows, d).t(), View::dense(&df, rows, 4 * d), &mut grads[layer.fc_weight.clone()], 4 * d, T::one());
        let mut dc = vec![T::zero(); rows * d];
        gemm(View::dense(&df, rows, 4 * d), View::dense(self.p(&layer.fc_weight), d, 4 * d).t(), &mut dc, d, T::zero());
        layer_norm_backward(&dc, &lc.xhat2, &lc.rstd2, self.p(&layer.ln2_gain), grads, (&layer.ln2_gain, &layer.ln2_bias), dx, d);

        // attention branch
        let mut dy = dx.to_vec();
        if let Some(mask) = &lc.drop1 {
            mul_into(&mut dy, mask);
        }
        bias_grad(&dy, rows, d, &mut grads[layer.out_bias.clone()]);
        gemm(View::dense(&lc.att, rows, d).t(), View::dense(&dy, rows, d), &mut grads[layer.out_weight.clone()], d, T::one());
        let mut datt = vec![T::zero(); rows * d];
        gemm(View::dense(&dy, rows, d), View::dense(self.p(&layer.out_weight), d, d).t(), &mut datt, d, T::zero());

        let mut dqkv = vec![T::zero(); rows * 3 * d];
        let mut poff = 0;
        let mut dp = Vec::new();
        for s in 0..input.sequences() {
            let seq = input.sequence(s);
            let (o, len) = (seq.start, seq.len());
            if len == 0 {
                continue;
            }
            dp.resize(len * len, T::zero());
            for h in 0..heads {
                let p = &lc.probs[poff..poff + len * len];
                let q = head_view(&lc.qkv, o, len, 3 * d, h * dh, dh);
                let k = head_view(&lc.qkv, o, len, 3 * d, d + h * dh, dh);
                let vv = head_view(&lc.qkv, o, len, 3 * d, 2 * d + h * dh, dh);
                let dout = head_view(&datt, o, len, d, h * dh, dh);
                gemm(dout, vv.t(), &mut dp, len, T::zero());
                gemm(View::dense(p, len, len).t(), dout, &mut dqkv[o * 3 * d + 2 * d + h * dh..], 3 * d, T::zero());
                for i in 0..len {
                    let prow = &p[i * len..(i + 1) * len];
                    let drow = &mut dp[i * len..(i + 1) * len];
                    let dot: T = (0..=i).map(|j| prow[j] * drow[j]).sum();
                    for j in 0..=i {
                        drow[j] = prow[j] * (drow[j] - dot) * scale;
                    }
                    for slot in drow.iter_mut().skip(i + 1) {
                        *slot = T::zero();
                    }
                }
                gemm(View::dense(&dp, len, len), k, &mut dqkv[o * 3 * d + h * dh..], 3 * d, T::zero());
                gemm(View::dense(&dp, len, len).t(), q, &mut dqkv[o * 3 * d + d + h * dh..], 3 * d, T::zero());
                poff += len * len;
            }
        }
        bias_grad(&dqkv, rows, 3 * d, &mut grads[layer.qkv_bias.clone()]);
        gemm(View::dense(&lc.a, rows, d).t(), View::dense(&dqkv, rows, 3 * d), &mut grads[layer.qkv_weight.clone()], 3 * d, T::one());
        let mut da = vec![T::zero(); rows * d];
        gemm(View::dense(&dqkv, rows, 3 * d), View::dense(self.p(&layer.qkv_weight), d, 3 * d).t(), &mut da, d, T::zero());
        layer_norm_backward(&da, &lc.xhat1, &lc.rstd1, self.p(&layer.ln1_gain), grads, (&layer.ln1_gain, &layer.ln1_bias), dx, d);
    }
}

fn head_view<T>(data: &[T], row0: usize, len: usize, rs: usize, col0: usize, width: usize) -> View<'_, T> {
    View { data: &data[row0 * rs + col0..], rows: len, cols: width, rs, cs: 1 }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn mul_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d *= s;
    }
}

fn bias_rows<T: Scalar>(bias: &[T], rows: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * bias.len());
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    out
}

fn bias_grad<T: Scalar>(dy: &[T], rows: usize, cols: usize, dbias: &mut [T]) {
    for r in 0..rows {
        add_into(dbias, &dy[r * cols..(r + 1) * cols]);
    }
}

/// Inverted dropout in place; returns the per-element scale factors.
fn dropout<T: Scalar>(x: &mut [T], rate: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = x.iter().map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect();
    mul_into(x, &mask);
    mask
}

/// Row-wise softmax of `scale·scores` over columns `0..=i` of row `i`;
/// later columns are zeroed.
fn causal_softmax<T: Scalar>(scores: &mut [T], len: usize, scale: T) {
    for i in 0..len {
        let row = &mut scores[i * len..(i + 1) * len];
        let max = row[..=i].iter().fold(T::neg_infinity(), |m, &v| m.max(v * scale));
        let mut sum = T::zero();
        for v in &mut row[..=i] {
            *v = (*v * scale - max).exp();
            sum += *v;
        }
        for v in &mut row[..=i] {
            *v = *v / sum;
        }
        for v in &mut row[i + 1..] {
            *v = T::zero();
        }
    }
}

fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], rows: usize, d: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); rows * d];
    let mut xhat = vec![T::zero(); rows * d];
    let mut rstd = vec![T::zero(); rows];
    let n = T::from_f64(d as f64);
    let eps = T::from_f64(LN_EPS);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = (var + eps).sqrt().recip();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (y, xhat, rstd)
}

/// Accumulates gain/bias gradients into `grads` and the input gradient into `dx`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gain: &[T],
    grads: &mut [T],
    (gain_range, bias_range): (&Range<usize>, &Range<usize>),
    dx: &mut [T],
    d: usize,
) {
    let n = T::from_f64(d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rstd.len() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xr = &xhat[r * d..(r + 1) * d];
        for j in 0..d {
            grads[gain_range.start + j] += dyr[j] * xr[j];
            grads[bias_range.start + j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / n;
        let mean_dx = dxhat.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() / n;
        let out = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            out[j] += rstd[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::from_f64(3.0) * a * x * x)
}

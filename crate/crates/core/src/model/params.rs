use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Scalar};
use crate::encoding::PositionEncodingKind;

/// Standard deviation of initial weight matrices.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub ln1_gain: Range<usize>,
    pub ln1_bias: Range<usize>,
    pub qkv_weight: Range<usize>,
    pub qkv_bias: Range<usize>,
    pub out_weight: Range<usize>,
    pub out_bias: Range<usize>,
    pub ln2_gain: Range<usize>,
    pub ln2_bias: Range<usize>,
    pub fc_weight: Range<usize>,
    pub fc_bias: Range<usize>,
    pub proj_weight: Range<usize>,
    pub proj_bias: Range<usize>,
}

/// Where each named tensor lives inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub entries: Vec<TensorEntry>,
    pub tok_emb: Range<usize>,
    pub pos_emb: Option<Range<usize>>,
    pub layers: Vec<LayerLayout>,
    pub lnf_gain: Range<usize>,
    pub lnf_bias: Range<usize>,
    pub head: Range<usize>,
    pub total: usize,
}

struct Builder {
    entries: Vec<TensorEntry>,
    next: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> Range<usize> {
        let size: usize = shape.iter().product();
        let range = self.next..self.next + size;
        self.next += size;
        self.entries.push(TensorEntry { name, shape: shape.to_vec(), range: range.clone(), init });
        range
    }
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let (d, v) = (config.d_model, config.vocab_size);
        let mut b = Builder { entries: Vec::new(), next: 0 };
        let tok_emb = b.add("tok_emb".into(), &[v, d], Init::Normal);
        let pos_emb = (config.pe_kind == PositionEncodingKind::AbsoluteLearned)
            .then(|| b.add("pos_emb".into(), &[config.max_len, d], Init::Normal));
        let layers = (0..config.layers)
            .map(|l| {
                let p = |s: &str| format!("layers.{l}.{s}");
                LayerLayout {
                    ln1_gain: b.add(p("ln1.gain"), &[d], Init::Ones),
                    ln1_bias: b.add(p("ln1.bias"), &[d], Init::Zeros),
                    qkv_weight: b.add(p("attn.qkv.weight"), &[d, 3 * d], Init::Normal),
                    qkv_bias: b.add(p("attn.qkv.bias"), &[3 * d], Init::Zeros),
                    out_weight: b.add(p("attn.out.weight"), &[d, d], Init::Normal),
                    out_bias: b.add(p("attn.out.bias"), &[d], Init::Zeros),
                    ln2_gain: b.add(p("ln2.gain"), &[d], Init::Ones),
                    ln2_bias: b.add(p("ln2.bias"), &[d], Init::Zeros),
                    fc_weight: b.add(p("mlp.fc.weight"), &[d, 4 * d], Init::Normal),
                    fc_bias: b.add(p("mlp.fc.bias"), &[4 * d], Init::Zeros),
                    proj_weight: b.add(p("mlp.proj.weight"), &[4 * d, d], Init::Normal),
                    proj_bias: b.add(p("mlp.proj.bias"), &[d], Init::Zeros),
                }
            })
            .collect();
        let lnf_gain = b.add("ln_f.gain".into(), &[d], Init::Ones);
        let lnf_bias = b.add("ln_f.bias".into(), &[d], Init::Zeros);
        let head = b.add("head.weight".into(), &[d, v], Init::Normal);
        ParamLayout { entries: b.entries, tok_emb, pos_emb, layers, lnf_gain, lnf_bias, head, total: b.next }
    }

    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Draws initial parameters: N(0, 0.02) weights, zero biases, unit gains.
/// Values are drawn in f64 and rounded, so f32 and f64 models from the same
/// seed agree up to rounding.
pub fn init_parameters<T: Scalar>(layout: &ParamLayout, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut data = vec![T::zero(); layout.total];
    for entry in &layout.entries {
        for slot in &mut data[entry.range.clone()] {
            *slot = match entry.init {
                Init::Normal => T::from_f64(normal.sample(&mut rng)),
                Init::Zeros => T::zero(),
                Init::Ones => T::one(),
            };
        }
    }
    data
}

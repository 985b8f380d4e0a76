//! Decoder-only transformer over token ids with a grammar-masked output
//! distribution.
//!
//! Blocks are pre-norm (LayerNorm → causal self-attention → residual,
//! LayerNorm → GELU MLP of width 4d → residual), followed by a final
//! LayerNorm and an untied output projection.

mod checkpoint;
mod loss;
mod params;
mod scalar;
mod transformer;

use thiserror::Error;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, FORMAT_VERSION, MANIFEST_FILE, VOCAB_FILE, WEIGHTS_FILE,
};
pub use loss::{masked_cross_entropy, masked_distribution, LossError, LossOutput};
pub use params::{init_parameters, Init, LayerLayout, ParamLayout, TensorEntry, INIT_STD};
pub use scalar::Scalar;
pub use transformer::{BatchInput, ForwardPass, HeadRows, Model};

use crate::encoding::PositionEncodingKind;
use crate::vocab::TokenId;

pub const MAX_LAYERS: usize = 1024;
/// Upper bound on parameters and on the positional table size.
pub const MAX_PARAMETERS: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    /// Longest sequence the model accepts.
    pub max_len: usize,
    pub vocab_size: usize,
    pub pe_kind: PositionEncodingKind,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            heads: 4,
            layers: 4,
            max_len: 256,
            vocab_size: 8,
            pe_kind: PositionEncodingKind::KeyValue,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.vocab_size < 8 {
            return bad(format!("vocab_size {} must be at least 8", self.vocab_size));
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        if self.layers > MAX_LAYERS {
            return bad(format!("{} layers exceed the limit of {MAX_LAYERS}", self.layers));
        }
        let table = self.max_len.checked_mul(self.d_model);
        match (self.parameter_count(), table) {
            (Some(n), Some(t)) if n <= MAX_PARAMETERS && t <= MAX_PARAMETERS => Ok(()),
            _ => bad(format!("model exceeds {MAX_PARAMETERS} parameters")),
        }
    }

    /// Number of trainable parameters, or `None` on overflow.
    pub fn parameter_count(&self) -> Option<usize> {
        let (d, v) = (self.d_model, self.vocab_size);
        let d2 = d.checked_mul(d)?;
        let per_layer = d2.checked_mul(12)?.checked_add(d.checked_mul(13)?)?;
        let pos = match self.pe_kind {
            PositionEncodingKind::AbsoluteLearned => self.max_len.checked_mul(d)?,
            _ => 0,
        };
        v.checked_mul(d)?
            .checked_mul(2)?
            .checked_add(pos)?
            .checked_add(per_layer.checked_mul(self.layers)?)?
            .checked_add(2 * d)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("token id {id} is outside the vocabulary of {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("sequence of {len} tokens exceeds the model limit of {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("gradient length {got} does not match {expected} parameters")]
    GradientShape { got: usize, expected: usize },
}

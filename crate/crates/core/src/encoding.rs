//! Position encodings added to token embeddings.
//!
//! The key/value encoding of a position is the sum of the token embeddings
//! of the stack symbols recorded by the automaton at that position, so it
//! depends on the key path and array slot of a token and not on where the
//! token sits in the sequence.

use std::fmt;
use std::str::FromStr;

use num_traits::Float;
use thiserror::Error;

use crate::automaton::RecordedStack;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PositionEncodingKind {
    /// Sum of stack-symbol embeddings.
    KeyValue,
    /// Learned table indexed by absolute position.
    AbsoluteLearned,
    /// Fixed sine/cosine encoding with base 10000.
    Sinusoidal,
    None,
}

impl PositionEncodingKind {
    pub const ALL: [PositionEncodingKind; 4] = [
        PositionEncodingKind::KeyValue,
        PositionEncodingKind::AbsoluteLearned,
        PositionEncodingKind::Sinusoidal,
        PositionEncodingKind::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PositionEncodingKind::KeyValue => "kvpe",
            PositionEncodingKind::AbsoluteLearned => "absolute",
            PositionEncodingKind::Sinusoidal => "sinusoidal",
            PositionEncodingKind::None => "none",
        }
    }
}

impl fmt::Display for PositionEncodingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown position encoding {0:?} (expected kvpe, absolute, sinusoidal or none)")]
pub struct UnknownEncoding(pub String);

impl FromStr for PositionEncodingKind {
    type Err = UnknownEncoding;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| UnknownEncoding(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodingError {
    #[error("position {position} is outside the learned table of {rows} rows")]
    PositionOutOfRange { position: usize, rows: usize },
    #[error("symbol id {id} is outside an embedding table of {rows} rows")]
    SymbolOutOfRange { id: TokenId, rows: usize },
}

/// Maps each recorded stack to embedding row ids. Symbols that did not make
/// it into the vocabulary use the `Unknown` row.
pub fn stack_symbol_ids(trace: &[RecordedStack], vocab: &Vocabulary) -> Vec<Vec<TokenId>> {
    trace
        .iter()
        .map(|stack| stack.iter().map(|sym| vocab.id_or_unknown(&sym.token())).collect())
        .collect()
}

/// Key/value position encodings, one row of `dim` values per position.
/// `table` is the row-major token embedding matrix.
pub fn kvpe<T: Float>(symbol_ids: &[Vec<TokenId>], table: &[T], dim: usize) -> Result<Vec<T>, EncodingError> {
    let rows = table.len() / dim;
    let mut out = vec![T::zero(); symbol_ids.len() * dim];
    for (position, ids) in symbol_ids.iter().enumerate() {
        let dst = &mut out[position * dim..(position + 1) * dim];
        for &id in ids {
            if id as usize >= rows {
                return Err(EncodingError::SymbolOutOfRange { id, rows });
            }
            let src = &table[id as usize * dim..(id as usize + 1) * dim];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }
    Ok(out)
}

/// Value of the fixed sinusoidal encoding at one position and channel.
pub fn sinusoidal_value(position: usize, channel: usize, dim: usize) -> f64 {
    let pair = (channel / 2) as f64;
    let angle = position as f64 / 10000f64.powf(2.0 * pair / dim as f64);
    if channel.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

pub fn sinusoidal<T: Float>(len: usize, dim: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(len * dim);
    for position in 0..len {
        for channel in 0..dim {
            out.push(T::from(sinusoidal_value(position, channel, dim)).expect("finite"));
        }
    }
    out
}

/// Position vectors for the non key/value encodings. `learned` is the
/// absolute position table (`rows × dim`), required for `AbsoluteLearned`.
pub fn baseline_pe<T: Float>(
    kind: PositionEncodingKind,
    len: usize,
    dim: usize,
    learned: Option<&[T]>,
) -> Result<Vec<T>, EncodingError> {
    match kind {
        PositionEncodingKind::None => Ok(vec![T::zero(); len * dim]),
        PositionEncodingKind::Sinusoidal => Ok(sinusoidal(len, dim)),
        PositionEncodingKind::AbsoluteLearned => {
            let table = learned.unwrap_or(&[]);
            let rows = table.len() / dim;
            if len > rows {
                return Err(EncodingError::PositionOutOfRange { position: rows, rows });
            }
            Ok(table[..len * dim].to_vec())
        }
        PositionEncodingKind::KeyValue => panic!("key/value encodings need a stack trace; use kvpe"),
    }
}

//! Generative modeling of JSON documents with a decoder-only transformer.
//!
//! Documents are tokenized into key, value and grammar tokens. A pushdown
//! automaton tracks the key path of every token; its stack drives both the
//! key/value position encoding and the masks that remove grammatically
//! invalid tokens from the output distribution during training and decoding.

pub mod automaton;
pub mod datagen;
pub mod document;
pub mod encoding;
pub mod experiment;
pub mod inference;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod tokenizer;
pub mod training;
pub mod vocab;

pub use automaton::{accepts, stack_trace, valid_next, AutomatonState, GrammarMasks, StackSymbol, ValidSet};
pub use document::{load_jsonl, parse_json, serialize_json, Document, JsonError, OnError};
pub use encoding::PositionEncodingKind;
pub use model::{Checkpoint, Model, ModelConfig};
pub use tokenizer::{detokenize, tokenize, Token};
pub use vocab::{TokenId, Vocabulary};

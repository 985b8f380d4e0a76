//! Grammar-constrained decoding: field prediction, auto-completion and
//! classification.
//!
//! Every step masks the output distribution with the automaton's valid set,
//! so decoded sequences always deserialize.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::automaton::{valid_next, AutomatonState, GrammarMasks, TransitionError};
use crate::document::{serialize_json, Document};
use crate::model::{masked_distribution, BatchInput, HeadRows, Model, ModelError, Scalar};
use crate::tokenizer::{detokenize, detokenize_value, tokenize, DetokenizeError, Token, TokenizeError};
use crate::vocab::{TokenId, Vocabulary};

/// Sequences decoded together in one forward pass.
pub const DECODE_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    /// Argmax of the masked distribution; ties go to the lowest id.
    Greedy,
    Sampled { temperature: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub decoding: Decoding,
    /// Forbid repeating a key within one object.
    pub no_duplicate_keys: bool,
    pub max_new_tokens: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { decoding: Decoding::Greedy, no_duplicate_keys: true, max_new_tokens: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error("prompt rejected by the grammar: {0}")]
    Rejected(#[from] TransitionError),
    #[error("{0} is not in the vocabulary")]
    OutOfVocabulary(Token),
    #[error("target key {0:?} already present in the context")]
    TargetInContext(String),
    #[error("sequence of {len} tokens exceeds the model limit of {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("no complete value within {0} new tokens")]
    MaxNewTokens(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Detokenize(#[from] DetokenizeError),
    #[error("document has no top-level key {0:?}")]
    MissingTarget(String),
}

/// A context document and the top-level key whose value is to be predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub context: Document,
    pub target: String,
}

impl Prompt {
    pub fn new(context: Document, target: impl Into<String>) -> Result<Self, InferenceError> {
        let target = target.into();
        if !context.is_object() {
            return Err(TokenizeError::NotAnObject.into());
        }
        if context.get(&target).is_some() {
            return Err(InferenceError::TargetInContext(target));
        }
        Ok(Prompt { context, target })
    }

    /// Splits `doc` into a prompt without `target` and the true value.
    pub fn from_document(doc: &Document, target: &str) -> Result<(Self, Document), InferenceError> {
        let mut context = doc.clone();
        let truth = context.remove(target).ok_or_else(|| InferenceError::MissingTarget(target.to_string()))?;
        Ok((Prompt::new(context, target)?, truth))
    }

    /// `Start`, the context pairs in their given order, then the target key.
    pub fn tokens(&self) -> Result<Vec<Token>, InferenceError> {
        let mut tokens = tokenize(&self.context)?;
        tokens.pop();
        tokens.push(Token::Key(self.target.clone()));
        Ok(tokens)
    }
}

enum Goal {
    /// Stop once the stack is shallower than this depth.
    Value { depth: usize },
    Document,
}

struct Stream {
    state: AutomatonState,
    ids: Vec<TokenId>,
    symbols: Vec<Vec<TokenId>>,
    generated: Vec<Token>,
    goal: Goal,
    rng: Option<ChaCha8Rng>,
}

impl Stream {
    fn start(prefix: &[Token], vocab: &Vocabulary, options: &DecodeOptions, goal: Goal, index: u64) -> Result<Self, InferenceError> {
        let mut state = if options.no_duplicate_keys { AutomatonState::with_unique_keys() } else { AutomatonState::new() };
        let mut ids = Vec::with_capacity(prefix.len() + 8);
        let mut symbols = Vec::with_capacity(prefix.len() + 8);
        for tok in prefix {
            let id = match tok {
                Token::Key(_) | Token::Array(_) => vocab.id(tok).ok_or_else(|| InferenceError::OutOfVocabulary(tok.clone()))?,
                _ => vocab.id_or_unknown(tok),
            };
            let stack = state.step(tok)?;
            ids.push(id);
            symbols.push(stack.iter().map(|s| vocab.id_or_unknown(&s.token())).collect());
        }
        let goal = match goal {
            Goal::Value { .. } => Goal::Value { depth: state.depth() },
            Goal::Document => Goal::Document,
        };
        let rng = match options.decoding {
            Decoding::Greedy => None,
            Decoding::Sampled { seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(index);
                Some(rng)
            }
        };
        let stream = Stream { state, ids, symbols, generated: Vec::new(), goal, rng };
        if stream.finished() {
            return Err(InferenceError::MaxNewTokens(0));
        }
        Ok(stream)
    }

    fn finished(&self) -> bool {
        match self.goal {
            Goal::Value { depth } => self.state.depth() < depth,
            Goal::Document => self.state.is_accepted(),
        }
    }

    fn pick<T: Scalar>(&mut self, logits: &[T], mask: &[bool], decoding: Decoding) -> Result<TokenId, InferenceError> {
        match (decoding, self.rng.as_mut()) {
            (Decoding::Sampled { temperature, .. }, Some(rng)) => {
                let scaled: Vec<f64> = logits.iter().map(|l| Scalar::to_f64(*l) / temperature).collect();
                let probs = masked_distribution(&scaled, mask).map_err(|_| ModelError::NonFinite("masked distribution"))?;
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut last = None;
                for (id, &p) in probs.iter().enumerate() {
                    if p > 0.0 {
                        acc += p;
                        last = Some(id);
                        if u < acc {
                            return Ok(id as TokenId);
                        }
                    }
                }
                Ok(last.expect("mask has a valid token") as TokenId)
            }
            _ => {
                let mut best: Option<(usize, T)> = None;
                for (id, (&l, &ok)) in logits.iter().zip(mask).enumerate() {
                    if ok && best.is_none_or(|(_, b)| l > b) {
                        best = Some((id, l));
                    }
                }
                Ok(best.expect("mask has a valid token").0 as TokenId)
            }
        }
    }

    fn push(&mut self, id: TokenId, vocab: &Vocabulary) -> Result<(), InferenceError> {
        let tok = vocab.token(id).expect("id from the vocabulary").clone();
        let stack = self.state.step(&tok)?;
        self.ids.push(id);
        self.symbols.push(stack.iter().map(|s| vocab.id_or_unknown(&s.token())).collect());
        self.generated.push(tok);
        Ok(())
    }
}

/// Decodes every stream to completion, chunk by chunk.
fn run<T: Scalar>(
    model: &Model<T>,
    vocab: &Vocabulary,
    options: &DecodeOptions,
    streams: Vec<Result<Stream, InferenceError>>,
) -> Vec<Result<Stream, InferenceError>> {
    let masks = GrammarMasks::new(vocab);
    let mut results: Vec<Result<Stream, InferenceError>> = streams;
    let v = model.config.vocab_size;
    let mut active: Vec<usize> = (0..results.len()).filter(|&i| results[i].is_ok()).collect();
    while !active.is_empty() {
        for chunk in active.chunks(DECODE_CHUNK) {
            let mut batch = BatchInput::new();
            let mut members = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let Ok(stream) = &results[i] else { continue };
                if stream.ids.len() > model.config.max_len {
                    results[i] = Err(InferenceError::TooLong { len: stream.ids.len(), max_len: model.config.max_len });
                    continue;
                }
                batch.push(&stream.ids, &stream.symbols);
                members.push(i);
            }
            if members.is_empty() {
                continue;
            }
            let pass = match model.forward(&batch, HeadRows::LastPerSequence, None, false) {
                Ok(pass) => pass,
                Err(e) => {
                    for i in members {
                        results[i] = Err(e.clone().into());
                    }
                    continue;
                }
            };
            for (row, i) in members.into_iter().enumerate() {
                let Ok(stream) = &mut results[i] else { unreachable!() };
                let mask = valid_next(&stream.state, vocab, &masks);
                let logits = &pass.logits[row * v..(row + 1) * v];
                let outcome = stream.pick(logits, &mask, options.decoding).and_then(|id| stream.push(id, vocab));
                if let Err(e) = outcome {
                    results[i] = Err(e);
                } else if !stream.finished() && stream.generated.len() >= options.max_new_tokens {
                    results[i] = Err(InferenceError::MaxNewTokens(options.max_new_tokens));
                }
            }
        }
        active.retain(|&i| matches!(&results[i], Ok(s) if !s.finished()));
    }
    results
}

/// Predicts the value of each prompt's target key.
pub fn predict_fields<T: Scalar>(
    model: &Model<T>,
    vocab: &Vocabulary,
    prompts: &[Prompt],
    options: &DecodeOptions,
) -> Vec<Result<Document, InferenceError>> {
    let streams = prompts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let tokens = p.tokens()?;
            if tokens.len() > model.config.max_len {
                return Err(InferenceError::TooLong { len: tokens.len(), max_len: model.config.max_len });
            }
            Stream::start(&tokens, vocab, options, Goal::Value { depth: 0 }, i as u64)
        })
        .collect();
    run(model, vocab, options, streams)
        .into_iter()
        .map(|r| r.and_then(|s| Ok(detokenize_value(&s.generated)?)))
        .collect()
}

pub fn predict_field<T: Scalar>(
    model: &Model<T>,
    vocab: &Vocabulary,
    prompt: &Prompt,
    options: &DecodeOptions,
) -> Result<Document, InferenceError> {
    predict_fields(model, vocab, std::slice::from_ref(prompt), options).pop().expect("one result")
}

/// Continues a valid token prefix until the document is complete.
pub fn autocomplete<T: Scalar>(
    model: &Model<T>,
    vocab: &Vocabulary,
    prefix: &[Token],
    options: &DecodeOptions,
) -> Result<Document, InferenceError> {
    let stream = Stream::start(prefix, vocab, options, Goal::Document, 0)?;
    let done = run(model, vocab, options, vec![Ok(stream)]).pop().expect("one result")?;
    let mut tokens = prefix.to_vec();
    tokens.extend(done.generated);
    Ok(detokenize(&tokens)?)
}

/// Samples or greedily decodes `count` documents from `[START]`. Stream `i`
/// uses its own random stream, so results do not depend on `count`.
pub fn generate<T: Scalar>(
    model: &Model<T>,
    vocab: &Vocabulary,
    count: usize,
    options: &DecodeOptions,
) -> Vec<Result<Document, InferenceError>> {
    let streams = (0..count).map(|i| Stream::start(&[Token::Start], vocab, options, Goal::Document, i as u64)).collect();
    run(model, vocab, options, streams)
        .into_iter()
        .map(|r| {
            r.and_then(|s| {
                let mut tokens = vec![Token::Start];
                tokens.extend(s.generated);
                Ok(detokenize(&tokens)?)
            })
        })
        .collect()
}

/// Whether a prediction matches the truth. Arrays compare as sets of
/// elements, ignoring duplicates and order.
pub fn labels_match(truth: &Document, prediction: &Document) -> bool {
    match (truth, prediction) {
        (Document::Array(t), Document::Array(p)) => label_set(t) == label_set(p),
        _ => truth == prediction,
    }
}

/// Elements of an array label as a set of canonical serializations.
pub fn label_set(items: &[Document]) -> BTreeSet<String> {
    items.iter().map(serialize_json).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub truth: Document,
    /// `None` when the instance could not be decoded (for example because it
    /// is too long or its context uses unknown keys).
    pub prediction: Option<Document>,
    pub error: Option<InferenceError>,
    pub correct: bool,
}

/// Predicts `target` for every document (which must contain it) and
/// compares against the stored value. Undecodable instances count as
/// incorrect.
pub fn classify_all<T: Scalar>(
    model: &Model<T>,
    vocab: &Vocabulary,
    docs: &[Document],
    target: &str,
    options: &DecodeOptions,
) -> Result<Vec<Classification>, InferenceError> {
    let mut prompts = Vec::with_capacity(docs.len());
    let mut truths = Vec::with_capacity(docs.len());
    for doc in docs {
        let (prompt, truth) = Prompt::from_document(doc, target)?;
        prompts.push(prompt);
        truths.push(truth);
    }
    Ok(predict_fields(model, vocab, &prompts, options)
        .into_iter()
        .zip(truths)
        .map(|(result, truth)| match result {
            Ok(prediction) => {
                Classification { correct: labels_match(&truth, &prediction), truth, prediction: Some(prediction), error: None }
            }
            Err(e) => Classification { truth, prediction: None, error: Some(e), correct: false },
        })
        .collect())
}

pub fn classify<T: Scalar>(
    model: &Model<T>,
    vocab: &Vocabulary,
    doc: &Document,
    target: &str,
    options: &DecodeOptions,
) -> Result<Classification, InferenceError> {
    Ok(classify_all(model, vocab, std::slice::from_ref(doc), target, options)?.pop().expect("one result"))
}

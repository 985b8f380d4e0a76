//! Dataset preparation: sibling shuffling, permutation upscaling, splitting,
//! encoding and batching.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::automaton::{AutomatonState, ValidSet};
use crate::document::Document;
use crate::encoding::stack_symbol_ids;
use crate::model::BatchInput;
use crate::tokenizer::{tokenize, Token, TokenizeError};
use crate::vocab::{TokenId, Vocabulary, UNKNOWN};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("document {index}: {source}")]
    Tokenize { index: usize, source: TokenizeError },
    #[error("document {index}: {len} tokens exceed the limit of {limit}")]
    Overlong { index: usize, len: usize, limit: usize },
    #[error("split fraction {0} must lie strictly between 0 and 1")]
    Fraction(f64),
    #[error("split of {total} documents at {fraction} leaves one side empty")]
    EmptySide { total: usize, fraction: f64 },
    #[error("cannot batch an empty corpus")]
    EmptyCorpus,
    #[error("upscale factor must be at least 1")]
    Factor,
}

/// Recursively permutes the key/value pairs of every object uniformly at
/// random. Array elements keep their order; their contents are shuffled.
pub fn shuffle_with<R: Rng>(doc: &Document, rng: &mut R) -> Document {
    match doc {
        Document::Object(pairs) => {
            let mut out: Vec<(String, Document)> = pairs.iter().map(|(k, v)| (k.clone(), shuffle_with(v, rng))).collect();
            out.shuffle(rng);
            Document::Object(out)
        }
        Document::Array(items) => Document::Array(items.iter().map(|v| shuffle_with(v, rng)).collect()),
        other => other.clone(),
    }
}

pub fn shuffle_document(doc: &Document, seed: u64) -> Document {
    shuffle_with(doc, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Moves top-level `key` to the end of the object, if present.
pub fn pin_last(doc: &mut Document, key: &str) {
    if let Document::Object(pairs) = doc {
        if let Some(i) = pairs.iter().position(|(k, _)| k == key) {
            let pair = pairs.remove(i);
            pairs.push(pair);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UpscaleOptions {
    pub factor: usize,
    pub shuffle: bool,
    /// Top-level key kept in last place in every copy.
    pub pin_last: Option<String>,
}

/// `factor` copies of each document, each independently shuffled when
/// `shuffle` is set. Copies of one document are adjacent.
pub fn upscale(corpus: &[Document], options: &UpscaleOptions, seed: u64) -> Result<Vec<Document>, PipelineError> {
    if options.factor == 0 {
        return Err(PipelineError::Factor);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(corpus.len() * options.factor);
    for doc in corpus {
        for _ in 0..options.factor {
            let mut copy = if options.shuffle { shuffle_with(doc, &mut rng) } else { doc.clone() };
            if let Some(key) = &options.pin_last {
                pin_last(&mut copy, key);
            }
            out.push(copy);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Document>,
    pub test: Vec<Document>,
    pub seed: u64,
    pub fraction: f64,
}

/// Seeded uniform shuffle, then the first `round(fraction·n)` documents
/// become the training set.
pub fn split(corpus: &[Document], fraction: f64, seed: u64) -> Result<DatasetSplit, PipelineError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(PipelineError::Fraction(fraction));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (fraction * corpus.len() as f64).round() as usize;
    if cut == 0 || cut == corpus.len() {
        return Err(PipelineError::EmptySide { total: corpus.len(), fraction });
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect();
    Ok(DatasetSplit { train: pick(&order[..cut]), test: pick(&order[cut..]), seed, fraction })
}

/// Indices of `k` near-equal folds over `n` items after a seeded shuffle.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(k >= 1, "at least one fold");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..k).map(|f| order.iter().skip(f).step_by(k).copied().collect()).collect()
}

/// A document encoded for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub ids: Vec<TokenId>,
    /// Stack-symbol ids per position.
    pub symbols: Vec<Vec<TokenId>>,
    /// Valid next-token set after each position.
    pub valid: Vec<ValidSet>,
    /// Targets from this position on are excluded from the loss: the first
    /// out-of-vocabulary key or array length.
    pub loss_end: usize,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Next-token targets per position: `ids[i + 1]`, or `None` for the last
    /// position and positions past `loss_end`.
    pub fn targets(&self) -> Vec<Option<TokenId>> {
        (0..self.len()).map(|i| if i + 1 < self.loss_end { Some(self.ids[i + 1]) } else { None }).collect()
    }
}

/// Encodes a token sequence that the automaton accepts as a prefix. Tokens
/// missing from the vocabulary become `Unknown`; their stack symbols do too.
pub fn encode_tokens(tokens: &[Token], vocab: &Vocabulary) -> Result<EncodedSequence, crate::automaton::TransitionError> {
    let mut state = AutomatonState::new();
    let mut trace = Vec::with_capacity(tokens.len());
    let mut valid = Vec::with_capacity(tokens.len());
    for tok in tokens {
        trace.push(state.step(tok)?);
        valid.push(state.valid_set());
    }
    let ids = vocab.encode_unpadded(tokens);
    let loss_end = tokens
        .iter()
        .zip(&ids)
        .position(|(tok, &id)| id == UNKNOWN && matches!(tok, Token::Key(_) | Token::Array(_)))
        .unwrap_or(tokens.len());
    Ok(EncodedSequence { symbols: stack_symbol_ids(&trace, vocab), ids, valid, loss_end })
}

/// Tokenizes and encodes one document, rejecting sequences over `max_len`.
pub fn encode_document(
    doc: &Document,
    vocab: &Vocabulary,
    max_len: usize,
    index: usize,
) -> Result<EncodedSequence, PipelineError> {
    let tokens = tokenize(doc).map_err(|source| PipelineError::Tokenize { index, source })?;
    if tokens.len() > max_len {
        return Err(PipelineError::Overlong { index, len: tokens.len(), limit: max_len });
    }
    Ok(encode_tokens(&tokens, vocab).expect("tokenizer output is accepted"))
}

/// Encodes every document that fits; returns the sequences and the indices
/// of the documents dropped for length.
pub fn encode_corpus(
    docs: &[Document],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<(Vec<EncodedSequence>, Vec<usize>), PipelineError> {
    let mut kept = Vec::with_capacity(docs.len());
    let mut dropped = Vec::new();
    for (index, doc) in docs.iter().enumerate() {
        match encode_document(doc, vocab, max_len, index) {
            Ok(seq) => kept.push(seq),
            Err(PipelineError::Overlong { .. }) => dropped.push(index),
            Err(e) => return Err(e),
        }
    }
    Ok((kept, dropped))
}

/// A training batch of packed variable-length sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: BatchInput,
    /// Next-token target per row; `None` rows are excluded from the loss.
    pub targets: Vec<Option<TokenId>>,
    /// Grammar-valid next-token set per row.
    pub valid: Vec<ValidSet>,
    /// Whether the loss masks invalid tokens.
    pub guardrails: bool,
}

impl Batch {
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a EncodedSequence>, guardrails: bool) -> Self {
        let mut batch = Batch { input: BatchInput::new(), targets: Vec::new(), valid: Vec::new(), guardrails };
        for seq in seqs {
            batch.input.push(&seq.ids, &seq.symbols);
            batch.targets.extend(seq.targets());
            batch.valid.extend_from_slice(&seq.valid);
        }
        batch
    }

    /// Set used to mask each row in the loss: the grammar-valid set with
    /// guardrails, `All` without.
    pub fn loss_sets(&self) -> impl Iterator<Item = ValidSet> + '_ {
        self.valid.iter().map(|&v| if self.guardrails { v } else { ValidSet::All })
    }

    pub fn sequences(&self) -> usize {
        self.input.sequences()
    }

    /// Ids as a `sequences × n` matrix right-padded with `Pad`.
    pub fn id_matrix(&self, n: usize) -> Vec<Vec<TokenId>> {
        (0..self.sequences())
            .map(|s| {
                let mut row = self.input.ids[self.input.sequence(s)].to_vec();
                row.resize(n.max(row.len()), crate::vocab::PAD);
                row
            })
            .collect()
    }
}

enum Source {
    Encoded(Vec<EncodedSequence>),
    /// Documents re-shuffled every time they are drawn.
    Reshuffled { docs: Vec<Document>, vocab: Vocabulary, pin_last: Option<String> },
}

/// An endless, deterministic stream of batches. Sequences are visited in a
/// seeded random order that is redrawn every epoch.
pub struct BatchStream {
    source: Source,
    batch_size: usize,
    guardrails: bool,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchStream {
    pub fn new(sequences: Vec<EncodedSequence>, batch_size: usize, guardrails: bool, seed: u64) -> Result<Self, PipelineError> {
        Self::with_source(Source::Encoded(sequences), batch_size, guardrails, seed)
    }

    /// A stream that draws a fresh random sibling order for every document
    /// each time it is visited, instead of materializing upscaled copies.
    /// Documents must already fit the model length.
    pub fn reshuffling(
        docs: Vec<Document>,
        vocab: Vocabulary,
        pin_last: Option<String>,
        batch_size: usize,
        guardrails: bool,
        seed: u64,
    ) -> Result<Self, PipelineError> {
        for (index, doc) in docs.iter().enumerate() {
            tokenize(doc).map_err(|source| PipelineError::Tokenize { index, source })?;
        }
        Self::with_source(Source::Reshuffled { docs, vocab, pin_last }, batch_size, guardrails, seed)
    }

    fn with_source(source: Source, batch_size: usize, guardrails: bool, seed: u64) -> Result<Self, PipelineError> {
        let len = match &source {
            Source::Encoded(s) => s.len(),
            Source::Reshuffled { docs, .. } => docs.len(),
        };
        if len == 0 || batch_size == 0 {
            return Err(PipelineError::EmptyCorpus);
        }
        let mut stream =
            BatchStream { source, batch_size, guardrails, rng: ChaCha8Rng::seed_from_u64(seed), order: (0..len).collect(), cursor: len };
        stream.order.shrink_to_fit();
        Ok(stream)
    }

    fn next_index(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    pub fn next_batch(&mut self) -> Batch {
        let picks: Vec<usize> = (0..self.batch_size).map(|_| self.next_index()).collect();
        match &self.source {
            Source::Encoded(seqs) => Batch::from_sequences(picks.iter().map(|&i| &seqs[i]), self.guardrails),
            Source::Reshuffled { docs, vocab, pin_last: pin } => {
                let mut seqs = Vec::with_capacity(picks.len());
                for &i in &picks {
                    let mut doc = shuffle_with(&docs[i], &mut self.rng);
                    if let Some(key) = pin {
                        pin_last(&mut doc, key);
                    }
                    let tokens = tokenize(&doc).expect("checked at construction");
                    seqs.push(encode_tokens(&tokens, vocab).expect("tokenizer output is accepted"));
                }
                Batch::from_sequences(&seqs, self.guardrails)
            }
        }
    }
}

impl Iterator for BatchStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        Some(self.next_batch())
    }
}

/// Encodes `corpus` and returns a batch stream over it.
pub fn make_batches(
    corpus: &[Document],
    vocab: &Vocabulary,
    max_len: usize,
    batch_size: usize,
    guardrails: bool,
    seed: u64,
) -> Result<BatchStream, PipelineError> {
    let sequences = corpus
        .iter()
        .enumerate()
        .map(|(i, d)| encode_document(d, vocab, max_len, i))
        .collect::<Result<Vec<_>, _>>()?;
    BatchStream::new(sequences, batch_size, guardrails, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::parse_json;
    use crate::vocab::{END, START};

    fn doc(s: &str) -> Document {
        parse_json(s).unwrap()
    }

    #[test]
    fn single_pair_is_fixed() {
        let d = doc(r#"{"a": {"b": 1}}"#);
        for seed in 0..20 {
            assert_eq!(shuffle_document(&d, seed), d);
        }
    }

    #[test]
    fn arrays_keep_order() {
        let d = doc(r#"{"a": [1, 2, 3], "b": [{"x": 1, "y": 2}, 5]}"#);
        for seed in 0..50 {
            let s = shuffle_document(&d, seed);
            assert_eq!(s.get("a"), d.get("a"));
            let b = s.get("b").unwrap().as_array().unwrap();
            assert_eq!(b[1], Document::Int(5));
            assert!(b[0].get("x").is_some() && b[0].get("y").is_some());
        }
    }

    #[test]
    fn two_orders_are_equally_likely() {
        let d = doc(r#"{"a": 1, "b": 2}"#);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 10_000;
        let first_a = (0..draws)
            .filter(|_| matches!(&shuffle_with(&d, &mut rng), Document::Object(p) if p[0].0 == "a"))
            .count();
        let freq = first_a as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.02, "{freq}");
    }

    #[test]
    fn upscale_sizes_and_identity() {
        let corpus: Vec<Document> = (0..100).map(|i| doc(&format!(r#"{{"i": {i}, "j": 0}}"#))).collect();
        let up = upscale(&corpus, &UpscaleOptions { factor: 10, shuffle: true, pin_last: None }, 1).unwrap();
        assert_eq!(up.len(), 1000);
        let same = upscale(&corpus, &UpscaleOptions { factor: 1, shuffle: false, pin_last: None }, 1).unwrap();
        assert_eq!(same, corpus);
        assert_eq!(upscale(&corpus, &UpscaleOptions::default(), 1), Err(PipelineError::Factor));
    }

    #[test]
    fn pinned_key_stays_last() {
        let corpus = vec![doc(r#"{"label": 1, "a": 2, "b": 3, "c": 4}"#)];
        let opts = UpscaleOptions { factor: 30, shuffle: true, pin_last: Some("label".into()) };
        for d in upscale(&corpus, &opts, 3).unwrap() {
            let Document::Object(pairs) = d else { unreachable!() };
            assert_eq!(pairs.last().unwrap().0, "label");
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let corpus: Vec<Document> = (0..10_000).map(|i| Document::Object(vec![("i".into(), Document::Int(i))])).collect();
        let s = split(&corpus, 0.8, 7).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8000, 2000));
        assert_eq!(split(&corpus, 0.8, 7).unwrap(), s);
        let mut all: Vec<i64> = s.train.iter().chain(&s.test).map(|d| d.get("i").unwrap().as_i64().unwrap()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10_000).collect::<Vec<_>>());
        assert!(matches!(split(&corpus, 1.0, 0), Err(PipelineError::Fraction(_))));
        assert!(matches!(split(&corpus[..1], 0.5, 0), Err(PipelineError::EmptySide { .. })));
    }

    #[test]
    fn kfold_partitions() {
        let folds = kfold_indices(11, 3, 5);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 3 || f.len() == 4));
    }

    #[test]
    fn encoding_targets_and_sets() {
        let d = doc(r#"{"a": 1}"#);
        let vocab = Vocabulary::build([&d], None).unwrap();
        let seq = encode_document(&d, &vocab, 16, 0).unwrap();
        assert_eq!(seq.ids[0], START);
        assert_eq!(*seq.ids.last().unwrap(), END);
        assert_eq!(seq.valid, vec![ValidSet::KeyOrEnd, ValidSet::Value, ValidSet::KeyOrEnd, ValidSet::Pad]);
        let t = seq.targets();
        assert_eq!(t[..3], [Some(seq.ids[1]), Some(seq.ids[2]), Some(END)]);
        assert_eq!(t[3], None);
        assert!(matches!(encode_document(&d, &vocab, 3, 4), Err(PipelineError::Overlong { index: 4, len: 4, limit: 3 })));
    }

    #[test]
    fn unknown_key_stops_the_loss() {
        let train = doc(r#"{"a": 1}"#);
        let vocab = Vocabulary::build([&train], None).unwrap();
        let test = doc(r#"{"a": 7, "zz": 1}"#);
        let seq = encode_document(&test, &vocab, 16, 0).unwrap();
        // Start a 7 zz 1 End: the unknown value is fine, the unknown key is not
        assert_eq!(seq.ids[2], UNKNOWN);
        assert_eq!(seq.ids[3], UNKNOWN);
        assert_eq!(seq.loss_end, 3);
        assert_eq!(seq.targets(), vec![Some(seq.ids[1]), Some(UNKNOWN), None, None, None, None]);
    }

    #[test]
    fn batches_shape_and_determinism() {
        let docs = vec![doc(r#"{"a": 1}"#), doc(r#"{"b": [1, 2]}"#)];
        let vocab = Vocabulary::build(&docs, None).unwrap();
        let mut stream = make_batches(&docs, &vocab, 16, 2, true, 0).unwrap();
        let batch = stream.next_batch();
        assert_eq!(batch.sequences(), 2);
        assert_eq!(batch.targets.len(), batch.input.rows());
        let m = batch.id_matrix(16);
        assert!(m.iter().all(|r| r.len() == 16));
        let again: Vec<Batch> = make_batches(&docs, &vocab, 16, 2, true, 0).unwrap().take(5).collect();
        let first: Vec<Batch> = make_batches(&docs, &vocab, 16, 2, true, 0).unwrap().take(5).collect();
        assert_eq!(again, first);
        let off = make_batches(&docs, &vocab, 16, 2, false, 0).unwrap().next_batch();
        assert!(off.loss_sets().all(|v| v == ValidSet::All));
        assert_eq!(off.valid, make_batches(&docs, &vocab, 16, 2, true, 0).unwrap().next_batch().valid);
    }

    #[test]
    fn reshuffling_stream_varies_order() {
        let d = doc(r#"{"a": 1, "b": 2, "c": 3, "d": 4}"#);
        let vocab = Vocabulary::build([&d], None).unwrap();
        let mut stream = BatchStream::reshuffling(vec![d], vocab, None, 1, true, 0).unwrap();
        let seen: std::collections::HashSet<Vec<TokenId>> = (0..40).map(|_| stream.next_batch().input.ids).collect();
        assert!(seen.len() > 5);
    }
}

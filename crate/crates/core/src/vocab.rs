//! Token ↔ id mapping, frequency-based truncation and the vocabulary file.
//!
//! The seven fixed grammar tokens occupy ids 0–6. Every other token gets the
//! next free id on first encounter while walking the training corpus.

use std::collections::HashMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::document::{canonical_float, escape_str, unescape_str, Document};
use crate::tokenizer::{tokenize, CanonicalFloat, Primitive, Token, TokenizeError};

pub type TokenId = u32;

pub const START: TokenId = 0;
pub const END: TokenId = 1;
pub const OBJ_START: TokenId = 2;
pub const OBJ_END: TokenId = 3;
pub const OBJ: TokenId = 4;
pub const UNKNOWN: TokenId = 5;
pub const PAD: TokenId = 6;

pub const GRAMMAR_TOKENS: [Token; 7] =
    [Token::Start, Token::End, Token::ObjStart, Token::ObjEnd, Token::Obj, Token::Unknown, Token::Pad];

const GRAMMAR_NAMES: [&str; 7] = ["START", "END", "OBJ_START", "OBJ_END", "OBJ", "UNKNOWN", "PAD"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenClass {
    Grammar,
    Key,
    Value,
    Array,
}

impl TokenClass {
    pub fn of(token: &Token) -> Self {
        match token {
            Token::Key(_) => TokenClass::Key,
            Token::Value(_) => TokenClass::Value,
            Token::Array(_) => TokenClass::Array,
            _ => TokenClass::Grammar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("document {index}: {source}")]
    Tokenize { index: usize, source: TokenizeError },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("sequence of {len} tokens exceeds the limit of {limit}")]
    Overlong { len: usize, limit: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("id {id} at position {position} is outside the vocabulary of {size}")]
    OutOfRange { id: TokenId, position: usize, size: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("vocabulary file line {line}: {message}")]
pub struct VocabFileError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index: HashMap<Token, TokenId>,
    counts: Vec<u64>,
}

/// Vocabularies are equal when they map the same tokens to the same ids;
/// frequencies are not compared.
impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<Token>, counts: Vec<u64>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        Vocabulary { tokens, index, counts }
    }

    /// Builds the vocabulary of a training corpus.
    ///
    /// Besides every emitted token, the array counters `Array(r)` for
    /// `1 <= r < n` of each observed `Array(n)` are registered with zero
    /// frequency.
    /// With `max_size`, only the most frequent tokens are kept (grammar
    /// tokens always are); ties go to the earlier first occurrence.
    pub fn build<'a>(
        corpus: impl IntoIterator<Item = &'a Document>,
        max_size: Option<usize>,
    ) -> Result<Self, VocabError> {
        let mut tokens: Vec<Token> = GRAMMAR_TOKENS.to_vec();
        let mut counts = vec![0u64; tokens.len()];
        let mut index: HashMap<Token, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut max_array = 0usize;
        let mut docs = 0usize;
        for (doc_index, doc) in corpus.into_iter().enumerate() {
            docs += 1;
            let seq = tokenize(doc).map_err(|source| VocabError::Tokenize { index: doc_index, source })?;
            for tok in seq {
                if let Token::Array(n) = tok {
                    max_array = max_array.max(n);
                }
                match index.get(&tok) {
                    Some(&i) => counts[i] += 1,
                    None => {
                        index.insert(tok.clone(), tokens.len());
                        tokens.push(tok);
                        counts.push(1);
                    }
                }
            }
        }
        if docs == 0 {
            return Err(VocabError::EmptyCorpus);
        }
        for r in 1..max_array {
            let tok = Token::Array(r);
            if !index.contains_key(&tok) {
                index.insert(tok.clone(), tokens.len());
                tokens.push(tok);
                counts.push(0);
            }
        }

        let fixed = GRAMMAR_TOKENS.len();
        if let Some(limit) = max_size {
            let keep = limit.saturating_sub(fixed);
            if tokens.len() - fixed > keep {
                let mut order: Vec<usize> = (fixed..tokens.len()).collect();
                order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
                let mut retained: Vec<usize> = order[..keep].to_vec();
                retained.sort_unstable();
                let mut kept_tokens: Vec<Token> = tokens[..fixed].to_vec();
                let mut kept_counts: Vec<u64> = counts[..fixed].to_vec();
                for i in retained {
                    kept_tokens.push(tokens[i].clone());
                    kept_counts.push(counts[i]);
                }
                return Ok(Self::from_tokens(kept_tokens, kept_counts));
            }
        }
        Ok(Self::from_tokens(tokens, counts))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&Token> {
        self.tokens.get(id as usize)
    }

    pub fn id(&self, token: &Token) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or of `Unknown` when the token was not retained.
    pub fn id_or_unknown(&self, token: &Token) -> TokenId {
        self.id(token).unwrap_or(UNKNOWN)
    }

    /// Training-corpus frequency; zero for vocabularies loaded from a file.
    pub fn count(&self, id: TokenId) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn class(&self, id: TokenId) -> Option<TokenClass> {
        self.token(id).map(TokenClass::of)
    }

    /// Encodes and right-pads to exactly `pad_to` ids.
    ///
    /// Sequences longer than `pad_to` fail unless `truncate` is set, in which
    /// case they are cut to `pad_to`.
    pub fn encode(&self, tokens: &[Token], pad_to: usize, truncate: bool) -> Result<Vec<TokenId>, EncodeError> {
        if tokens.len() > pad_to && !truncate {
            return Err(EncodeError::Overlong { len: tokens.len(), limit: pad_to });
        }
        let mut ids: Vec<TokenId> = tokens.iter().take(pad_to).map(|t| self.id_or_unknown(t)).collect();
        ids.resize(pad_to, PAD);
        Ok(ids)
    }

    pub fn encode_unpadded(&self, tokens: &[Token]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id_or_unknown(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<Token>, DecodeError> {
        ids.iter()
            .enumerate()
            .map(|(position, &id)| {
                self.token(id)
                    .cloned()
                    .ok_or(DecodeError::OutOfRange { id, position, size: self.len() })
            })
            .collect()
    }

    /// Serializes to the line-per-token vocabulary file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            write_token_line(&mut out, tok);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, VocabFileError> {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let err = |message: String| VocabFileError { line: i + 1, message };
            let tok = parse_token_line(line).map_err(err)?;
            if i < GRAMMAR_TOKENS.len() {
                if tok != GRAMMAR_TOKENS[i] {
                    return Err(err(format!("expected G:{} at this line", GRAMMAR_NAMES[i])));
                }
            } else if TokenClass::of(&tok) == TokenClass::Grammar {
                return Err(err("fixed grammar token repeated".into()));
            }
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(err("duplicate token".into()));
            }
            tokens.push(tok);
        }
        if tokens.len() < GRAMMAR_TOKENS.len() {
            return Err(VocabFileError { line: tokens.len() + 1, message: "missing grammar tokens".into() });
        }
        let counts = vec![0; tokens.len()];
        Ok(Vocabulary { tokens, index, counts })
    }

    /// Hex SHA-256 of the vocabulary file contents.
    pub fn checksum(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// A token in vocabulary-file notation, e.g. `K:name` or `V:i:3`.
pub fn token_text(tok: &Token) -> String {
    let mut out = String::new();
    write_token_line(&mut out, tok);
    out
}

fn write_token_line(out: &mut String, tok: &Token) {
    match tok {
        Token::Start => out.push_str("G:START"),
        Token::End => out.push_str("G:END"),
        Token::ObjStart => out.push_str("G:OBJ_START"),
        Token::ObjEnd => out.push_str("G:OBJ_END"),
        Token::Obj => out.push_str("G:OBJ"),
        Token::Unknown => out.push_str("G:UNKNOWN"),
        Token::Pad => out.push_str("G:PAD"),
        Token::Array(n) => {
            let _ = write!(out, "G:ARRAY:{n}");
        }
        Token::Key(k) => {
            out.push_str("K:");
            escape_str(out, k);
        }
        Token::Value(p) => match p {
            Primitive::Str(s) => {
                out.push_str("V:s:");
                escape_str(out, s);
            }
            Primitive::Int(i) => {
                let _ = write!(out, "V:i:{i}");
            }
            Primitive::Float(f) => {
                out.push_str("V:f:");
                out.push_str(&canonical_float(f.get()));
            }
            Primitive::Bool(b) => out.push_str(if *b { "V:b:true" } else { "V:b:false" }),
            Primitive::Null => out.push_str("V:null"),
        },
    }
}

fn parse_token_line(line: &str) -> Result<Token, String> {
    if let Some(name) = line.strip_prefix("G:") {
        if let Some(n) = name.strip_prefix("ARRAY:") {
            let len: usize = n.parse().map_err(|_| format!("bad array length {n:?}"))?;
            if len.to_string() != n {
                return Err(format!("non-canonical array length {n:?}"));
            }
            return Ok(Token::Array(len));
        }
        return GRAMMAR_NAMES
            .iter()
            .position(|g| *g == name)
            .map(|i| GRAMMAR_TOKENS[i].clone())
            .ok_or_else(|| format!("unknown grammar token {name:?}"));
    }
    if let Some(key) = line.strip_prefix("K:") {
        return unescape_str(key).map(Token::Key).map_err(|e| e.to_string());
    }
    if line == "V:null" {
        return Ok(Token::Value(Primitive::Null));
    }
    if let Some(s) = line.strip_prefix("V:s:") {
        return unescape_str(s).map(|s| Token::Value(Primitive::Str(s))).map_err(|e| e.to_string());
    }
    if let Some(i) = line.strip_prefix("V:i:") {
        let v: i64 = i.parse().map_err(|_| format!("bad integer {i:?}"))?;
        if v.to_string() != i {
            return Err(format!("non-canonical integer {i:?}"));
        }
        return Ok(Token::Value(Primitive::Int(v)));
    }
    if let Some(f) = line.strip_prefix("V:f:") {
        let v: f64 = f.parse().map_err(|_| format!("bad float {f:?}"))?;
        let canonical = CanonicalFloat::new(v).ok_or_else(|| format!("non-finite float {f:?}"))?;
        if canonical_float(v) != f {
            return Err(format!("non-canonical float {f:?}"));
        }
        return Ok(Token::Value(Primitive::Float(canonical)));
    }
    match line {
        "V:b:true" => Ok(Token::Value(Primitive::Bool(true))),
        "V:b:false" => Ok(Token::Value(Primitive::Bool(false))),
        _ => Err(format!("unrecognized token line {line:?}")),
    }
}

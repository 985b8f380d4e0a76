//! Structure-preserving tokenization of documents.
//!
//! Keys and primitive values are atomic tokens. Nested objects are bracketed
//! by `ObjStart`/`ObjEnd`, arrays are introduced by an `Array(len)` token, and
//! the top-level object is bracketed by `Start`/`End`.

use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::document::{canonical_float, Document};

/// String that an `Unknown` value token deserializes to.
pub const UNKNOWN_LITERAL: &str = "[UNKNOWN]";

/// A finite float compared by bit pattern, which coincides with comparing
/// canonical decimal forms.
#[derive(Debug, Clone, Copy)]
pub struct CanonicalFloat(f64);

impl CanonicalFloat {
    pub fn new(value: f64) -> Option<Self> {
        value.is_finite().then_some(CanonicalFloat(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl fmt::Display for CanonicalFloat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonical_float(self.0))
    }
}

impl PartialEq for CanonicalFloat {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for CanonicalFloat {}

impl Hash for CanonicalFloat {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Primitive {
    Str(String),
    Int(i64),
    Float(CanonicalFloat),
    Bool(bool),
    Null,
}

impl Primitive {
    pub fn to_document(&self) -> Document {
        match self {
            Primitive::Str(s) => Document::Str(s.clone()),
            Primitive::Int(i) => Document::Int(*i),
            Primitive::Float(f) => Document::Float(f.get()),
            Primitive::Bool(b) => Document::Bool(*b),
            Primitive::Null => Document::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Key(String),
    Value(Primitive),
    Start,
    End,
    ObjStart,
    ObjEnd,
    /// Stack symbol for an open object; never emitted by [`tokenize`].
    Obj,
    Array(usize),
    Unknown,
    Pad,
}

impl Token {
    pub fn is_grammar(&self) -> bool {
        !matches!(self, Token::Key(_) | Token::Value(_) | Token::Array(_))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Key(k) => write!(f, "Key({k})"),
            Token::Value(p) => write!(f, "{}", p.to_document()),
            Token::Start => f.write_str("[START]"),
            Token::End => f.write_str("[END]"),
            Token::ObjStart => f.write_str("[OBJ_START]"),
            Token::ObjEnd => f.write_str("[OBJ_END]"),
            Token::Obj => f.write_str("[OBJ]"),
            Token::Array(n) => write!(f, "Array({n})"),
            Token::Unknown => f.write_str("[UNKNOWN]"),
            Token::Pad => f.write_str("[PAD]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenizeError {
    #[error("only objects can be tokenized at the top level")]
    NotAnObject,
    #[error("float value is not finite")]
    NonFinite,
}

pub fn tokenize(doc: &Document) -> Result<Vec<Token>, TokenizeError> {
    let Document::Object(members) = doc else {
        return Err(TokenizeError::NotAnObject);
    };
    let mut out = vec![Token::Start];
    for (key, value) in members {
        out.push(Token::Key(key.clone()));
        push_value(value, &mut out)?;
    }
    out.push(Token::End);
    Ok(out)
}

fn push_value(value: &Document, out: &mut Vec<Token>) -> Result<(), TokenizeError> {
    match value {
        Document::Object(members) => {
            out.push(Token::ObjStart);
            for (key, inner) in members {
                out.push(Token::Key(key.clone()));
                push_value(inner, out)?;
            }
            out.push(Token::ObjEnd);
        }
        Document::Array(items) => {
            out.push(Token::Array(items.len()));
            for item in items {
                push_value(item, out)?;
            }
        }
        Document::Str(s) => out.push(Token::Value(Primitive::Str(s.clone()))),
        Document::Int(i) => out.push(Token::Value(Primitive::Int(*i))),
        Document::Float(f) => {
            let f = CanonicalFloat::new(*f).ok_or(TokenizeError::NonFinite)?;
            out.push(Token::Value(Primitive::Float(f)));
        }
        Document::Bool(b) => out.push(Token::Value(Primitive::Bool(*b))),
        Document::Null => out.push(Token::Value(Primitive::Null)),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("token sequence rejected at position {position}: {reason}")]
pub struct DetokenizeError {
    pub position: usize,
    pub reason: &'static str,
}

/// Inverse of [`tokenize`]. Trailing `Pad` tokens are ignored; `Unknown` in
/// value position becomes the string `"[UNKNOWN]"`.
pub fn detokenize(tokens: &[Token]) -> Result<Document, DetokenizeError> {
    let mut reader = Reader { tokens, pos: 0 };
    match reader.next() {
        Some(Token::Start) => {}
        _ => return Err(reader.fail_here(0, "sequence must begin with [START]")),
    }
    let doc = reader.members(&Token::End)?;
    for (i, tok) in tokens.iter().enumerate().skip(reader.pos) {
        if *tok != Token::Pad {
            return Err(DetokenizeError { position: i, reason: "only [PAD] may follow [END]" });
        }
    }
    Ok(doc)
}

/// Formats a value fragment such as the output of a field prediction.
pub fn detokenize_value(tokens: &[Token]) -> Result<Document, DetokenizeError> {
    let mut reader = Reader { tokens, pos: 0 };
    let value = reader.value()?;
    if reader.pos != tokens.len() {
        return Err(DetokenizeError { position: reader.pos, reason: "trailing tokens after value" });
    }
    Ok(value)
}

struct Reader<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Option<&'a Token> {
        let tok = self.tokens.get(self.pos);
        self.pos += 1;
        tok
    }

    fn fail_here(&self, position: usize, reason: &'static str) -> DetokenizeError {
        DetokenizeError { position, reason }
    }

    /// Reads `Key value` pairs until `close`.
    fn members(&mut self, close: &Token) -> Result<Document, DetokenizeError> {
        let mut members = Vec::new();
        loop {
            let at = self.pos;
            match self.next() {
                Some(Token::Key(k)) => {
                    let value = self.value()?;
                    members.push((k.clone(), value));
                }
                Some(tok) if tok == close => return Ok(Document::Object(members)),
                Some(_) => return Err(self.fail_here(at, "expected a key or the closing token")),
                None => return Err(self.fail_here(at, "unexpected end of sequence")),
            }
        }
    }

    fn value(&mut self) -> Result<Document, DetokenizeError> {
        let at = self.pos;
        match self.next() {
            Some(Token::Value(p)) => Ok(p.to_document()),
            Some(Token::Unknown) => Ok(Document::Str(UNKNOWN_LITERAL.to_string())),
            Some(Token::ObjStart) => self.members(&Token::ObjEnd),
            Some(Token::Array(n)) => {
                let mut items = Vec::with_capacity((*n).min(1024));
                for _ in 0..*n {
                    items.push(self.value()?);
                }
                Ok(Document::Array(items))
            }
            Some(_) => Err(self.fail_here(at, "expected a value")),
            None => Err(self.fail_here(at, "unexpected end of sequence")),
        }
    }
}

/// Number of tokens [`tokenize`] emits for a value.
pub fn value_token_count(value: &Document) -> usize {
    match value {
        Document::Object(members) => 2 + members.iter().map(|(_, v)| 1 + value_token_count(v)).sum::<usize>(),
        Document::Array(items) => 1 + items.iter().map(value_token_count).sum::<usize>(),
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::parse_json;

    fn key(k: &str) -> Token {
        Token::Key(k.into())
    }
    fn int(i: i64) -> Token {
        Token::Value(Primitive::Int(i))
    }
    fn s(v: &str) -> Token {
        Token::Value(Primitive::Str(v.into()))
    }

    #[test]
    fn tokenizes_flat_object() {
        let doc = parse_json(r#"{"a": 1}"#).unwrap();
        assert_eq!(tokenize(&doc).unwrap(), vec![Token::Start, key("a"), int(1), Token::End]);
    }

    #[test]
    fn tokenizes_array() {
        let doc = parse_json(r#"{"g": ["x","y"]}"#).unwrap();
        assert_eq!(
            tokenize(&doc).unwrap(),
            vec![Token::Start, key("g"), Token::Array(2), s("x"), s("y"), Token::End]
        );
    }

    #[test]
    fn tokenizes_nested_object_with_empty_array() {
        let doc = parse_json(r#"{"a": {"b": []}}"#).unwrap();
        assert_eq!(
            tokenize(&doc).unwrap(),
            vec![Token::Start, key("a"), Token::ObjStart, key("b"), Token::Array(0), Token::ObjEnd, Token::End]
        );
    }

    #[test]
    fn key_and_string_value_differ() {
        assert_ne!(key("age"), s("age"));
    }

    #[test]
    fn int_and_float_tokens_differ() {
        let one = Token::Value(Primitive::Float(CanonicalFloat::new(1.0).unwrap()));
        assert_ne!(one, int(1));
        let neg_zero = Token::Value(Primitive::Float(CanonicalFloat::new(-0.0).unwrap()));
        let zero = Token::Value(Primitive::Float(CanonicalFloat::new(0.0).unwrap()));
        assert_ne!(neg_zero, zero);
    }

    #[test]
    fn rejects_non_object() {
        assert_eq!(tokenize(&Document::Int(1)), Err(TokenizeError::NotAnObject));
    }

    #[test]
    fn detokenize_strips_pads() {
        let toks = vec![Token::Start, key("a"), int(1), Token::End, Token::Pad, Token::Pad];
        assert_eq!(detokenize(&toks).unwrap(), parse_json(r#"{"a": 1}"#).unwrap());
        assert_eq!(detokenize(&[Token::Start, Token::End]).unwrap(), Document::Object(vec![]));
    }

    #[test]
    fn detokenize_reports_first_offending_position() {
        let err = detokenize(&[Token::Start, key("a"), int(1)]).unwrap_err();
        assert_eq!(err.position, 3);
        let err = detokenize(&[Token::Start, Token::ObjEnd]).unwrap_err();
        assert_eq!(err.position, 1);
        let err = detokenize(&[Token::Start, Token::End, Token::Pad, key("a")]).unwrap_err();
        assert_eq!(err.position, 3);
        let err = detokenize(&[Token::Start, key("a"), Token::Obj, Token::End]).unwrap_err();
        assert_eq!(err.position, 2);
        assert_eq!(detokenize(&[]).unwrap_err().position, 0);
    }

    #[test]
    fn unknown_value_becomes_literal() {
        let toks = vec![Token::Start, key("a"), Token::Unknown, Token::End];
        assert_eq!(detokenize(&toks).unwrap(), parse_json(r#"{"a": "[UNKNOWN]"}"#).unwrap());
        // Unknown cannot stand in key position.
        assert!(detokenize(&[Token::Start, Token::Unknown, int(1), Token::End]).is_err());
    }

    #[test]
    fn token_count_matches_tokenize() {
        let doc = parse_json(r#"{"a": {"b": [1, [2, 3], {"c": null}]}, "d": []}"#).unwrap();
        let Document::Object(members) = &doc else { unreachable!() };
        let expected = 2 + members.iter().map(|(_, v)| 1 + value_token_count(v)).sum::<usize>();
        assert_eq!(tokenize(&doc).unwrap().len(), expected);
    }

    #[test]
    fn value_fragment() {
        let toks = vec![Token::Array(2), int(1), Token::ObjStart, key("x"), int(2), Token::ObjEnd];
        assert_eq!(detokenize_value(&toks).unwrap(), parse_json(r#"[1, {"x": 2}]"#).unwrap());
        assert!(detokenize_value(&[int(1), int(2)]).is_err());
    }
}

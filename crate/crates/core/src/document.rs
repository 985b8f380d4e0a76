//! In-memory JSON documents, a strict RFC 8259 parser and the canonical
//! serializer used for corpora, predictions and reports.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::path::Path;

use thiserror::Error;

/// Objects nested deeper than this are rejected by the parser.
pub const MAX_NESTING: usize = 512;

/// A JSON value. Object members keep their source order.
#[derive(Debug, Clone, PartialEq)]
pub enum Document {
    Object(Vec<(String, Document)>),
    Array(Vec<Document>),
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    Null,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JsonError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: &'static str },
    #[error("duplicate key {key:?} at byte {offset}")]
    DuplicateKey { key: String, offset: usize },
    #[error("number at byte {offset} is not finite")]
    NonFinite { offset: usize },
    #[error("nesting exceeds {MAX_NESTING} levels at byte {offset}")]
    TooDeep { offset: usize },
    #[error("top-level value is not an object")]
    NotAnObject,
}

impl Document {
    pub fn is_object(&self) -> bool {
        matches!(self, Document::Object(_))
    }

    /// Looks up a member of an object. Returns `None` for non-objects.
    pub fn get(&self, key: &str) -> Option<&Document> {
        match self {
            Document::Object(members) => members.iter().find(|(k, _)| k == key).map(|(_, v)| v),
            _ => None,
        }
    }

    /// Removes a top-level member, returning its value.
    pub fn remove(&mut self, key: &str) -> Option<Document> {
        match self {
            Document::Object(members) => {
                let pos = members.iter().position(|(k, _)| k == key)?;
                Some(members.remove(pos).1)
            }
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Document::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Document::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[Document]> {
        match self {
            Document::Array(items) => Some(items),
            _ => None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut out = String::new();
        write_json(&mut out, self);
        out
    }
}

impl fmt::Display for Document {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json())
    }
}

/// Shortest round-trip decimal form of a finite float. Always contains a `.`
/// or an exponent so it never reads back as an integer.
pub fn canonical_float(value: f64) -> String {
    debug_assert!(value.is_finite());
    let mut buf = ryu::Buffer::new();
    buf.format_finite(value).to_owned()
}

pub fn serialize_json(doc: &Document) -> String {
    doc.to_json()
}

fn write_json(out: &mut String, doc: &Document) {
    match doc {
        Document::Object(members) => {
            out.push('{');
            for (i, (key, value)) in members.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_string(out, key);
                out.push_str(": ");
                write_json(out, value);
            }
            out.push('}');
        }
        Document::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_json(out, item);
            }
            out.push(']');
        }
        Document::Str(s) => write_string(out, s),
        Document::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Document::Float(f) => out.push_str(&canonical_float(*f)),
        Document::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Document::Null => out.push_str("null"),
    }
}

/// JSON string escaping without the surrounding quotes.
pub fn escape_str(out: &mut String, s: &str) {
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{8}' => out.push_str("\\b"),
            '\u{c}' => out.push_str("\\f"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
}

fn write_string(out: &mut String, s: &str) {
    out.push('"');
    escape_str(out, s);
    out.push('"');
}

/// Parses any JSON value. Duplicate keys within one object are an error.
pub fn parse_json(text: &str) -> Result<Document, JsonError> {
    let mut parser = Parser { bytes: text.as_bytes(), pos: 0, depth: 0 };
    parser.skip_ws();
    let doc = parser.value()?;
    parser.skip_ws();
    if parser.pos != parser.bytes.len() {
        return Err(parser.syntax("trailing characters"));
    }
    Ok(doc)
}

/// Parses a document for ingestion: the top level must be an object.
pub fn parse_object(text: &str) -> Result<Document, JsonError> {
    let doc = parse_json(text)?;
    if doc.is_object() {
        Ok(doc)
    } else {
        Err(JsonError::NotAnObject)
    }
}

/// Decodes the body of a JSON string literal (no surrounding quotes).
pub fn unescape_str(body: &str) -> Result<String, JsonError> {
    let quoted = format!("\"{body}\"");
    let mut parser = Parser { bytes: quoted.as_bytes(), pos: 0, depth: 0 };
    let s = parser.string()?;
    if parser.pos != parser.bytes.len() {
        return Err(parser.syntax("unescaped quote"));
    }
    Ok(s)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    depth: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: &'static str) -> JsonError {
        JsonError::Syntax { offset: self.pos, message }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while let Some(b' ' | b'\t' | b'\n' | b'\r') = self.peek() {
            self.pos += 1;
        }
    }

    fn expect_literal(&mut self, lit: &[u8], doc: Document) -> Result<Document, JsonError> {
        if self.bytes[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Ok(doc)
        } else {
            Err(self.syntax("invalid literal"))
        }
    }

    fn value(&mut self) -> Result<Document, JsonError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'{') => self.object(),
            Some(b'[') => self.array(),
            Some(b'"') => self.string().map(Document::Str),
            Some(b't') => self.expect_literal(b"true", Document::Bool(true)),
            Some(b'f') => self.expect_literal(b"false", Document::Bool(false)),
            Some(b'n') => self.expect_literal(b"null", Document::Null),
            Some(b'-' | b'0'..=b'9') => self.number(),
            Some(_) => Err(self.syntax("expected a value")),
        }
    }

    fn enter(&mut self) -> Result<(), JsonError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(JsonError::TooDeep { offset: self.pos });
        }
        Ok(())
    }

    fn object(&mut self) -> Result<Document, JsonError> {
        self.enter()?;
        self.pos += 1;
        let mut members = Vec::new();
        let mut seen = HashSet::new();
        self.skip_ws();
        if self.peek() == Some(b'}') {
            self.pos += 1;
            self.depth -= 1;
            return Ok(Document::Object(members));
        }
        loop {
            self.skip_ws();
            if self.peek() != Some(b'"') {
                return Err(self.syntax("expected object key"));
            }
            let key_offset = self.pos;
            let key = self.string()?;
            if !seen.insert(key.clone()) {
                return Err(JsonError::DuplicateKey { key, offset: key_offset });
            }
            self.skip_ws();
            if self.peek() != Some(b':') {
                return Err(self.syntax("expected ':'"));
            }
            self.pos += 1;
            self.skip_ws();
            let value = self.value()?;
            members.push((key, value));
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {
                    self.pos += 1;
                    break;
                }
                _ => return Err(self.syntax("expected ',' or '}'")),
            }
        }
        self.depth -= 1;
        Ok(Document::Object(members))
    }

    fn array(&mut self) -> Result<Document, JsonError> {
        self.enter()?;
        self.pos += 1;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b']') {
            self.pos += 1;
            self.depth -= 1;
            return Ok(Document::Array(items));
        }
        loop {
            self.skip_ws();
            items.push(self.value()?);
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    break;
                }
                _ => return Err(self.syntax("expected ',' or ']'")),
            }
        }
        self.depth -= 1;
        Ok(Document::Array(items))
    }

    fn hex4(&mut self) -> Result<u32, JsonError> {
        let digits = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| self.syntax("truncated unicode escape"))?;
        let mut code = 0u32;
        for &d in digits {
            let v = (d as char).to_digit(16).ok_or_else(|| self.syntax("invalid unicode escape"))?;
            code = code * 16 + v;
        }
        self.pos += 4;
        Ok(code)
    }

    fn string(&mut self) -> Result<String, JsonError> {
        self.pos += 1;
        let mut out = String::new();
        loop {
            let start = self.pos;
            while let Some(b) = self.peek() {
                if b == b'"' || b == b'\\' || b < 0x20 {
                    break;
                }
                self.pos += 1;
            }
            // Input is a &str and we only stop on ASCII bytes, so this slice is valid UTF-8.
            out.push_str(std::str::from_utf8(&self.bytes[start..self.pos]).expect("utf-8 boundary"));
            match self.peek() {
                None => return Err(self.syntax("unterminated string")),
                Some(b'"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(b'\\') => {
                    self.pos += 1;
                    let esc = self.peek().ok_or_else(|| self.syntax("unterminated escape"))?;
                    self.pos += 1;
                    match esc {
                        b'"' => out.push('"'),
                        b'\\' => out.push('\\'),
                        b'/' => out.push('/'),
                        b'b' => out.push('\u{8}'),
                        b'f' => out.push('\u{c}'),
                        b'n' => out.push('\n'),
                        b'r' => out.push('\r'),
                        b't' => out.push('\t'),
                        b'u' => {
                            let hi = self.hex4()?;
                            let code = if (0xD800..0xDC00).contains(&hi) {
                                if !self.bytes[self.pos..].starts_with(b"\\u") {
                                    return Err(self.syntax("lone surrogate"));
                                }
                                self.pos += 2;
                                let lo = self.hex4()?;
                                if !(0xDC00..0xE000).contains(&lo) {
                                    return Err(self.syntax("invalid low surrogate"));
                                }
                                0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00)
                            } else if (0xDC00..0xE000).contains(&hi) {
                                return Err(self.syntax("lone surrogate"));
                            } else {
                                hi
                            };
                            out.push(char::from_u32(code).ok_or_else(|| self.syntax("invalid code point"))?);
                        }
                        _ => {
                            self.pos -= 1;
                            return Err(self.syntax("invalid escape"));
                        }
                    }
                }
                Some(_) => return Err(self.syntax("control character in string")),
            }
        }
    }

    fn digits(&mut self) -> usize {
        let start = self.pos;
        while let Some(b'0'..=b'9') = self.peek() {
            self.pos += 1;
        }
        self.pos - start
    }

    fn number(&mut self) -> Result<Document, JsonError> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.pos += 1;
        }
        match self.peek() {
            Some(b'0') => self.pos += 1,
            Some(b'1'..=b'9') => {
                self.digits();
            }
            _ => return Err(self.syntax("invalid number")),
        }
        let mut integral = true;
        if self.peek() == Some(b'.') {
            integral = false;
            self.pos += 1;
            if self.digits() == 0 {
                return Err(self.syntax("expected fraction digits"));
            }
        }
        if let Some(b'e' | b'E') = self.peek() {
            integral = false;
            self.pos += 1;
            if let Some(b'+' | b'-') = self.peek() {
                self.pos += 1;
            }
            if self.digits() == 0 {
                return Err(self.syntax("expected exponent digits"));
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii number");
        if integral {
            if let Ok(i) = text.parse::<i64>() {
                return Ok(Document::Int(i));
            }
        }
        let f: f64 = text.parse().map_err(|_| JsonError::Syntax { offset: start, message: "invalid number" })?;
        if !f.is_finite() {
            return Err(JsonError::NonFinite { offset: start });
        }
        Ok(Document::Float(f))
    }
}

/// What to do with a malformed JSONL line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OnError {
    #[default]
    FailFast,
    Skip,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Line { line: usize, source: JsonError },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub error: JsonError,
}

/// Documents read from a JSONL corpus, with 1-based source line numbers.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub lines: Vec<usize>,
    pub skipped: Vec<LineError>,
}

pub fn parse_jsonl(text: &str, on_error: OnError) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match parse_object(raw) {
            Ok(doc) => {
                corpus.documents.push(doc);
                corpus.lines.push(line);
            }
            Err(error) => match on_error {
                OnError::FailFast => return Err(CorpusError::Line { line, source: error }),
                OnError::Skip => corpus.skipped.push(LineError { line, error }),
            },
        }
    }
    Ok(corpus)
}

pub fn load_jsonl(path: impl AsRef<Path>, on_error: OnError) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    parse_jsonl(&text, on_error)
}

/// One serialized document per line, each line terminated by `\n`.
pub fn to_jsonl<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    let mut out = String::new();
    for doc in docs {
        write_json(&mut out, doc);
        out.push('\n');
    }
    out
}

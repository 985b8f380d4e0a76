//! Deterministic pushdown automaton over token sequences.
//!
//! The automaton serves three purposes: it decides which sequences are valid,
//! it records the stack contents at every position (the input to key/value
//! position encodings), and it yields the set of grammatical next tokens used
//! to mask logits during training and decoding.
//!
//! Transitions, for the token consumed at each step:
//!
//! | control            | token                    | stack effect                          |
//! |--------------------|--------------------------|---------------------------------------|
//! | `Begin`            | `Start`                  | push `Obj`                            |
//! | `ExpectKeyOrClose` | `Key(k)`                 | push `Key(k)`                         |
//! | `ExpectKeyOrClose` | `End` (depth 1)          | pop `Obj`, accept                     |
//! | `ExpectKeyOrClose` | `ObjEnd` (depth > 1)     | pop `Obj`, complete value             |
//! | `ExpectValue`      | primitive or `Unknown`   | complete value                        |
//! | `ExpectValue`      | `ObjStart`               | push `Obj`                            |
//! | `ExpectValue`      | `Array(0)`               | complete value                        |
//! | `ExpectValue`      | `Array(n)`, n ≥ 1        | push `Array(n)`                       |
//! | `Accepted`         | `Pad`                    | none                                  |
//!
//! The recorded stack for a step is taken after its push and before its pops.
//! Completing a value pops a `Key`, or decrements the `Array` counter on top,
//! cascading upwards when the counter reaches zero.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::tokenizer::Token;
use crate::vocab::{TokenClass, TokenId, Vocabulary, END, OBJ_END, OBJ_START, PAD, START, UNKNOWN};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StackSymbol {
    Obj,
    Key(String),
    /// Elements remaining in the enclosing array, counting the current one.
    Array(usize),
}

impl StackSymbol {
    /// The vocabulary token whose embedding represents this symbol.
    pub fn token(&self) -> Token {
        match self {
            StackSymbol::Obj => Token::Obj,
            StackSymbol::Key(k) => Token::Key(k.clone()),
            StackSymbol::Array(n) => Token::Array(*n),
        }
    }
}

impl fmt::Display for StackSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.token().fmt(f)
    }
}

pub type RecordedStack = Vec<StackSymbol>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Control {
    Begin,
    ExpectKeyOrClose,
    ExpectValue,
    Accepted,
}

/// Which tokens may come next, by category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValidSet {
    Start,
    /// Any value token, any array token, `ObjStart` or `Unknown`.
    Value,
    /// Any key or `End`.
    KeyOrEnd,
    /// Any key or `ObjEnd`.
    KeyOrObjEnd,
    Pad,
    /// Every token; used when guardrails are disabled.
    All,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid transition at position {position}: {token} in state {control:?}")]
pub struct TransitionError {
    pub control: Control,
    pub token: Token,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutomatonState {
    control: Control,
    stack: Vec<StackSymbol>,
    /// Keys emitted so far at each open object level, when tracked.
    keys_in_scope: Option<Vec<HashSet<String>>>,
    consumed: usize,
}

impl Default for AutomatonState {
    fn default() -> Self {
        Self::new()
    }
}

impl AutomatonState {
    pub fn new() -> Self {
        AutomatonState { control: Control::Begin, stack: Vec::new(), keys_in_scope: None, consumed: 0 }
    }

    /// An automaton that additionally rejects a key repeated within one object.
    pub fn with_unique_keys() -> Self {
        AutomatonState { keys_in_scope: Some(Vec::new()), ..Self::new() }
    }

    pub fn control(&self) -> Control {
        self.control
    }

    pub fn stack(&self) -> &[StackSymbol] {
        &self.stack
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn is_accepted(&self) -> bool {
        self.control == Control::Accepted
    }

    pub fn valid_set(&self) -> ValidSet {
        match self.control {
            Control::Begin => ValidSet::Start,
            Control::ExpectValue => ValidSet::Value,
            Control::ExpectKeyOrClose if self.stack.len() == 1 => ValidSet::KeyOrEnd,
            Control::ExpectKeyOrClose => ValidSet::KeyOrObjEnd,
            Control::Accepted => ValidSet::Pad,
        }
    }

    /// Keys already used in the innermost open object, if tracked.
    pub fn keys_in_current_object(&self) -> Option<&HashSet<String>> {
        self.keys_in_scope.as_ref().and_then(|levels| levels.last())
    }

    fn reject(&self, token: &Token) -> TransitionError {
        TransitionError { control: self.control, token: token.clone(), position: self.consumed }
    }

    /// Consumes one token and returns the recorded stack for its position.
    /// On error the state is left unchanged.
    pub fn step(&mut self, token: &Token) -> Result<RecordedStack, TransitionError> {
        let recorded = match (self.control, token) {
            (Control::Begin, Token::Start) => {
                self.stack.push(StackSymbol::Obj);
                self.open_scope();
                self.control = Control::ExpectKeyOrClose;
                self.stack.clone()
            }
            (Control::ExpectKeyOrClose, Token::Key(k)) => {
                if let Some(levels) = &mut self.keys_in_scope {
                    let scope = levels.last_mut().expect("open object scope");
                    if scope.contains(k) {
                        return Err(self.reject(token));
                    }
                    scope.insert(k.clone());
                }
                self.stack.push(StackSymbol::Key(k.clone()));
                self.control = Control::ExpectValue;
                self.stack.clone()
            }
            (Control::ExpectKeyOrClose, Token::End) if self.stack.len() == 1 => {
                let recorded = self.stack.clone();
                self.stack.pop();
                self.close_scope();
                self.control = Control::Accepted;
                recorded
            }
            (Control::ExpectKeyOrClose, Token::ObjEnd) if self.stack.len() > 1 => {
                let recorded = self.stack.clone();
                self.stack.pop();
                self.close_scope();
                self.complete_value();
                recorded
            }
            (Control::ExpectValue, Token::Value(_) | Token::Unknown | Token::Array(0)) => {
                let recorded = self.stack.clone();
                self.complete_value();
                recorded
            }
            (Control::ExpectValue, Token::ObjStart) => {
                self.stack.push(StackSymbol::Obj);
                self.open_scope();
                self.control = Control::ExpectKeyOrClose;
                self.stack.clone()
            }
            (Control::ExpectValue, Token::Array(n)) => {
                self.stack.push(StackSymbol::Array(*n));
                self.stack.clone()
            }
            (Control::Accepted, Token::Pad) => Vec::new(),
            _ => return Err(self.reject(token)),
        };
        self.consumed += 1;
        Ok(recorded)
    }

    fn open_scope(&mut self) {
        if let Some(levels) = &mut self.keys_in_scope {
            levels.push(HashSet::new());
        }
    }

    fn close_scope(&mut self) {
        if let Some(levels) = &mut self.keys_in_scope {
            levels.pop();
        }
    }

    fn complete_value(&mut self) {
        loop {
            match self.stack.last() {
                Some(StackSymbol::Key(_)) => {
                    self.stack.pop();
                    self.control = Control::ExpectKeyOrClose;
                    return;
                }
                Some(&StackSymbol::Array(remaining)) => {
                    self.stack.pop();
                    if remaining > 1 {
                        self.stack.push(StackSymbol::Array(remaining - 1));
                        self.control = Control::ExpectValue;
                        return;
                    }
                }
                Some(StackSymbol::Obj) | None => {
                    self.control = Control::ExpectKeyOrClose;
                    return;
                }
            }
        }
    }
}

/// Per-category validity masks over a vocabulary.
#[derive(Debug, Clone)]
pub struct GrammarMasks {
    start: Vec<bool>,
    value: Vec<bool>,
    key_or_end: Vec<bool>,
    key_or_obj_end: Vec<bool>,
    pad: Vec<bool>,
    all: Vec<bool>,
}

impl GrammarMasks {
    pub fn new(vocab: &Vocabulary) -> Self {
        let size = vocab.len();
        let only = |id: TokenId| {
            let mut m = vec![false; size];
            m[id as usize] = true;
            m
        };
        let classes: Vec<TokenClass> = vocab.tokens().iter().map(TokenClass::of).collect();
        let mut value: Vec<bool> =
            classes.iter().map(|c| matches!(c, TokenClass::Value | TokenClass::Array)).collect();
        value[OBJ_START as usize] = true;
        value[UNKNOWN as usize] = true;
        let keys: Vec<bool> = classes.iter().map(|c| *c == TokenClass::Key).collect();
        let mut key_or_end = keys.clone();
        key_or_end[END as usize] = true;
        let mut key_or_obj_end = keys;
        key_or_obj_end[OBJ_END as usize] = true;
        GrammarMasks {
            start: only(START),
            value,
            key_or_end,
            key_or_obj_end,
            pad: only(PAD),
            all: vec![true; size],
        }
    }

    pub fn mask(&self, set: ValidSet) -> &[bool] {
        match set {
            ValidSet::Start => &self.start,
            ValidSet::Value => &self.value,
            ValidSet::KeyOrEnd => &self.key_or_end,
            ValidSet::KeyOrObjEnd => &self.key_or_obj_end,
            ValidSet::Pad => &self.pad,
            ValidSet::All => &self.all,
        }
    }
}

/// Boolean mask over vocabulary ids: `mask[i]` iff stepping with token `i`
/// succeeds. Keys already used in the current object are excluded when the
/// state tracks them.
pub fn valid_next(state: &AutomatonState, vocab: &Vocabulary, masks: &GrammarMasks) -> Vec<bool> {
    let mut mask = masks.mask(state.valid_set()).to_vec();
    if let Some(used) = state.keys_in_current_object() {
        for key in used {
            if let Some(id) = vocab.id(&Token::Key(key.clone())) {
                mask[id as usize] = false;
            }
        }
    }
    mask
}

/// Whether the sequence, ignoring trailing pads, is a complete document.
pub fn accepts(tokens: &[Token]) -> bool {
    let mut state = AutomatonState::new();
    tokens.iter().all(|t| state.step(t).is_ok()) && state.is_accepted()
}

/// The recorded stack at every position of the sequence.
pub fn stack_trace(tokens: &[Token]) -> Result<Vec<RecordedStack>, TransitionError> {
    let mut state = AutomatonState::new();
    tokens.iter().map(|t| state.step(t)).collect()
}

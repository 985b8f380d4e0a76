//! `key = value` text files, used for configuration and checkpoint manifests.
//!
//! One pair per line; blank lines and lines starting with `#` are skipped.
//! Keys are unique and keep file order.

use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    Malformed { line: usize },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { key: String, line: usize },
    #[error("missing key {0:?}")]
    Missing(String),
    #[error("key {key:?}: cannot parse {value:?}: {message}")]
    Invalid { key: String, value: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvFile {
    entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut file = KvFile::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(KvError::Malformed { line: i + 1 })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError::Malformed { line: i + 1 });
            }
            if file.get(key).is_some() {
                return Err(KvError::Duplicate { key: key.to_string(), line: i + 1 });
            }
            file.entries.push((key.to_string(), value.trim().to_string()));
        }
        Ok(file)
    }

    /// Sets `key`, replacing an existing value in place.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        assert!(!key.contains('=') && !key.contains('\n') && !value.contains('\n'), "unrepresentable entry");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key).ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn parse_value<V: FromStr>(&self, key: &str) -> Result<Option<V>, KvError>
    where
        V::Err: Display,
    {
        self.get(key)
            .map(|value| {
                value.parse().map_err(|e: V::Err| KvError::Invalid {
                    key: key.to_string(),
                    value: value.to_string(),
                    message: e.to_string(),
                })
            })
            .transpose()
    }

    pub fn require_value<V: FromStr>(&self, key: &str) -> Result<V, KvError>
    where
        V::Err: Display,
    {
        self.parse_value(key)?.ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

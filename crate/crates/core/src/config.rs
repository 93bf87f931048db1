//! `key=value` configuration text.
//!
//! One assignment per line; blank lines and `#` comments are ignored.
//! Keys are looked up by the component that owns them, and anything left
//! over is reported so typos do not go unnoticed.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("{key}: cannot parse {value:?}: {msg}")]
    Value { key: String, value: String, msg: String },
    #[error("unknown config key(s): {0}")]
    Unknown(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Removes and parses `key` if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e: T::Err| ConfigError::Value {
                key: key.to_string(),
                value: v,
                msg: e.to_string(),
            }),
        }
    }

    /// Assigns `*slot` from `key` if present.
    pub fn take_into<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<(), ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Keys starting with `prefix.`, with the prefix stripped, removed from
    /// `self`.
    pub fn split_prefix(&mut self, prefix: &str) -> KeyValues {
        let dotted = format!("{prefix}.");
        let keys: Vec<String> = self.entries.keys().filter(|k| k.starts_with(&dotted)).cloned().collect();
        let mut out = KeyValues::default();
        for k in keys {
            let v = self.entries.remove(&k).unwrap();
            out.entries.insert(k[dotted.len()..].to_string(), v);
        }
        out
    }

    /// Errors if any key was not consumed.
    pub fn finish(self) -> Result<(), ConfigError> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Unknown(
                self.entries.keys().cloned().collect::<Vec<_>>().join(", "),
            ))
        }
    }
}

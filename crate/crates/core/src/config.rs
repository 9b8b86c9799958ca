//! Flat `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, values are typed on
//! access (ints, floats, names, comma-separated lists). CLI flags overwrite
//! parsed keys via [`Config::set`].

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Flag override; flags win over file values.
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse_as<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("key '{key}': expected {what}, got '{raw}'"))
            }),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse_as(key, "a nonnegative integer")
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.parse_as(key, "a nonnegative integer")
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.parse_as(key, "a number")
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.parse_as(key, "true or false")
    }

    fn get_list<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<Vec<T>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>().map_err(|_| {
                        Error::Config(format!("key '{key}': expected {what} list, got '{raw}'"))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn get_usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.get_list(key, "an integer")
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get_list(key, "a number")
    }

    pub fn get_str_list(&self, key: &str) -> Option<Vec<String>> {
        self.values.get(key).map(|raw| {
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        })
    }

    /// Required-key variant of the typed getters.
    pub fn require_usize(&self, key: &str) -> Result<usize> {
        self.get_usize(key)?
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }
}

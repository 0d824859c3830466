//! Flat `key = value` run configuration.
//!
//! One assignment per line, `#` starts a comment. Values are numbers,
//! double-quoted strings, bare words (`true`, `split`, ...) or bracketed
//! comma-separated lists of numbers.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: unknown key `{key}`")]
    Unknown { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("line {line}: `{key}`: {message}")]
    Invalid { line: usize, key: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Str(String),
    Word(String),
    List(Vec<f64>),
}

impl Value {
    fn describe(&self) -> &'static str {
        match self {
            Value::Number(_) => "a number",
            Value::Str(_) => "a string",
            Value::Word(_) => "a bare word",
            Value::List(_) => "a list",
        }
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn parse_value(raw: &str, line: usize) -> Result<Value, ConfigError> {
    let err = |m: &str| ConfigError::Syntax { line, message: m.to_string() };
    if let Some(rest) = raw.strip_prefix('"') {
        let body = rest.strip_suffix('"').ok_or_else(|| err("unterminated string"))?;
        if body.contains('"') {
            return Err(err("stray quote inside string"));
        }
        return Ok(Value::Str(body.to_string()));
    }
    if let Some(rest) = raw.strip_prefix('[') {
        let body = rest.strip_suffix(']').ok_or_else(|| err("unterminated list"))?;
        if body.trim().is_empty() {
            return Ok(Value::List(Vec::new()));
        }
        let items = body
            .split(',')
            .map(|item| parse_number(item.trim()).ok_or_else(|| err(&format!("list item `{}` is not a number", item.trim()))))
            .collect::<Result<_, _>>()?;
        return Ok(Value::List(items));
    }
    // Long integers stay textual so 64-bit seeds survive exactly.
    let long_integer = raw.len() > 15 && raw.bytes().all(|b| b.is_ascii_digit());
    if let Some(x) = parse_number(raw).filter(|_| !long_integer) {
        return Ok(Value::Number(x));
    }
    if raw.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.') {
        return Ok(Value::Word(raw.to_string()));
    }
    Err(err(&format!("cannot parse value `{raw}`")))
}

/// Parsed assignments, each remembering its line.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, Value)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            // `#` inside a string is content, not a comment.
            let mut in_str = false;
            let mut cut = raw.len();
            for (k, c) in raw.char_indices() {
                match c {
                    '"' => in_str = !in_str,
                    '#' if !in_str => {
                        cut = k;
                        break;
                    }
                    _ => {}
                }
            }
            let content = raw[..cut].trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, message: "expected `key = value`".into() })?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(ConfigError::Syntax { line, message: format!("bad key `{key}`") });
            }
            let value = parse_value(value.trim(), line)?;
            if entries.insert(key.to_string(), (line, value)).is_some() {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
        }
        Ok(Self { entries })
    }

    /// Fails on the first key not in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        let mut unknown: Vec<(usize, &String)> =
            self.entries.iter().filter(|(k, _)| !allowed.contains(&k.as_str())).map(|(k, (l, _))| (*l, k)).collect();
        unknown.sort();
        match unknown.first() {
            Some((line, key)) => Err(ConfigError::Unknown { line: *line, key: (*key).clone() }),
            None => Ok(()),
        }
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(l, _)| *l)
    }

    pub fn invalid(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { line: self.line_of(key), key: key.into(), message: message.into() }
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key).map(|(_, v)| v)
    }

    fn mismatch(&self, key: &str, want: &str) -> ConfigError {
        let got = self.get(key).map_or("nothing", Value::describe);
        self.invalid(key, format!("expected {want}, got {got}"))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn number(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Number(x)) => Ok(Some(*x)),
            Some(_) => Err(self.mismatch(key, "a number")),
        }
    }

    pub fn require_number(&self, key: &str) -> Result<f64, ConfigError> {
        self.number(key)?.ok_or_else(|| ConfigError::Missing(key.into()))
    }

    pub fn count(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.number(key)? {
            None => Ok(None),
            Some(x) if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 => Ok(Some(x as usize)),
            Some(_) => Err(self.invalid(key, "expected a nonnegative integer")),
        }
    }

    pub fn require_count(&self, key: &str) -> Result<usize, ConfigError> {
        self.count(key)?.ok_or_else(|| ConfigError::Missing(key.into()))
    }

    /// Seeds may exceed `2^53`, so they are read from the raw token.
    pub fn seed(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Word(w)) => w.parse().map(Some).map_err(|_| self.invalid(key, "expected an unsigned integer")),
            Some(Value::Number(x)) if *x >= 0.0 && x.fract() == 0.0 && *x < 9.007_199_254_740_992e15 => Ok(Some(*x as u64)),
            Some(_) => Err(self.invalid(key, "expected an unsigned integer")),
        }
    }

    pub fn string(&self, key: &str) -> Result<Option<&str>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Str(s)) | Some(Value::Word(s)) => Ok(Some(s)),
            Some(_) => Err(self.mismatch(key, "a string")),
        }
    }

    /// A string, or a bare number such as `b = 0` rendered back to text.
    pub fn expression(&self, key: &str) -> Result<Option<String>, ConfigError> {
        match self.get(key) {
            Some(Value::Number(x)) => Ok(Some(x.to_string())),
            _ => Ok(self.string(key)?.map(str::to_string)),
        }
    }

    pub fn require_string(&self, key: &str) -> Result<&str, ConfigError> {
        self.string(key)?.ok_or_else(|| ConfigError::Missing(key.into()))
    }

    pub fn flag(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Word(w)) if w == "true" => Ok(Some(true)),
            Some(Value::Word(w)) if w == "false" => Ok(Some(false)),
            Some(_) => Err(self.mismatch(key, "true or false")),
        }
    }

    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::List(v)) => Ok(Some(v.clone())),
            Some(Value::Number(x)) => Ok(Some(vec![*x])),
            Some(_) => Err(self.mismatch(key, "a list of numbers")),
        }
    }

    pub fn count_list(&self, key: &str) -> Result<Option<Vec<usize>>, ConfigError> {
        match self.list(key)? {
            None => Ok(None),
            Some(v) => v
                .into_iter()
                .map(|x| if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 { Ok(x as usize) } else { Err(self.invalid(key, "expected nonnegative integers")) })
                .collect::<Result<_, _>>()
                .map(Some),
        }
    }
}

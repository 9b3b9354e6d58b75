//! Flat `key = value` config files and flag/file/default resolution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Every key a config file may set. Names match the long flags.
pub const KNOWN_KEYS: &[&str] = &[
    "dataset",
    "family",
    "templates",
    "format",
    "seed",
    "jobs",
    "temperature",
    "margin",
    "lambda",
    "negatives",
    "epochs",
    "eval-every",
    "step-size",
    "batch-size",
    "hash-dim",
    "hidden-dim",
    "scorer",
    "checkpoint",
    "mock-table",
    "mock-default",
    "endpoint",
    "timeout-ms",
    "subsample",
    "heuristic",
];

/// Reads `key = value` lines; `#` starts a comment. Underscores in keys
/// are accepted as dashes.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config line {}: expected key = value", i + 1))
        })?;
        let key = k.trim().replace('_', "-");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!(
                "config line {}: unknown key {key:?}",
                i + 1
            )));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!(
                "config line {}: duplicate key {key:?}",
                i + 1
            )));
        }
    }
    Ok(out)
}

/// Resolves settings with precedence flag > config file > default and
/// remembers every resolved value for logging.
#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<&'static str, String>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> Result<Self, CliError> {
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    fn file_value<T>(&self, key: &'static str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.file.get(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key {key}: {e}"))),
            None => Ok(None),
        }
    }

    pub fn get<T>(&mut self, key: &'static str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        Ok(self.opt(key, flag)?.unwrap_or_else(|| {
            self.resolved.insert(key, default.to_string());
            default
        }))
    }

    pub fn opt<T>(&mut self, key: &'static str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &v {
            self.resolved.insert(key, v.to_string());
        }
        Ok(v)
    }

    /// Records a value that only comes from a flag, such as a path.
    pub fn note(&mut self, key: &'static str, value: impl Display) {
        self.resolved.insert(key, value.to_string());
    }

    pub fn log(&self, command: &str) {
        eprintln!("# {command}");
        for (k, v) in &self.resolved {
            eprintln!("{k} = {v}");
        }
    }
}

//! Flat `key = value` config files and the process-level failure type.
//!
//! A config file holds one key per line; keys are the kebab-case long-flag
//! names. Blank lines and lines starting with `#` are skipped. Unknown keys
//! are rejected. Precedence everywhere is flag > file > built-in default.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

/// Terminal failure carrying the process exit code: 1 for verification or
/// metric failures, 2 for usage and input errors.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn check(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<narm::Error> for Failure {
    fn from(e: narm::Error) -> Self {
        // Blown-up numerics are a failed run, not a misuse of the tool.
        let code = match &e {
            narm::Error::NonFinite(_) | narm::Error::NonFiniteGradient(_) => 1,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

/// Every key a config file may set, across all subcommands.
pub const KNOWN_KEYS: &[&str] = &[
    // paths
    "input",
    "out-dir",
    "model",
    "examples",
    "sessions",
    "vocab",
    "output",
    // click-log column schema
    "delimiter",
    "has-header",
    "session-col",
    "time-col",
    "item-col",
    "max-malformed-fraction",
    // filtering and split
    "min-item-support",
    "min-session-len",
    "filter-fixpoint",
    "holdout-seconds",
    "fraction",
    "truncation",
    // model
    "embedding-dim",
    "hidden-dim",
    "feature",
    "normalize-attention",
    "use-biases",
    "dropout-embed",
    "dropout-repr",
    // training
    "learning-rate",
    "batch-size",
    "epochs",
    "validation-fraction",
    "clip-norm",
    "selection-k",
    "seed",
    // scoring
    "scorer",
    "knn-lambda",
    "knn-exclude-current",
    "k",
    "per-length",
    "items",
];

pub struct FileConfig {
    values: HashMap<String, String>,
    source: String,
}

impl FileConfig {
    pub fn empty() -> Self {
        FileConfig { values: HashMap::new(), source: String::new() }
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("config file {}: {e}", path.display())))?;
        let mut values = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Failure::usage(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Failure::usage(format!(
                    "{}:{}: unknown config key '{}'",
                    path.display(),
                    lineno + 1,
                    key
                )));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(FileConfig { values, source: path.display().to_string() })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parsed value for `key`, `None` when the file does not set it.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: fmt::Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "unlisted config key {key}");
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                Failure::usage(format!("{}: key '{key}': {e} (value '{raw}')", self.source))
            }),
        }
    }
}

/// One literal byte, or the escape `\t` for tab.
pub fn parse_delimiter(s: &str) -> Result<u8, Failure> {
    match s.as_bytes() {
        [b] => Ok(*b),
        [b'\\', b't'] => Ok(b'\t'),
        _ => Err(Failure::usage(format!("delimiter must be a single byte or \\t, got '{s}'"))),
    }
}

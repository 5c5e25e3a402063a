//! Flat `key = value` experiment files, layered under command-line flags.
//!
//! ```text
//! # comment
//! n = [4, 8, 12]
//! sigma = [1, n/4]
//! shots = exact
//! ```

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde_json::Value;

use crate::CliError;

fn config_error<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(msg.into()))
}

/// Parsed config file: every key maps to one or more raw values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, Vec<String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return config_error(format!("line {}: expected `key = value`", lineno + 1));
            };
            let key = key.trim().to_ascii_lowercase();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return config_error(format!("line {}: bad key '{key}'", lineno + 1));
            }
            let value = value.trim();
            let values: Vec<String> = match value.strip_prefix('[') {
                Some(rest) => {
                    let Some(inner) = rest.strip_suffix(']') else {
                        return config_error(format!("line {}: unterminated list", lineno + 1));
                    };
                    inner
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                }
                None => vec![value.to_string()],
            };
            if values.is_empty() || values.iter().any(|v| v.is_empty()) {
                return config_error(format!("line {}: '{key}' has no value", lineno + 1));
            }
            if entries.insert(key.clone(), values).is_some() {
                return config_error(format!("line {}: duplicate key '{key}'", lineno + 1));
            }
        }
        Ok(ConfigFile { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Flags over config over defaults. Every lookup is echoed into the manifest,
/// and config keys nobody asked for are reported as errors.
#[derive(Debug)]
pub struct Settings {
    flags: BTreeMap<String, Vec<String>>,
    file: ConfigFile,
    used: RefCell<BTreeSet<String>>,
    echo: RefCell<BTreeMap<String, Value>>,
}

impl Settings {
    pub fn new(file: ConfigFile) -> Self {
        Settings {
            flags: BTreeMap::new(),
            file,
            used: RefCell::default(),
            echo: RefCell::default(),
        }
    }

    /// Register a command-line value; empty lists mean the flag was absent.
    pub fn flag(&mut self, key: &str, values: Vec<String>) {
        if !values.is_empty() {
            self.flags.insert(key.to_string(), values);
        }
    }

    pub fn flag_opt<T: ToString>(&mut self, key: &str, value: Option<T>) {
        self.flag(key, value.map(|v| v.to_string()).into_iter().collect());
    }

    fn raw(&self, key: &str) -> Option<&Vec<String>> {
        self.used.borrow_mut().insert(key.to_string());
        self.flags.get(key).or_else(|| self.file.entries.get(key))
    }

    fn record(&self, key: &str, values: &[String], list: bool) {
        let v = if list || values.len() != 1 {
            Value::Array(values.iter().cloned().map(Value::String).collect())
        } else {
            Value::String(values[0].clone())
        };
        self.echo.borrow_mut().insert(key.to_string(), v);
    }

    fn convert<T: FromStr>(key: &str, raw: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        raw.parse()
            .map_err(|e| CliError::Config(format!("{key} = {raw}: {e}")))
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let Some(values) = self.raw(key).cloned() else {
            return Ok(None);
        };
        if values.len() != 1 {
            return config_error(format!(
                "'{key}' takes a single value, got {}",
                values.len()
            ));
        }
        self.record(key, &values, false);
        Self::convert(key, &values[0]).map(Some)
    }

    pub fn get_or<T: FromStr + ToString>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        match self.opt(key)? {
            Some(v) => Ok(v),
            None => {
                self.record(key, &[default.to_string()], false);
                Ok(default)
            }
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.opt(key)?
            .ok_or_else(|| CliError::Config(format!("missing required key '{key}'")))
    }

    pub fn list_opt<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: Display,
    {
        let Some(values) = self.raw(key).cloned() else {
            return Ok(None);
        };
        if values.is_empty() {
            return config_error(format!("list '{key}' is empty"));
        }
        self.record(key, &values, true);
        values
            .iter()
            .map(|v| Self::convert(key, v))
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    pub fn list_or<T: FromStr + ToString>(
        &self,
        key: &str,
        default: Vec<T>,
    ) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        match self.list_opt(key)? {
            Some(v) => Ok(v),
            None => {
                let raw: Vec<String> = default.iter().map(|d| d.to_string()).collect();
                self.record(key, &raw, true);
                Ok(default)
            }
        }
    }

    pub fn require_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        self.list_opt(key)?
            .ok_or_else(|| CliError::Config(format!("missing required key '{key}'")))
    }

    /// Fail on config keys that the command never looked up.
    pub fn finish(&self) -> Result<(), CliError> {
        let used = self.used.borrow();
        let unknown: Vec<&String> = self
            .file
            .entries
            .keys()
            .filter(|k| !used.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            config_error(format!(
                "unknown keys for this command: {}",
                unknown
                    .iter()
                    .map(|k| k.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        }
    }

    pub fn echo(&self) -> Value {
        Value::Object(self.echo.borrow().clone().into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scalars_lists_and_comments() {
        let c =
            ConfigFile::parse("# sweep\nn = [4, 8 ,12]\nshots = exact  # inline\nsigma=[n/4]\n")
                .unwrap();
        let s = Settings::new(c);
        assert_eq!(s.require_list::<usize>("n").unwrap(), vec![4, 8, 12]);
        assert_eq!(s.require::<String>("shots").unwrap(), "exact");
        assert_eq!(s.require_list::<String>("sigma").unwrap(), vec!["n/4"]);
        s.finish().unwrap();
    }

    #[test]
    fn rejects_malformed_lines() {
        for bad in [
            "n 4",
            "n = [1, 2",
            "= 3",
            "n = 1\nn = 2",
            "n = []",
            "bad key = 1",
        ] {
            assert!(ConfigFile::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn flags_override_and_unknown_keys_fail() {
        let mut s = Settings::new(ConfigFile::parse("draws = 10\ntypo = 1").unwrap());
        s.flag_opt("draws", Some(20));
        assert_eq!(s.require::<usize>("draws").unwrap(), 20);
        assert_eq!(s.get_or("epsilon", 0.5).unwrap(), 0.5);
        assert!(matches!(s.finish(), Err(CliError::Config(_))));
        assert_eq!(s.echo()["epsilon"], Value::String("0.5".into()));
    }

    #[test]
    fn type_errors_are_config_errors() {
        let s = Settings::new(ConfigFile::parse("n = four\nm = [1, 2]").unwrap());
        assert!(matches!(s.require::<usize>("n"), Err(CliError::Config(_))));
        assert!(matches!(s.require::<usize>("m"), Err(CliError::Config(_))));
    }
}

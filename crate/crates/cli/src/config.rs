//! Resolved experiment settings: built-in defaults, then a `key=value` file,
//! then command-line flags.
//!
//! Every output starts with one `#@ key=value` line per resolved setting.
//! Reading an output back with `--config` picks up only those lines, so the
//! run can be repeated exactly.

use std::collections::BTreeMap;
use std::fmt::{self, Display};
use std::path::Path;
use std::str::FromStr;

pub const HEADER_PREFIX: &str = "#@";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = Result<T, ConfigError>;

/// Parses a settings file.
///
/// A file holding any `#@` header lines is treated as an earlier output and
/// only those lines are read. Otherwise every non-blank line that does not
/// start with `#` must be `key=value`.
pub fn parse_settings(text: &str) -> ConfigResult<Vec<(usize, String, String)>> {
    let from_header = text
        .lines()
        .any(|l| l.trim_start().starts_with(HEADER_PREFIX));
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let body = if let Some(rest) = line.strip_prefix(HEADER_PREFIX) {
            rest.trim()
        } else if from_header || line.is_empty() || line.starts_with('#') {
            continue;
        } else {
            line
        };
        let (key, value) = body.split_once('=').ok_or_else(|| {
            ConfigError(format!(
                "line {}: expected key=value, got `{body}`",
                idx + 1
            ))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError(format!("line {}: empty key", idx + 1)));
        }
        out.push((idx + 1, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    command: String,
    order: Vec<&'static str>,
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn new(command: &str, defaults: &[(&'static str, &str)]) -> Self {
        Settings {
            command: command.to_string(),
            order: defaults.iter().map(|(k, _)| *k).collect(),
            values: defaults.iter().map(|(k, v)| (*k, v.to_string())).collect(),
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn slot(&self, key: &str) -> Option<&'static str> {
        self.order.iter().copied().find(|k| *k == key)
    }

    /// Applies a settings file. A `command` entry must name this command.
    pub fn merge_file(&mut self, path: &Path) -> ConfigResult<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        for (line, key, value) in parse_settings(&text)? {
            if key == "command" {
                if value != self.command {
                    return Err(ConfigError(format!(
                        "{}:{line}: config is for `{value}`, not `{}`",
                        path.display(),
                        self.command
                    )));
                }
                continue;
            }
            let slot = self.slot(&key).ok_or_else(|| {
                ConfigError(format!(
                    "{}:{line}: unknown key `{key}` for `{}`",
                    path.display(),
                    self.command
                ))
            })?;
            self.values.insert(slot, value);
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> ConfigResult<()> {
        let slot = self
            .slot(key)
            .ok_or_else(|| ConfigError(format!("unknown key `{key}` for `{}`", self.command)))?;
        self.values.insert(slot, value.into());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("`{key}` is not a setting of `{}`", self.command))
    }

    pub fn is_auto(&self, key: &str) -> bool {
        self.raw(key) == "auto"
    }

    pub fn get<T>(&self, key: &str) -> ConfigResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| ConfigError(format!("invalid value for `{key}`: `{raw}` ({e})")))
    }

    /// `None` when the setting is `auto`.
    pub fn get_auto<T>(&self, key: &str) -> ConfigResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if self.is_auto(key) {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn get_list<T>(&self, key: &str) -> ConfigResult<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.split(',')
            .map(|part| {
                part.trim()
                    .parse()
                    .map_err(|e| ConfigError(format!("invalid entry `{part}` in `{key}` ({e})")))
            })
            .collect()
    }

    /// The `#@` header block, command first, then settings in declaration order.
    pub fn header(&self) -> String {
        let mut out = format!("{HEADER_PREFIX} command={}\n", self.command);
        for key in &self.order {
            out.push_str(&format!("{HEADER_PREFIX} {key}={}\n", self.values[key]));
        }
        out
    }
}

/// `Err` naming `key` unless `ok`.
pub fn ensure(ok: bool, key: &str, what: impl Display) -> ConfigResult<()> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError(format!("invalid value for `{key}`: {what}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_file() {
        let parsed = parse_settings("# comment\n\nn = 16\nprotocol=pairwise\n").unwrap();
        assert_eq!(parsed[0], (3, "n".into(), "16".into()));
        assert_eq!(parsed[1], (4, "protocol".into(), "pairwise".into()));
        let err = parse_settings("n=3\nbogus\n").unwrap_err();
        assert!(err.0.starts_with("line 2"), "{err}");
    }

    #[test]
    fn header_file_ignores_data_rows() {
        let text = "#@ command=converge\n#@ n=16\n# note\nn,lambda2\n16,0.9\n";
        let parsed = parse_settings(text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[1].1, "n");
    }

    #[test]
    fn header_round_trip() {
        let mut s = Settings::new("converge", &[("n", "100"), ("eps", "0.01")]);
        s.set("eps", "0.001").unwrap();
        let text = s.header();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        std::fs::write(&path, format!("{text}a,b\n1,2\n")).unwrap();
        let mut t = Settings::new("converge", &[("n", "100"), ("eps", "0.01")]);
        t.merge_file(&path).unwrap();
        assert_eq!(s, t);
        let mut wrong = Settings::new("scaling", &[("n", "1"), ("eps", "0.01")]);
        assert!(wrong.merge_file(&path).is_err());
    }

    #[test]
    fn typed_access() {
        let s = Settings::new(
            "x",
            &[("n", "12"), ("r", "auto"), ("ns", "1, 2,3"), ("bad", "x")],
        );
        assert_eq!(s.get::<usize>("n").unwrap(), 12);
        assert_eq!(s.get_auto::<f64>("r").unwrap(), None);
        assert_eq!(s.get_list::<u32>("ns").unwrap(), vec![1, 2, 3]);
        let err = s.get::<f64>("bad").unwrap_err();
        assert!(err.0.contains("`bad`"));
        assert!(Settings::new("x", &[]).clone().set("nope", "1").is_err());
    }
}

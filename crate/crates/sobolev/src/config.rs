//! Run configuration parsing.
//!
//! Two interchangeable input formats feed the CLI: a line-oriented
//! `key = value` file with `[section]` headers, and a JSON object of
//! sections. Both flatten into the same map. Consumers pull out the keys
//! they understand and then call [`ConfigMap::finish`], which turns any
//! leftover key into a hard error, so typos never silently fall back to
//! defaults.
//!
//! Grammar of the text format:
//!
//! ```text
//! file     := line*
//! line     := blank | comment | section | binding
//! comment  := '#' .*
//! section  := '[' name ']'
//! binding  := key '=' value          ; whitespace around both is trimmed
//! ```
//!
//! Keys before any section header live in the section named `""`. Values
//! are kept as strings until a typed getter interprets them.

use std::collections::BTreeMap;

use crate::error::{Result, SobolevError};

/// Flat section/key/value store with consumption tracking.
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    entries: BTreeMap<(String, String), String>,
    consumed: std::collections::BTreeSet<(String, String)>,
}

impl ConfigMap {
    /// Parse either format, sniffing JSON by a leading `{`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Self::parse_json(text)
        } else {
            Self::parse_text(text)
        }
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    SobolevError::Config(format!(
                        "line {}: unterminated section header `{line}`",
                        lineno + 1
                    ))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SobolevError::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(SobolevError::Config(format!(
                    "line {}: empty key",
                    lineno + 1
                )));
            }
            if entries
                .insert((section.clone(), key.clone()), value.trim().to_string())
                .is_some()
            {
                return Err(SobolevError::Config(format!(
                    "line {}: duplicate key `{key}` in section `[{section}]`",
                    lineno + 1
                )));
            }
        }
        Ok(ConfigMap {
            entries,
            consumed: Default::default(),
        })
    }

    pub fn parse_json(text: &str) -> Result<Self> {
        let root: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| SobolevError::Config(format!("invalid JSON config: {e}")))?;
        let obj = root.as_object().ok_or_else(|| {
            SobolevError::Config("JSON config must be an object".into())
        })?;
        let scalar = |v: &serde_json::Value| -> Result<String> {
            match v {
                serde_json::Value::String(s) => Ok(s.clone()),
                serde_json::Value::Number(n) => Ok(n.to_string()),
                serde_json::Value::Bool(b) => Ok(b.to_string()),
                other => Err(SobolevError::Config(format!(
                    "config values must be scalars, got {other}"
                ))),
            }
        };
        let mut entries = BTreeMap::new();
        for (k, v) in obj {
            match v {
                serde_json::Value::Object(section) => {
                    for (sk, sv) in section {
                        entries.insert((k.clone(), sk.clone()), scalar(sv)?);
                    }
                }
                other => {
                    entries.insert((String::new(), k.clone()), scalar(other)?);
                }
            }
        }
        Ok(ConfigMap {
            entries,
            consumed: Default::default(),
        })
    }

    /// Raw string lookup; marks the key consumed.
    pub fn take(&mut self, section: &str, key: &str) -> Option<String> {
        let id = (section.to_string(), key.to_string());
        let v = self.entries.get(&id).cloned();
        if v.is_some() {
            self.consumed.insert(id);
        }
        v
    }

    fn typed<T: std::str::FromStr>(
        &mut self,
        section: &str,
        key: &str,
        what: &str,
    ) -> Result<Option<T>> {
        match self.take(section, key) {
            None => Ok(None),
            Some(s) => s.parse::<T>().map(Some).map_err(|_| {
                SobolevError::Config(format!(
                    "key `{key}` in section `[{section}]`: `{s}` is not {what}"
                ))
            }),
        }
    }

    pub fn take_f64(&mut self, section: &str, key: &str) -> Result<Option<f64>> {
        self.typed(section, key, "a number")
    }

    pub fn take_usize(&mut self, section: &str, key: &str) -> Result<Option<usize>> {
        self.typed(section, key, "a nonnegative integer")
    }

    pub fn take_u64(&mut self, section: &str, key: &str) -> Result<Option<u64>> {
        self.typed(section, key, "a nonnegative integer")
    }

    pub fn take_bool(&mut self, section: &str, key: &str) -> Result<Option<bool>> {
        self.typed(section, key, "true or false")
    }

    /// Comma-separated list of numbers.
    pub fn take_f64_list(&mut self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(section, key) {
            None => Ok(None),
            Some(s) => s
                .split(',')
                .map(|p| {
                    p.trim().parse::<f64>().map_err(|_| {
                        SobolevError::Config(format!(
                            "key `{key}` in section `[{section}]`: `{p}` is not a number"
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    /// Comma-separated list of sizes.
    pub fn take_usize_list(
        &mut self,
        section: &str,
        key: &str,
    ) -> Result<Option<Vec<usize>>> {
        match self.take(section, key) {
            None => Ok(None),
            Some(s) => s
                .split(',')
                .map(|p| {
                    p.trim().parse::<usize>().map_err(|_| {
                        SobolevError::Config(format!(
                            "key `{key}` in section `[{section}]`: `{p}` is not an integer"
                        ))
                    })
                })
                .collect::<Result<Vec<usize>>>()
                .map(Some),
        }
    }

    /// Error out if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        let leftover: Vec<String> = self
            .entries
            .keys()
            .filter(|id| !self.consumed.contains(*id))
            .map(|(s, k)| {
                if s.is_empty() {
                    format!("`{k}`")
                } else {
                    format!("`{k}` in section `[{s}]`")
                }
            })
            .collect();
        if leftover.is_empty() {
            Ok(())
        } else {
            Err(SobolevError::Config(format!(
                "unknown config keys: {}",
                leftover.join(", ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_values() {
        let text = "\n# top\nseed = 7\n[gan]\neta = 1e-3\nwidths = 2, 32, 32, 1\n";
        let mut m = ConfigMap::parse(text).unwrap();
        assert_eq!(m.take_u64("", "seed").unwrap(), Some(7));
        assert_eq!(m.take_f64("gan", "eta").unwrap(), Some(1e-3));
        assert_eq!(
            m.take_usize_list("gan", "widths").unwrap(),
            Some(vec![2, 32, 32, 1])
        );
        m.finish().unwrap();
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let mut m = ConfigMap::parse("[gan]\neta = 1.0\ntypo_key = 3\n").unwrap();
        assert_eq!(m.take_f64("gan", "eta").unwrap(), Some(1.0));
        let err = m.finish().unwrap_err().to_string();
        assert!(err.contains("typo_key"), "{err}");
    }

    #[test]
    fn json_is_equivalent() {
        let mut m =
            ConfigMap::parse("{\"seed\": 7, \"gan\": {\"eta\": 0.001}}").unwrap();
        assert_eq!(m.take_u64("", "seed").unwrap(), Some(7));
        assert_eq!(m.take_f64("gan", "eta").unwrap(), Some(0.001));
        m.finish().unwrap();
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(ConfigMap::parse("[open\n").is_err());
        assert!(ConfigMap::parse("just a token\n").is_err());
        assert!(ConfigMap::parse("a = 1\na = 2\n").is_err());
        assert!(ConfigMap::parse(" = 2\n").is_err());
    }

    #[test]
    fn type_errors_name_the_key() {
        let mut m = ConfigMap::parse("[x]\nn = soon\n").unwrap();
        let err = m.take_usize("x", "n").unwrap_err().to_string();
        assert!(err.contains('n') && err.contains("soon"), "{err}");
    }
}

//! Plain `key = value` configuration files.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config line {line}: expected `key = value`, got {text:?}")]
pub struct ConfigError {
    pub line: usize,
    pub text: String,
}

/// Keys are kept sorted so that rendering is stable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    map.insert(k.trim().to_string(), v.trim().to_string());
                }
                _ => return Err(ConfigError { line: i + 1, text: raw.to_string() }),
            }
        }
        Ok(KeyValues(map))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.insert(key.into(), value.to_string());
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.0 {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render() {
        let kv = KeyValues::parse("# hdr\nb = 2\n\na=1=1\n").unwrap();
        assert_eq!(kv.get("a"), Some("1=1"));
        assert_eq!(kv.to_string(), "a = 1=1\nb = 2\n");
        assert_eq!(KeyValues::parse(&kv.to_string()).unwrap(), kv);
    }

    #[test]
    fn rejects_bare_words() {
        assert_eq!(KeyValues::parse("ok=1\nnope").unwrap_err().line, 2);
        assert!(KeyValues::parse("= 3").is_err());
    }

    #[test]
    fn merge_overrides() {
        let mut a = KeyValues::parse("x=1\ny=2").unwrap();
        a.merge(&KeyValues::parse("y=3").unwrap());
        assert_eq!(a.get("y"), Some("3"));
        assert_eq!(a.get("x"), Some("1"));
    }
}

//! Flat key=value configuration files.
//!
//! One key per line, '#' starts a comment, values are free text. Keys are
//! kept sorted; the canonical text (sorted key=value lines) feeds the
//! config hash recorded in every output file. Commands validate against
//! an allow-list, so misspelled keys fail loudly.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{raw}'", lineno + 1))
            })?;
            let k = k.trim();
            let v = v.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key '{k}'")));
            }
        }
        Ok(ConfigMap { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    /// Error on any key outside the allow-list.
    pub fn validate_keys(&self, allowed: &[&str]) -> Result<()> {
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .map(|k| k.as_str())
            .filter(|k| !allowed.contains(k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown keys: {} (allowed: {})",
                unknown.join(", "),
                allowed.join(", ")
            )))
        }
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        self.get_str(key).unwrap_or(default).to_string()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.entries
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("key '{key}': '{v}' is not an integer")))
            })
            .transpose()
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        Ok(self.get_u64(key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.u64_or(key, default as u64)? as usize)
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.entries
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("key '{key}': '{v}' is not a number")))
            })
            .transpose()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.get_f64(key)?.unwrap_or(default))
    }

    /// Comma-separated list value.
    pub fn list_or(&self, key: &str, default: &[&str]) -> Vec<String> {
        match self.get_str(key) {
            Some(v) => v
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
            None => default.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Sorted key=value lines, one per entry.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// sha256 of the canonical text, hex-encoded.
    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_text().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_canonicalize() {
        let cfg = ConfigMap::parse("b=2\n# comment\na = 1 # trailing\n\nc=x y\n").unwrap();
        assert_eq!(cfg.canonical_text(), "a=1\nb=2\nc=x y\n");
        assert_eq!(cfg.get_u64("a").unwrap(), Some(1));
        assert_eq!(cfg.get_str("c"), Some("x y"));
    }

    #[test]
    fn rejects_malformed_and_duplicates() {
        assert!(ConfigMap::parse("novalue\n").is_err());
        assert!(ConfigMap::parse("a=1\na=2\n").is_err());
    }

    #[test]
    fn unknown_keys_detected() {
        let cfg = ConfigMap::parse("lr=0.1\ntypo=3\n").unwrap();
        let err = cfg.validate_keys(&["lr", "steps"]).unwrap_err();
        assert!(format!("{err}").contains("typo"));
        assert!(cfg.validate_keys(&["lr", "typo"]).is_ok());
    }

    #[test]
    fn hash_is_stable_and_order_free() {
        let a = ConfigMap::parse("x=1\ny=2\n").unwrap();
        let b = ConfigMap::parse("y=2\nx=1\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ConfigMap::parse("x=1\ny=3\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn typed_getters_report_bad_values() {
        let cfg = ConfigMap::parse("lr=fast\n").unwrap();
        assert!(cfg.get_f64("lr").is_err());
        assert!(cfg.f64_or("missing", 0.5).unwrap() == 0.5);
    }

    #[test]
    fn list_parsing() {
        let cfg = ConfigMap::parse("scheds=d-full, d-dec ,d-quarter\n").unwrap();
        assert_eq!(
            cfg.list_or("scheds", &[]),
            vec!["d-full", "d-dec", "d-quarter"]
        );
        assert_eq!(cfg.list_or("other", &["a"]), vec!["a"]);
    }
}

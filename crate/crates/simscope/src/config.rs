//! `key = value` configuration files.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored. Keys
//! are long flag names without the dashes (`steps`, `latent-dim`;
//! underscores are accepted in place of dashes). `left`, `right` and
//! `n-sweep` take comma-separated lists. A key may be given once.

use std::path::Path;

use crate::fsutil;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigFile {
    pub entries: Vec<(String, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                path: origin.to_path_buf(),
                message: format!("line {}: expected `key = value`", no + 1),
            })?;
            let key = k.trim().replace('_', "-");
            let value = v.trim().to_string();
            if key.is_empty() {
                return Err(Error::Format { path: origin.to_path_buf(), message: format!("line {}: empty key", no + 1) });
            }
            if entries.iter().any(|(existing, _)| *existing == key) {
                return Err(Error::Format {
                    path: origin.to_path_buf(),
                    message: format!("line {}: `{key}` set twice", no + 1),
                });
            }
            entries.push((key, value));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format { path: path.to_path_buf(), message: "not UTF-8".into() })?;
        Self::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let c = ConfigFile::parse("# run\nsteps = 5000\nlatent_dim=20 # wide\n\n", Path::new("x")).unwrap();
        assert_eq!(c.get("steps"), Some("5000"));
        assert_eq!(c.get("latent-dim"), Some("20"));
        assert_eq!(c.entries.len(), 2);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(ConfigFile::parse("steps 5000", Path::new("x")).is_err());
        assert!(ConfigFile::parse("= 3", Path::new("x")).is_err());
        assert!(ConfigFile::parse("seed = 1\nseed = 2", Path::new("x")).is_err());
    }
}

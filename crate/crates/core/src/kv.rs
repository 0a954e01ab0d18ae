//! Flat `key = value` text with optional `[section]` headers and `#` comments.

use crate::error::{Error, Result};
use std::fmt::Display;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub section: String,
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Ordered key-value document. Keys are unique within a section.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvDoc {
    entries: Vec<Entry>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", i + 1)))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", i + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            doc.set(&section, key, v.trim());
            doc.entries.last_mut().expect("just set").line = i + 1;
        }
        Ok(doc)
    }

    /// Insert or overwrite `section.key`.
    pub fn set(&mut self, section: &str, key: &str, value: impl Display) {
        let value = value.to_string();
        if let Some(e) = self.entries.iter_mut().find(|e| e.section == section && e.key == key) {
            e.value = value;
        } else {
            self.entries.push(Entry { section: section.into(), key: key.into(), value, line: 0 });
        }
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.section == section && e.key == key)
            .map(|e| e.value.as_str())
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn sections(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.section.as_str()) {
                out.push(&e.section);
            }
        }
        out
    }

    /// Fail on any key of `section` outside `allowed`.
    pub fn reject_unknown(&self, section: &str, allowed: &[&str]) -> Result<()> {
        for e in self.entries.iter().filter(|e| e.section == section) {
            if !allowed.contains(&e.key.as_str()) {
                let place = if section.is_empty() { String::new() } else { format!(" in [{section}]") };
                return Err(Error::Config(format!(
                    "unknown key '{}'{place} (allowed: {})",
                    e.key,
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn parsed<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(section, key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("bad value '{v}' for '{key}': {e}"))))
            .transpose()
    }

    pub fn parsed_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.parsed(section, key)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&self, section: &str, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.parsed(section, key)?
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    /// Render with sections in first-appearance order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for sec in self.sections() {
            if !sec.is_empty() {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
            }
            for e in self.entries.iter().filter(|e| e.section == sec) {
                out.push_str(&format!("{} = {}\n", e.key, e.value));
            }
        }
        out
    }
}

/// Parse a comma-separated list.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| Error::Config(format!("bad list item '{p}': {e}"))))
        .collect()
}

//! Line-oriented `key = value` files with `[section]` headers and `#`
//! comments.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    /// Empty for entries before the first header.
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub path: PathBuf,
    pub sections: Vec<Section>,
}

impl Document {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut sections = vec![Section {
            name: String::new(),
            line: 0,
            entries: Vec::new(),
        }];
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(path, line, "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::parse(path, line, "empty section name"));
                }
                sections.push(Section {
                    name: name.to_string(),
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::parse(path, line, format!("expected `key = value`, found `{content}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(path, line, "empty key"));
            }
            sections.last_mut().expect("non-empty").entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            sections,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(path, &text)
    }

    pub fn sections<'a, 'k>(&'a self, name: &'k str) -> impl Iterator<Item = &'a Section> + use<'a, 'k> {
        self.sections.iter().filter(move |s| s.name == name)
    }

    /// At most one section called `name`.
    pub fn unique_section(&self, name: &str) -> Result<Option<&Section>> {
        let mut it = self.sections(name);
        let first = it.next();
        if let Some(dup) = it.next() {
            return Err(self.error(dup.line, format!("duplicate section [{name}]")));
        }
        Ok(first)
    }

    pub fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::parse(&self.path, line, message)
    }

    /// Rejects sections and keys outside the allowed sets.
    pub fn check_known(&self, allowed: &[(&str, &[&str])]) -> Result<()> {
        for s in &self.sections {
            if s.name.is_empty() && s.entries.is_empty() {
                continue;
            }
            let Some((_, keys)) = allowed.iter().find(|(name, _)| *name == s.name) else {
                let line = if s.name.is_empty() { s.entries[0].line } else { s.line };
                return Err(self.error(line, format!("unexpected section [{}]", s.name)));
            };
            for e in &s.entries {
                if !keys.contains(&e.key.as_str()) {
                    return Err(self.error(e.line, format!("unknown key `{}` in [{}]", e.key, s.name)));
                }
            }
        }
        Ok(())
    }
}

impl Section {
    pub fn all<'a, 'k>(&'a self, key: &'k str) -> impl Iterator<Item = &'a Entry> + use<'a, 'k> {
        self.entries.iter().filter(move |e| e.key == key)
    }

    pub fn get(&self, doc: &Document, key: &str) -> Result<Option<&Entry>> {
        let mut it = self.all(key);
        let first = it.next();
        if let Some(dup) = it.next() {
            return Err(doc.error(dup.line, format!("duplicate key `{key}`")));
        }
        Ok(first)
    }

    pub fn require(&self, doc: &Document, key: &str) -> Result<&Entry> {
        self.get(doc, key)?
            .ok_or_else(|| doc.error(self.line, format!("missing key `{key}` in [{}]", self.name)))
    }

    pub fn value<T: FromStr>(&self, doc: &Document, key: &str) -> Result<Option<T>> {
        self.get(doc, key)?.map(|e| e.parse(doc)).transpose()
    }

    pub fn value_or<T: FromStr>(&self, doc: &Document, key: &str, default: T) -> Result<T> {
        Ok(self.value(doc, key)?.unwrap_or(default))
    }
}

impl Entry {
    pub fn parse<T: FromStr>(&self, doc: &Document) -> Result<T> {
        self.value
            .parse()
            .map_err(|_| doc.error(self.line, format!("invalid value `{}` for `{}`", self.value, self.key)))
    }

    /// Whitespace-separated reals; `count` checks the arity.
    pub fn reals(&self, doc: &Document, count: Option<&[usize]>) -> Result<Vec<f64>> {
        let values: Vec<f64> = self
            .value
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| doc.error(self.line, format!("`{}`: `{t}` is not a finite number", self.key)))
            })
            .collect::<Result<_>>()?;
        if let Some(allowed) = count {
            if !allowed.contains(&values.len()) {
                return Err(doc.error(
                    self.line,
                    format!("`{}` expects {allowed:?} numbers, found {}", self.key, values.len()),
                ));
            }
        }
        Ok(values)
    }
}

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
    Unspecified,
}

impl FromStr for SizeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(SizeClass::Small),
            "medium" => Ok(SizeClass::Medium),
            "large" => Ok(SizeClass::Large),
            "" | "unspecified" => Ok(SizeClass::Unspecified),
            other => Err(Error::Value(format!("unknown size class `{other}`"))),
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
            SizeClass::Unspecified => "unspecified",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub name: String,
    pub size: SizeClass,
}

/// A named list of object names with optional real-world size classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    name: String,
    entries: Vec<VocabEntry>,
}

const SIMCO: &str = include_str!("../../data/simco.tsv");
const COMCO: &str = include_str!("../../data/comco.tsv");
const DOMAINNET: &str = include_str!("../../data/domainnet.tsv");

/// Names of the vocabularies compiled into the crate.
pub const BUILTIN_VOCABULARIES: [&str; 3] = ["simco", "comco", "domainnet"];

impl Vocabulary {
    /// Validates uniqueness and the conjunction rule: no name may contain
    /// `" and "`, so short captions split back into their objects.
    pub fn new(name: impl Into<String>, entries: Vec<VocabEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.name.trim().is_empty() {
                return Err(Error::Value("empty object name".into()));
            }
            if e.name.contains(" and ") {
                return Err(Error::Value(format!("object name `{}` contains \" and \"", e.name)));
            }
            if !seen.insert(e.name.as_str()) {
                return Err(Error::DuplicateId(e.name.clone()));
            }
        }
        Ok(Self { name: name.into(), entries })
    }

    /// Parses `name[<TAB>size]` lines; blank lines and `#` comments are skipped.
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let obj = cols.next().unwrap_or_default().trim().to_string();
            let size = cols
                .next()
                .map(|s| s.trim().parse())
                .transpose()
                .map_err(|e| Error::Value(format!("vocabulary line {}: {e}", i + 1)))?
                .unwrap_or(SizeClass::Unspecified);
            entries.push(VocabEntry { name: obj, size });
        }
        Self::new(name, entries)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "simco" => SIMCO,
            "comco" => COMCO,
            "domainnet" => DOMAINNET,
            other => return Err(Error::Value(format!("no built-in vocabulary `{other}`"))),
        };
        Self::parse(name, text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn of_size(&self, size: SizeClass) -> Vec<&str> {
        self.entries.iter().filter(|e| e.size == size).map(|e| e.name.as_str()).collect()
    }
}

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Generators whose clips appear in training; out-of-domain entries must
/// come from other models.
pub const IN_DOMAIN_MODELS: [&str; 3] = ["Pika", "ModelScope", "VideoCraft2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Real,
    Generated,
}

impl Label {
    /// Class index; generated is the positive class.
    pub fn index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Generated => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Real),
            1 => Some(Label::Generated),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Generated => "generated",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    InDomainTest,
    OutOfDomainTest,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::InDomainTest, Split::OutOfDomainTest];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::InDomainTest => "in_domain_test",
            Split::OutOfDomainTest => "out_of_domain_test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| DataError::UnknownSplit(s.to_string()))
    }
}

/// Metadata for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Clip location, relative to the manifest's directory unless absolute.
    pub path: String,
    pub label: Label,
    pub source: String,
    #[serde(default)]
    pub model: Option<String>,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub split: Split,
}

impl ManifestEntry {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(format!("fps must be positive, got {}", self.fps));
        }
        if self.width == 0 || self.height == 0 || self.frame_count == 0 {
            return Err("width, height and frame_count must be positive".into());
        }
        match (self.label, &self.model) {
            (Label::Real, Some(m)) => return Err(format!("real entry carries generator model `{m}`")),
            (Label::Generated, None) => return Err("generated entry has no model".into()),
            _ => {}
        }
        if self.split == Split::OutOfDomainTest {
            if let Some(m) = &self.model {
                if IN_DOMAIN_MODELS.contains(&m.as_str()) {
                    return Err(format!("model `{m}` is in-domain and cannot appear in out_of_domain_test"));
                }
            }
        }
        Ok(())
    }

    pub fn duration_secs(&self) -> f64 {
        self.frame_count as f64 / self.fps
    }

    pub fn short_edge(&self) -> u32 {
        self.width.min(self.height)
    }
}

/// Parses JSON lines, checking every entry and id uniqueness. Blank lines
/// are skipped. Line numbers in errors are 1-based.
pub fn parse_manifest(reader: impl BufRead) -> Result<Vec<ManifestEntry>, DataError> {
    let mut entries = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| DataError::Manifest {
            line: lineno,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| DataError::Manifest {
            line: lineno,
            reason: e.to_string(),
        })?;
        entry
            .validate()
            .map_err(|reason| DataError::Manifest { line: lineno, reason: format!("entry `{}`: {reason}", entry.id) })?;
        if let Some(first) = seen.insert(entry.id.clone(), lineno) {
            return Err(DataError::Manifest {
                line: lineno,
                reason: format!("duplicate id `{}` (first seen on line {first})", entry.id),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    parse_manifest(BufReader::new(file)).map_err(|e| e.in_file(path))
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for e in entries {
        let line = serde_json::to_string(e).expect("entry serializes");
        writeln!(out, "{line}").map_err(|e| DataError::io(path, e))?;
    }
    out.flush().map_err(|e| DataError::io(path, e))
}

/// Entries of one split, in manifest order.
pub fn split_entries(entries: &[ManifestEntry], split: Split) -> Vec<&ManifestEntry> {
    entries.iter().filter(|e| e.split == split).collect()
}

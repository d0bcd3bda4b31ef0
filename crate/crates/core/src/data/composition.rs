//! Metadata-only manifests stored as grouped rows, expanded on demand.
//!
//! The shipped table describes the full 2.66M-clip detection dataset:
//! per-source counts with representative frame rates, resolutions and
//! lengths. Expanding it yields ordinary manifest entries without holding
//! them all in memory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{parse_manifest, Label, ManifestEntry, Split};
use super::DataError;

const SHIPPED: &str = include_str!("../../data/genviddet_composition.json");
/// Name accepted in place of a manifest path for the shipped table.
pub const SHIPPED_NAME: &str = "genviddet";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub count: u64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeldOut {
    pub split: Split,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionRow {
    pub category: String,
    pub method: String,
    pub source: String,
    pub model: Option<String>,
    pub label: Label,
    pub profiles: Vec<Profile>,
    /// Clips of this row assigned to a test split, spread evenly over it.
    #[serde(default)]
    pub held_out: Option<HeldOut>,
}

impl CompositionRow {
    pub fn count(&self) -> u64 {
        self.profiles.iter().map(|p| p.count).sum()
    }

    fn key(&self) -> String {
        self.model.as_deref().unwrap_or(&self.source).to_ascii_lowercase()
    }

    fn split_of(&self, i: u64) -> Split {
        match &self.held_out {
            // Evenly spaced: clip i is held out when the running share
            // crosses an integer.
            Some(h) if (i + 1) * h.count / self.count() > i * h.count / self.count() => h.split,
            _ => Split::Train,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = ManifestEntry> + '_ {
        let key = self.key();
        self.profiles
            .iter()
            .flat_map(|p| std::iter::repeat(p).take(p.count as usize))
            .enumerate()
            .map(move |(i, p)| {
                let id = format!("{key}-{i:07}");
                ManifestEntry {
                    path: format!("{SHIPPED_NAME}/{id}.mp4"),
                    id,
                    label: self.label,
                    source: self.source.clone(),
                    model: self.model.clone(),
                    fps: p.fps,
                    width: p.width,
                    height: p.height,
                    frame_count: p.frame_count,
                    split: self.split_of(i as u64),
                }
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Composition {
    pub rows: Vec<CompositionRow>,
}

impl Composition {
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED).expect("shipped composition parses")
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let c: Composition = serde_json::from_str(text).map_err(|e| DataError::Format(format!("composition: {e}")))?;
        for row in &c.rows {
            if let Some(h) = &row.held_out {
                if h.count > row.count() {
                    return Err(DataError::Format(format!("row {} holds out more clips than it has", row.key())));
                }
            }
        }
        Ok(c)
    }

    pub fn len(&self) -> u64 {
        self.rows.iter().map(|r| r.count()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> impl Iterator<Item = ManifestEntry> + '_ {
        self.rows.iter().flat_map(|r| r.entries())
    }
}

/// Either an explicit JSON-lines manifest or a grouped composition table.
#[derive(Debug, Clone)]
pub enum ManifestSource {
    Entries(Vec<ManifestEntry>),
    Composition(Composition),
}

impl ManifestSource {
    /// Opens `genviddet` (the shipped table), a composition JSON file, or a
    /// JSON-lines manifest.
    pub fn open(path: &Path) -> Result<Self, DataError> {
        if path.as_os_str() == SHIPPED_NAME && !path.exists() {
            return Ok(ManifestSource::Composition(Composition::shipped()));
        }
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        if let Ok(c) = serde_json::from_str::<Composition>(&text) {
            return Ok(ManifestSource::Composition(c));
        }
        Ok(ManifestSource::Entries(parse_manifest(text.as_bytes()).map_err(|e| e.in_file(path))?))
    }

    pub fn entries(&self) -> Box<dyn Iterator<Item = ManifestEntry> + '_> {
        match self {
            ManifestSource::Entries(v) => Box::new(v.iter().cloned()),
            ManifestSource::Composition(c) => Box::new(c.entries()),
        }
    }
}

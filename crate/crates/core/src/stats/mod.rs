//! Dataset composition tables and resolution, frame-rate and frame-count
//! distributions, with CSV and SVG output.

mod render;

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

pub use render::{render_report, write_composition_csv};

use crate::data::{Label, ManifestEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Resolution,
    Fps,
    FrameCount,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Resolution, Dimension::Fps, Dimension::FrameCount];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Resolution => "resolution",
            Dimension::Fps => "fps",
            Dimension::FrameCount => "frame_count",
        }
    }

    pub fn bins(self) -> Vec<String> {
        let mut bins: Vec<String> = match self {
            Dimension::Resolution => RESOLUTION_BINS.iter().map(|p| format!("{p}P")).collect(),
            Dimension::Fps => FPS_BINS.iter().map(|f| f.to_string()).collect(),
            Dimension::FrameCount => FRAME_COUNT_BINS
                .iter()
                .map(|&(lo, hi)| match hi {
                    Some(hi) => format!("{lo}-{hi}"),
                    None => format!("{lo}+"),
                })
                .collect(),
        };
        if self != Dimension::FrameCount {
            bins.push("other".into());
        }
        bins
    }

    /// Index of the bin holding `entry`.
    pub fn bin_of(self, entry: &ManifestEntry) -> usize {
        match self {
            Dimension::Resolution => RESOLUTION_BINS
                .iter()
                .position(|&p| p == entry.short_edge())
                .unwrap_or(RESOLUTION_BINS.len()),
            Dimension::Fps => FPS_BINS
                .iter()
                .position(|&f| f as f64 == entry.fps)
                .unwrap_or(FPS_BINS.len()),
            Dimension::FrameCount => FRAME_COUNT_BINS
                .iter()
                .position(|&(lo, hi)| entry.frame_count >= lo && hi.map_or(true, |h| entry.frame_count <= h))
                .expect("frame-count bins cover every positive count"),
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Short-edge sizes with their own bin.
pub const RESOLUTION_BINS: [u32; 5] = [256, 320, 512, 576, 720];
/// Frame rates with their own bin; matching is exact.
pub const FPS_BINS: [u32; 6] = [4, 8, 10, 24, 25, 30];
/// Inclusive frame-count ranges; the last is open.
pub const FRAME_COUNT_BINS: [(u32, Option<u32>); 5] = [(1, Some(24)), (25, Some(48)), (49, Some(72)), (73, Some(120)), (121, None)];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelHistogram {
    pub label: Label,
    pub counts: Vec<u64>,
    pub total: u64,
    /// Largest frame count seen, reported for the frame-count dimension.
    pub max_frame_count: Option<u32>,
}

impl LabelHistogram {
    pub fn pct(&self, bin: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.counts[bin] as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub dimension: Dimension,
    pub bins: Vec<String>,
    /// One histogram per label present (or the filtered label), real first.
    pub per_label: Vec<LabelHistogram>,
}

impl DistributionReport {
    pub fn label(&self, label: Label) -> Option<&LabelHistogram> {
        self.per_label.iter().find(|h| h.label == label)
    }

    /// Percentage of `label` entries in the named bin.
    pub fn pct(&self, label: Label, bin: &str) -> Option<f64> {
        let i = self.bins.iter().position(|b| b == bin)?;
        self.label(label).map(|h| h.pct(i))
    }
}

/// Histograms `entries` along `dimension`, per label, optionally keeping
/// one label only.
pub fn histogram<E: Borrow<ManifestEntry>>(
    dimension: Dimension,
    entries: impl IntoIterator<Item = E>,
    label: Option<Label>,
) -> DistributionReport {
    let bins = dimension.bins();
    let mut hists: BTreeMap<Label, LabelHistogram> = BTreeMap::new();
    if let Some(l) = label {
        hists.insert(l, empty_histogram(l, bins.len()));
    }
    for e in entries {
        let e = e.borrow();
        if label.is_some_and(|l| l != e.label) {
            continue;
        }
        let h = hists.entry(e.label).or_insert_with(|| empty_histogram(e.label, bins.len()));
        h.counts[dimension.bin_of(e)] += 1;
        h.total += 1;
        if dimension == Dimension::FrameCount {
            h.max_frame_count = Some(h.max_frame_count.map_or(e.frame_count, |m| m.max(e.frame_count)));
        }
    }
    DistributionReport {
        dimension,
        bins,
        per_label: hists.into_values().collect(),
    }
}

fn empty_histogram(label: Label, bins: usize) -> LabelHistogram {
    LabelHistogram {
        label,
        counts: vec![0; bins],
        total: 0,
        max_frame_count: None,
    }
}

pub fn fps_histogram<E: Borrow<ManifestEntry>>(entries: impl IntoIterator<Item = E>, label: Option<Label>) -> DistributionReport {
    histogram(Dimension::Fps, entries, label)
}

pub fn resolution_histogram<E: Borrow<ManifestEntry>>(entries: impl IntoIterator<Item = E>, label: Option<Label>) -> DistributionReport {
    histogram(Dimension::Resolution, entries, label)
}

pub fn frame_count_histogram<E: Borrow<ManifestEntry>>(entries: impl IntoIterator<Item = E>, label: Option<Label>) -> DistributionReport {
    histogram(Dimension::FrameCount, entries, label)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct SummaryRow {
    pub category: String,
    pub method: String,
    pub source: String,
    pub model: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositionSummary {
    pub rows: Vec<SummaryRow>,
    pub total_clips: u64,
    pub total_hours: f64,
}

impl CompositionSummary {
    /// Count of the row whose model (or, for real rows, source) is `name`.
    pub fn count_of(&self, name: &str) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.model == name || (r.model == "-" && r.source == name))
            .map(|r| r.count)
    }
}

pub fn category(label: Label) -> &'static str {
    match label {
        Label::Real => "Real Videos",
        Label::Generated => "AI-Generated Videos",
    }
}

/// Clips carrying no source were produced for the dataset rather than
/// collected.
pub fn method(entry: &ManifestEntry) -> &'static str {
    if entry.source == "-" {
        "Generated"
    } else {
        "Collection"
    }
}

/// Counts per (category, method, source, model), real rows first, and the
/// total duration.
pub fn composition_summary<E: Borrow<ManifestEntry>>(entries: impl IntoIterator<Item = E>) -> CompositionSummary {
    let mut groups: BTreeMap<(Label, &'static str, String, String), u64> = BTreeMap::new();
    // Frames per exact frame rate keep the duration sum independent of
    // entry order.
    let mut frames_by_fps: BTreeMap<u64, u64> = BTreeMap::new();
    for e in entries {
        let e = e.borrow();
        let key = (
            e.label,
            method(e),
            e.source.clone(),
            e.model.clone().unwrap_or_else(|| "-".into()),
        );
        *groups.entry(key).or_default() += 1;
        *frames_by_fps.entry(e.fps.to_bits()).or_default() += e.frame_count as u64;
    }
    let rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((label, method, source, model), count)| SummaryRow {
            category: category(label).into(),
            method: method.into(),
            source,
            model,
            count,
        })
        .collect();
    let seconds: f64 = frames_by_fps.iter().map(|(fps, frames)| *frames as f64 / f64::from_bits(*fps)).sum();
    CompositionSummary {
        total_clips: rows.iter().map(|r| r.count).sum(),
        total_hours: seconds / 3600.0,
        rows,
    }
}

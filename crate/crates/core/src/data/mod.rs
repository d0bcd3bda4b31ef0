//! Manifests, clip decoding, preprocessing, frame sampling and the
//! synthetic dataset generator.

mod composition;
mod ingest;
mod manifest;
mod preprocess;
mod sample;
mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use composition::{Composition, CompositionRow, HeldOut, ManifestSource, Profile, SHIPPED_NAME};
pub use ingest::{
    decoder_command, ingest_external, read_frame_dir, read_rawv, write_rawv, Frame, Ingested, RawClip, DECODER_KEY,
    RAWV_MAGIC,
};
pub use manifest::{
    load_manifest, parse_manifest, split_entries, write_manifest, Label, ManifestEntry, Split, IN_DOMAIN_MODELS,
};
pub use preprocess::{
    preprocess_clip, preprocess_images, resized_dims, Mode, PreprocessConfig, UnitImage, IMAGENET_MEAN, IMAGENET_STD,
    MIN_FRAME_SIDE,
};
pub use sample::{frame_stride, sample_frames, Offset};
pub use synth::{render_clip, synth_dataset, ClipKind, SynthSpec, GENERATOR_PRESETS, MANIFEST_FILE};

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<DataError>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown split `{0}` (expected train, in_domain_test or out_of_domain_test)")]
    UnknownSplit(String),
    #[error("{0}")]
    Frames(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Decoder(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Preprocess(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn in_file(self, path: &Path) -> Self {
        DataError::InFile {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }

    /// True for problems with the configuration rather than the data.
    pub fn is_config(&self) -> bool {
        match self {
            DataError::Config(_) | DataError::UnknownSplit(_) => true,
            DataError::InFile { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

/// Resolves an entry's clip path against the manifest directory.
pub fn clip_path(entry: &ManifestEntry, root: &Path) -> PathBuf {
    let p = Path::new(&entry.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

/// Loads, samples and preprocesses the clip of one manifest entry.
pub fn load_clip(
    entry: &ManifestEntry,
    root: &Path,
    cfg: &PreprocessConfig,
    offset: Offset,
    mode: Mode,
    decoder: Option<&str>,
) -> Result<Tensor, DataError> {
    let raw = ingest_external(&clip_path(entry, root), decoder, entry.fps as f32)?.clip;
    if raw.frames.is_empty() {
        return Err(DataError::Frames(format!("clip `{}` has no frames", entry.id)));
    }
    let idx = sample_frames(raw.frames.len(), raw.fps as f64, cfg.frame_count, cfg.target_fps, offset);
    let frames: Vec<Frame> = idx.iter().map(|&i| raw.frames[i].clone()).collect();
    preprocess_clip(&frames, cfg, mode)
}

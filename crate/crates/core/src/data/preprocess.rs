use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ingest::Frame;
use super::DataError;
use crate::tensor::Tensor;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
/// Smallest accepted frame side in pixels.
pub const MIN_FRAME_SIDE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub short_edge: usize,
    /// Crop `(height, width)`.
    pub crop: [usize; 2],
    /// Probability of a horizontal flip in training mode.
    pub flip_prob: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub frame_count: usize,
    /// Resample to this rate by frame striding; absent keeps the native rate.
    #[serde(default)]
    pub target_fps: Option<f64>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            short_edge: 224,
            crop: [224, 224],
            flip_prob: 0.5,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
            frame_count: 16,
            target_fps: None,
        }
    }
}

impl PreprocessConfig {
    /// 56-pixel clips for CPU-scale runs.
    pub fn desk() -> Self {
        PreprocessConfig {
            short_edge: 56,
            crop: [56, 56],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.crop[0] > self.short_edge || self.crop[1] > self.short_edge || self.crop.contains(&0) {
            return bad(format!("crop {:?} must be positive and at most short_edge {}", self.crop, self.short_edge));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob {} must lie in [0, 1]", self.flip_prob));
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return bad("std entries must be positive".into());
        }
        if self.frame_count == 0 {
            return bad("frame_count must be positive".into());
        }
        if matches!(self.target_fps, Some(f) if !(f > 0.0)) {
            return bad("target_fps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Random flips drawn from the given seed.
    Train(u64),
    Eval,
}

/// An RGB image with channel values in `[0, 1]`, row-major `H×W×3`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl From<&Frame> for UnitImage {
    fn from(f: &Frame) -> Self {
        UnitImage {
            height: f.height,
            width: f.width,
            data: f.data.iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }
}

/// Output size of resizing so the shorter side equals `short_edge`.
pub fn resized_dims(height: usize, width: usize, short_edge: usize) -> (usize, usize) {
    if height <= width {
        let w = (width as f64 * short_edge as f64 / height as f64).round() as usize;
        (short_edge, w.max(short_edge))
    } else {
        let h = (height as f64 * short_edge as f64 / width as f64).round() as usize;
        (h.max(short_edge), short_edge)
    }
}

/// Resizes, center-crops, optionally flips and normalizes decoded frames
/// into an `[N, crop_h, crop_w, 3]` clip.
pub fn preprocess_clip(frames: &[Frame], cfg: &PreprocessConfig, mode: Mode) -> Result<Tensor, DataError> {
    let images: Vec<UnitImage> = frames.iter().map(UnitImage::from).collect();
    preprocess_images(&images, cfg, mode)
}

pub fn preprocess_images(images: &[UnitImage], cfg: &PreprocessConfig, mode: Mode) -> Result<Tensor, DataError> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(DataError::Preprocess("no frames to preprocess".into()));
    }
    let flip = match mode {
        Mode::Train(seed) if cfg.flip_prob > 0.0 => ChaCha8Rng::seed_from_u64(seed).gen_bool(cfg.flip_prob),
        _ => false,
    };
    let [ch, cw] = cfg.crop;
    let mut data = Vec::with_capacity(images.len() * ch * cw * 3);
    for img in images {
        if img.height < MIN_FRAME_SIDE || img.width < MIN_FRAME_SIDE {
            return Err(DataError::Preprocess(format!(
                "frame {}x{} is smaller than {MIN_FRAME_SIDE} px",
                img.width, img.height
            )));
        }
        let (rh, rw) = resized_dims(img.height, img.width, cfg.short_edge);
        let (top, left) = ((rh - ch) / 2, (rw - cw) / 2);
        let sy = img.height as f64 / rh as f64;
        let sx = img.width as f64 / rw as f64;
        for y in 0..ch {
            let (y0, y1, fy) = source_taps(top + y, sy, img.height);
            for x in 0..cw {
                let xo = if flip { cw - 1 - x } else { x };
                let (x0, x1, fx) = source_taps(left + xo, sx, img.width);
                for c in 0..3 {
                    let at = |yy: usize, xx: usize| img.data[(yy * img.width + xx) * 3 + c];
                    let top_row = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                    let bottom_row = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                    let v = top_row * (1.0 - fy) + bottom_row * fy;
                    data.push((v - cfg.mean[c]) / cfg.std[c]);
                }
            }
        }
    }
    Ok(Tensor::new(vec![images.len(), ch, cw, 3], data)?)
}

/// Bilinear taps for output coordinate `o` with half-pixel centers.
fn source_taps(o: usize, scale: f64, len: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, src - i0 as f64)
}

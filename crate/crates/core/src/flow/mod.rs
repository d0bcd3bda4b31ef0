//! Optical flow between frame pairs at a fixed interval.
//!
//! The default estimator is exhaustive block matching: for every cell of a
//! strided grid it picks the integer displacement minimizing the sum of
//! squared differences over a square block. Intensities are quantized to
//! fixed point before matching so costs are exact integers and the result
//! does not depend on summation order.

mod io;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use io::{flow_cache_path, load_flow_file, save_flow_file};

/// Fixed-point scale applied to intensities before matching.
pub const QUANT_SCALE: f64 = 1024.0;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("frames differ in shape: {0:?} vs {1:?}")]
    FrameShape(Vec<usize>, Vec<usize>),
    #[error("clip has {frames} frames but the interval is {interval}; need more frames than the interval")]
    IntervalTooLarge { frames: usize, interval: usize },
    #[error("invalid flow config: {0}")]
    Config(String),
    #[error("unknown flow estimator `{0}`")]
    UnknownEstimator(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Side of the square matching block in pixels; odd.
    pub block: usize,
    /// Largest displacement searched on each axis.
    pub radius: usize,
    /// Spacing of grid cells.
    pub stride: usize,
    /// Divisor applied by [`normalize_flow`].
    pub scale: f64,
    /// Integer box-downsampling applied to frames before matching.
    pub downsample: usize,
    #[serde(default = "default_estimator")]
    pub estimator: String,
}

fn default_estimator() -> String {
    BlockMatcher::NAME.to_string()
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            block: 9,
            radius: 8,
            stride: 4,
            scale: 8.0,
            downsample: 4,
            estimator: default_estimator(),
        }
    }
}

impl FlowConfig {
    /// Defaults for clips that are already at matching resolution.
    pub fn desk() -> Self {
        FlowConfig {
            downsample: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.block == 0 || self.block % 2 == 0 {
            return Err(FlowError::Config(format!("block size {} must be odd", self.block)));
        }
        if self.radius == 0 || self.stride == 0 || self.downsample == 0 {
            return Err(FlowError::Config("radius, stride and downsample must be positive".into()));
        }
        if self.stride > self.block {
            return Err(FlowError::Config(format!(
                "stride {} exceeds block size {}",
                self.stride, self.block
            )));
        }
        if !(self.scale > 0.0) {
            return Err(FlowError::Config(format!("normalization scale {} must be positive", self.scale)));
        }
        Ok(())
    }

    /// Number of grid cells along an axis of `len` pixels.
    pub fn cells(&self, len: usize) -> usize {
        let first = self.stride / 2;
        if len <= first {
            1
        } else {
            (len - 1 - first) / self.stride + 1
        }
    }

    /// Pixel coordinate of cell `i`'s center.
    pub fn center(&self, i: usize, len: usize) -> usize {
        (i * self.stride + self.stride / 2).min(len - 1)
    }
}

/// A pluggable two-frame motion estimator.
pub trait FlowEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    /// Estimates `[Hf, Wf, 2]` displacements (dx, dy) from `a` to `b`, both
    /// `[H, W, C]`.
    fn estimate(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, FlowError>;
}

pub fn estimator_by_name(cfg: &FlowConfig) -> Result<Box<dyn FlowEstimator>, FlowError> {
    match cfg.estimator.as_str() {
        BlockMatcher::NAME => Ok(Box::new(BlockMatcher::new(cfg.clone())?)),
        other => Err(FlowError::UnknownEstimator(other.to_string())),
    }
}

/// Exhaustive SSD block matching.
#[derive(Debug, Clone)]
pub struct BlockMatcher {
    cfg: FlowConfig,
    /// Candidate displacements in tie-break order.
    candidates: Vec<(i32, i32)>,
}

impl BlockMatcher {
    pub const NAME: &'static str = "block-matching";

    pub fn new(cfg: FlowConfig) -> Result<Self, FlowError> {
        cfg.validate()?;
        let r = cfg.radius as i32;
        let mut candidates: Vec<(i32, i32)> = (-r..=r).flat_map(|dx| (-r..=r).map(move |dy| (dx, dy))).collect();
        candidates.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dx, dy));
        Ok(BlockMatcher { cfg, candidates })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }
}

fn quantize(frame: &Tensor) -> Vec<i64> {
    frame.data().iter().map(|&v| (v * QUANT_SCALE).round() as i64).collect()
}

impl FlowEstimator for BlockMatcher {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn estimate(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, FlowError> {
        if a.shape() != b.shape() || a.shape().len() != 3 {
            return Err(FlowError::FrameShape(a.shape().to_vec(), b.shape().to_vec()));
        }
        let (h, w, c) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let (qa, qb) = (quantize(a), quantize(b));
        let half = self.cfg.block / 2;
        let (hf, wf) = (self.cfg.cells(h), self.cfg.cells(w));
        let ys: Vec<usize> = (0..hf).map(|i| self.cfg.center(i, h)).collect();
        let xs: Vec<usize> = (0..wf).map(|i| self.cfg.center(i, w)).collect();

        // Squared differences live on the frame extended by `half` pixels on
        // every side, with clamped sampling, so every block is in range.
        let (eh, ew) = (h + 2 * half, w + 2 * half);
        let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
        let a_ext: Vec<usize> = (0..eh * ew)
            .map(|i| {
                let (y, x) = ((i / ew) as isize - half as isize, (i % ew) as isize - half as isize);
                (clamp(y, h) * w + clamp(x, w)) * c
            })
            .collect();

        let mut best_cost = vec![i64::MAX; hf * wf];
        let mut best = vec![(0i32, 0i32); hf * wf];
        let mut integral = vec![0i64; (eh + 1) * (ew + 1)];
        for &(dx, dy) in &self.candidates {
            for y in 0..eh {
                let mut row = 0i64;
                let by = clamp(y as isize - half as isize + dy as isize, h);
                for x in 0..ew {
                    let bx = clamp(x as isize - half as isize + dx as isize, w);
                    let ai = a_ext[y * ew + x];
                    let bi = (by * w + bx) * c;
                    let mut d = 0i64;
                    for ch in 0..c {
                        let diff = qa[ai + ch] - qb[bi + ch];
                        d += diff * diff;
                    }
                    row += d;
                    integral[(y + 1) * (ew + 1) + x + 1] = integral[y * (ew + 1) + x + 1] + row;
                }
            }
            for (iy, &cy) in ys.iter().enumerate() {
                // Extended coordinates of the block are [cy, cy + block).
                let (y0, y1) = (cy, cy + self.cfg.block);
                for (ix, &cx) in xs.iter().enumerate() {
                    let (x0, x1) = (cx, cx + self.cfg.block);
                    let s = integral[y1 * (ew + 1) + x1] - integral[y0 * (ew + 1) + x1] - integral[y1 * (ew + 1) + x0]
                        + integral[y0 * (ew + 1) + x0];
                    let cell = iy * wf + ix;
                    if s < best_cost[cell] {
                        best_cost[cell] = s;
                        best[cell] = (dx, dy);
                    }
                }
            }
        }
        let data = best.iter().flat_map(|&(dx, dy)| [dx as f64, dy as f64]).collect();
        Ok(Tensor::new(vec![hf, wf, 2], data)?)
    }
}

/// Averages non-overlapping `factor × factor` pixel boxes of an `[H, W, C]`
/// frame. Trailing rows or columns that do not fill a box are dropped.
pub fn downsample(frame: &Tensor, factor: usize) -> Tensor {
    if factor == 1 {
        return frame.clone();
    }
    let (h, w, c) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    let (ho, wo) = ((h / factor).max(1), (w / factor).max(1));
    let src = frame.data();
    let mut out = vec![0.0; ho * wo * c];
    let norm = 1.0 / (factor * factor) as f64;
    for y in 0..ho {
        for x in 0..wo {
            for dy in 0..factor {
                for dx in 0..factor {
                    let sy = (y * factor + dy).min(h - 1);
                    let sx = (x * factor + dx).min(w - 1);
                    for ch in 0..c {
                        out[(y * wo + x) * c + ch] += src[(sy * w + sx) * c + ch] * norm;
                    }
                }
            }
        }
    }
    Tensor::new(vec![ho, wo, c], out).expect("shape matches")
}

/// Nearest-neighbour upsampling of `[L, Hf, Wf, 2]` flow to `[L, H, W, 2]`.
/// Displacement values are copied unchanged.
pub fn upsample_nearest(flows: &Tensor, height: usize, width: usize) -> Tensor {
    let s = flows.shape();
    let (l, hf, wf, c) = (s[0], s[1], s[2], s[3]);
    let src = flows.data();
    let mut out = Vec::with_capacity(l * height * width * c);
    for t in 0..l {
        for y in 0..height {
            let sy = (y * hf / height).min(hf - 1);
            for x in 0..width {
                let sx = (x * wf / width).min(wf - 1);
                let base = ((t * hf + sy) * wf + sx) * c;
                out.extend_from_slice(&src[base..base + c]);
            }
        }
    }
    Tensor::new(vec![l, height, width, c], out).expect("shape matches")
}

/// Displacement sequence for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    /// `[N - K, Hf, Wf, 2]`, (dx, dy) in pixels of the matching grid.
    pub flows: Tensor,
    pub interval: usize,
    pub valid: Option<Vec<bool>>,
}

impl FlowField {
    pub fn len(&self) -> usize {
        self.flows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn save(&self, path: &Path, cfg: &FlowConfig) -> Result<(), FlowError> {
        save_flow_file(path, self, cfg)
    }
}

/// Single flow field between two `[H, W, C]` frames, upsampled to
/// `output` (height, width) when given.
pub fn estimate_flow_pair(a: &Tensor, b: &Tensor, cfg: &FlowConfig, output: Option<(usize, usize)>) -> Result<Tensor, FlowError> {
    if a.shape() != b.shape() {
        return Err(FlowError::FrameShape(a.shape().to_vec(), b.shape().to_vec()));
    }
    let estimator = estimator_by_name(cfg)?;
    let grid = estimator.estimate(&downsample(a, cfg.downsample), &downsample(b, cfg.downsample))?;
    Ok(match output {
        Some((h, w)) => {
            let s = grid.shape().to_vec();
            let up = upsample_nearest(&grid.reshape(&[1, s[0], s[1], s[2]])?, h, w);
            up.reshape(&[h, w, 2])?
        }
        None => grid,
    })
}

/// Flow `W_i = M(V_i, V_{i+K})` for every `i` with `i + K < N`, where
/// `clip` is `[N, H, W, C]`. Pairs are computed in parallel and assembled
/// in index order.
pub fn extract_flow_sequence(clip: &Tensor, interval: usize, cfg: &FlowConfig) -> Result<FlowField, FlowError> {
    let frames = clip.shape()[0];
    if interval == 0 || frames <= interval {
        return Err(FlowError::IntervalTooLarge { frames, interval });
    }
    let estimator = estimator_by_name(cfg)?;
    let small: Vec<Tensor> = (0..frames).map(|i| downsample(&clip.outer(i), cfg.downsample)).collect();
    let pairs: Result<Vec<Tensor>, FlowError> = (0..frames - interval)
        .into_par_iter()
        .map(|i| estimator.estimate(&small[i], &small[i + interval]))
        .collect();
    Ok(FlowField {
        flows: Tensor::stack(&pairs?)?,
        interval,
        valid: None,
    })
}

/// Divides displacements by the configured scale and clamps to [-1, 1].
pub fn normalize_flow(field: &FlowField, cfg: &FlowConfig) -> FlowField {
    let data = field
        .flows
        .data()
        .iter()
        .map(|v| (v / cfg.scale).clamp(-1.0, 1.0))
        .collect();
    FlowField {
        flows: Tensor::new(field.flows.shape().to_vec(), data).expect("same shape"),
        interval: field.interval,
        valid: field.valid.clone(),
    }
}

/// Repeats the final field until the sequence has `frames` steps.
pub fn pad_flow_to_clip_length(field: &FlowField, frames: usize) -> Result<Tensor, FlowError> {
    let len = field.len();
    if len == 0 || len > frames {
        return Err(FlowError::Config(format!(
            "cannot pad a flow sequence of length {len} to {frames} steps"
        )));
    }
    let mut steps: Vec<Tensor> = (0..len).map(|i| field.flows.outer(i)).collect();
    let last = steps[len - 1].clone();
    steps.resize(frames, last);
    Ok(Tensor::stack(&steps)?)
}

/// Model input for the flow branch: normalized, padded to `frames` steps
/// and upsampled to the clip resolution. `[frames, H, W, 2]`.
pub fn flow_branch_input(field: &FlowField, cfg: &FlowConfig, frames: usize, height: usize, width: usize) -> Result<Tensor, FlowError> {
    let padded = pad_flow_to_clip_length(&normalize_flow(field, cfg), frames)?;
    Ok(upsample_nearest(&padded, height, width))
}

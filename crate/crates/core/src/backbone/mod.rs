//! Video Swin Transformer stage stack: 3D patch embedding, shifted-window
//! attention blocks and patch merging.

mod window;

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{layer_norm, linear, register_layer_norm, register_linear, trunc_normal, ForwardCtx, WEIGHT_DECAY};
use crate::tensor::{ParamStore, Tensor, TensorError, Var};

pub use window::{effective_window, layout, relative_position_index, WindowLayout, MASK_VALUE};

pub const NUM_STAGES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub patch_size: [usize; 3],
    pub embed_dim: usize,
    pub depths: [usize; 4],
    pub heads: [usize; 4],
    pub window_size: [usize; 3],
    pub mlp_ratio: f64,
    pub input_channels: usize,
}

impl BackboneConfig {
    pub fn swin_t(input_channels: usize) -> Self {
        BackboneConfig {
            patch_size: [2, 4, 4],
            embed_dim: 96,
            depths: [2, 2, 6, 2],
            heads: [3, 6, 12, 24],
            window_size: [8, 7, 7],
            mlp_ratio: 4.0,
            input_channels,
        }
    }

    /// Reduced preset for CPU-scale training on 56×56 clips.
    pub fn desk(input_channels: usize) -> Self {
        BackboneConfig {
            patch_size: [2, 4, 4],
            embed_dim: 32,
            depths: [1, 1, 2, 1],
            heads: [2, 2, 4, 4],
            window_size: [8, 7, 7],
            mlp_ratio: 4.0,
            input_channels,
        }
    }

    pub fn preset(name: &str, input_channels: usize) -> Result<Self, TensorError> {
        match name {
            "swin-t" => Ok(Self::swin_t(input_channels)),
            "desk" => Ok(Self::desk(input_channels)),
            other => Err(TensorError::InvalidArgument {
                op: "backbone_preset",
                reason: format!("unknown backbone preset `{other}` (expected `swin-t` or `desk`)"),
            }),
        }
    }

    /// Channel width of stage `s` (0-based).
    pub fn stage_dim(&self, s: usize) -> usize {
        self.embed_dim << s
    }

    pub fn final_dim(&self) -> usize {
        self.stage_dim(NUM_STAGES - 1)
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |reason: String| Err(TensorError::InvalidArgument { op: "backbone_config", reason });
        if self.patch_size.contains(&0) || self.window_size.contains(&0) {
            return bad("patch and window sizes must be positive".into());
        }
        if self.embed_dim == 0 || self.input_channels == 0 || self.depths.contains(&0) {
            return bad("embed_dim, input_channels and depths must be positive".into());
        }
        if !(self.mlp_ratio > 0.0) {
            return bad(format!("mlp_ratio {} must be positive", self.mlp_ratio));
        }
        for s in 0..NUM_STAGES {
            if self.heads[s] == 0 || self.stage_dim(s) % self.heads[s] != 0 {
                return bad(format!(
                    "stage {} width {} is not divisible by {} heads",
                    s + 1,
                    self.stage_dim(s),
                    self.heads[s]
                ));
            }
        }
        Ok(())
    }

    /// Token grid `[T, H, W]` produced by patch embedding an N×H×W clip.
    pub fn embed_grid(&self, frames: usize, height: usize, width: usize) -> [usize; 3] {
        [
            frames.div_ceil(self.patch_size[0]),
            height / self.patch_size[1],
            width / self.patch_size[2],
        ]
    }

    /// `[T, H, W, C]` at the output of each stage (before the merge that
    /// follows it).
    pub fn stage_shapes(&self, frames: usize, height: usize, width: usize) -> [[usize; 4]; NUM_STAGES] {
        let [t, mut h, mut w] = self.embed_grid(frames, height, width);
        let mut out = [[0; 4]; NUM_STAGES];
        for (s, slot) in out.iter_mut().enumerate() {
            *slot = [t, h, w, self.stage_dim(s)];
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        out
    }

    fn hidden_dim(&self, s: usize) -> usize {
        (self.stage_dim(s) as f64 * self.mlp_ratio).round() as usize
    }

    fn table_len(&self) -> usize {
        self.window_size.iter().map(|w| 2 * w - 1).product()
    }
}

/// Per-stage outputs of a backbone pass.
pub struct BackboneOutput {
    /// Output of each stage before its patch merge, `[T, H, W, C_s]`.
    pub stages: Vec<Var>,
}

impl BackboneOutput {
    pub fn last(&self) -> &Var {
        self.stages.last().expect("at least one stage")
    }
}

/// A backbone instance whose parameters live under `prefix` in a store.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub prefix: String,
}

impl Backbone {
    pub fn new(cfg: BackboneConfig, prefix: impl Into<String>) -> Result<Self, TensorError> {
        cfg.validate()?;
        Ok(Backbone {
            cfg,
            prefix: prefix.into(),
        })
    }

    fn name(&self, rest: &str) -> String {
        format!("{}.{rest}", self.prefix)
    }

    fn block_name(&self, s: usize, b: usize, rest: &str) -> String {
        format!("{}.stages.{s}.blocks.{b}.{rest}", self.prefix)
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<(), TensorError> {
        let cfg = &self.cfg;
        let patch_features = cfg.patch_size.iter().product::<usize>() * cfg.input_channels;
        register_linear(store, &self.name("patch_embed.proj"), patch_features, cfg.embed_dim, true, WEIGHT_DECAY, rng)?;
        for s in 0..NUM_STAGES {
            let dim = cfg.stage_dim(s);
            for b in 0..cfg.depths[s] {
                register_layer_norm(store, &self.block_name(s, b, "norm1"), dim, WEIGHT_DECAY)?;
                register_linear(store, &self.block_name(s, b, "attn.qkv"), dim, 3 * dim, true, WEIGHT_DECAY, rng)?;
                store.insert(
                    self.block_name(s, b, "attn.rel_bias"),
                    trunc_normal(&[cfg.table_len(), cfg.heads[s]], 0.02, rng),
                    WEIGHT_DECAY,
                )?;
                register_linear(store, &self.block_name(s, b, "attn.proj"), dim, dim, true, WEIGHT_DECAY, rng)?;
                register_layer_norm(store, &self.block_name(s, b, "norm2"), dim, WEIGHT_DECAY)?;
                let hidden = cfg.hidden_dim(s);
                register_linear(store, &self.block_name(s, b, "mlp.fc1"), dim, hidden, true, WEIGHT_DECAY, rng)?;
                register_linear(store, &self.block_name(s, b, "mlp.fc2"), hidden, dim, true, WEIGHT_DECAY, rng)?;
            }
            if s + 1 < NUM_STAGES {
                register_layer_norm(store, &format!("{}.stages.{s}.merge.norm", self.prefix), 4 * dim, WEIGHT_DECAY)?;
                register_linear(
                    store,
                    &format!("{}.stages.{s}.merge.reduction", self.prefix),
                    4 * dim,
                    2 * dim,
                    false,
                    WEIGHT_DECAY,
                    rng,
                )?;
            }
        }
        Ok(())
    }

    /// Splits an `N×H×W×C_in` clip into `(t, h, w)` patches and projects
    /// each to `embed_dim`. A partial final temporal patch is completed by
    /// repeating the last frame.
    pub fn patch_embed(&self, ctx: &ForwardCtx, clip: &Var) -> Result<Var, TensorError> {
        let cfg = &self.cfg;
        let s = clip.shape();
        let [pt, ph, pw] = cfg.patch_size;
        if s.len() != 4 || s[3] != cfg.input_channels || s[1] % ph != 0 || s[2] % pw != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "patch_embed",
                lhs: s.to_vec(),
                rhs: vec![pt, ph, pw, cfg.input_channels],
            });
        }
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        if n < pt {
            return Err(TensorError::InvalidShape {
                op: "patch_embed",
                shape: s.to_vec(),
                reason: format!("{n} frames is fewer than the temporal patch size {pt}"),
            });
        }
        let grid = cfg.embed_grid(n, h, w);
        let features = pt * ph * pw * c;
        let mut index = Vec::with_capacity(grid.iter().product::<usize>() * features);
        for t in 0..grid[0] {
            for y in 0..grid[1] {
                for x in 0..grid[2] {
                    for dt in 0..pt {
                        let f = (t * pt + dt).min(n - 1);
                        for dy in 0..ph {
                            for dx in 0..pw {
                                let base = ((f * h + y * ph + dy) * w + x * pw + dx) * c;
                                index.extend(base..base + c);
                            }
                        }
                    }
                }
            }
        }
        let patches = clip.gather(Rc::new(index), &[grid[0], grid[1], grid[2], features])?;
        linear(ctx, &patches, &self.name("patch_embed.proj"), true)
    }

    /// Runs every block of stage `s` (0-based) on a `[T, H, W, C_s]` grid.
    pub fn stage(&self, ctx: &ForwardCtx, s: usize, x: &Var) -> Result<Var, TensorError> {
        let mut x = x.clone();
        for b in 0..self.cfg.depths[s] {
            x = self.block(ctx, s, b, &x)?;
        }
        Ok(x)
    }

    /// One pre-norm block; odd blocks within a stage use shifted windows.
    pub fn block(&self, ctx: &ForwardCtx, s: usize, b: usize, x: &Var) -> Result<Var, TensorError> {
        self.block_with(ctx, s, b, x, b % 2 == 1)
    }

    pub fn block_with(&self, ctx: &ForwardCtx, s: usize, b: usize, x: &Var, shifted: bool) -> Result<Var, TensorError> {
        let dim = self.cfg.stage_dim(s);
        if x.shape().len() != 4 || x.shape()[3] != dim {
            return Err(TensorError::ShapeMismatch {
                op: "swin_block",
                lhs: x.shape().to_vec(),
                rhs: vec![dim],
            });
        }
        let normed = layer_norm(ctx, x, &self.block_name(s, b, "norm1"))?;
        let (attn, _) = self.window_attention(ctx, s, b, &normed, shifted, false)?;
        let x = x.add(&attn)?;
        let h = layer_norm(ctx, &x, &self.block_name(s, b, "norm2"))?;
        let h = linear(ctx, &h, &self.block_name(s, b, "mlp.fc1"), true)?.gelu()?;
        let h = linear(ctx, &h, &self.block_name(s, b, "mlp.fc2"), true)?;
        x.add(&h)
    }

    /// Windowed multi-head self-attention with relative-position bias.
    /// Optionally returns the post-softmax weights `[windows, heads, n, n]`.
    pub fn window_attention(
        &self,
        ctx: &ForwardCtx,
        s: usize,
        b: usize,
        x: &Var,
        shifted: bool,
        keep_weights: bool,
    ) -> Result<(Var, Option<Tensor>), TensorError> {
        let shape = x.shape();
        let grid = [shape[0], shape[1], shape[2]];
        let dim = shape[3];
        let heads = self.cfg.heads[s];
        let head_dim = dim / heads;
        let (win, shift) = effective_window(grid, self.cfg.window_size, shifted);
        let plan = layout(grid, win, shift)?;
        let (nw, n) = (plan.num_windows(), plan.tokens_per_window());

        let windows = plan.partition(x)?;
        let qkv = linear(ctx, &windows, &self.block_name(s, b, "attn.qkv"), true)?;
        let qkv = qkv.reshape(&[nw, n, 3, heads, head_dim])?.permute(&[2, 0, 3, 1, 4])?;
        let q = qkv.slice(0, 0, 1)?.reshape(&[nw, heads, n, head_dim])?;
        let k = qkv.slice(0, 1, 2)?.reshape(&[nw, heads, n, head_dim])?;
        let v = qkv.slice(0, 2, 3)?.reshape(&[nw, heads, n, head_dim])?;
        let q = q.scale(1.0 / (head_dim as f64).sqrt());
        let scores = q.matmul(&k.permute(&[0, 1, 3, 2])?)?;

        let table = ctx.param(&self.block_name(s, b, "attn.rel_bias"))?;
        let bias = table.gather(bias_index(win, self.cfg.window_size, heads), &[heads, n, n])?;
        let mask = plan.attention_mask().map(Rc::new);
        let scores = add_bias_and_mask(&scores, &bias, mask)?;
        let weights = scores.softmax(3)?;
        let kept = keep_weights.then(|| weights.value().clone());
        let weights = ctx.dropout(&weights)?;

        let out = weights.matmul(&v)?.permute(&[0, 2, 1, 3])?.reshape(&[nw * n, dim])?;
        let out = linear(ctx, &out, &self.block_name(s, b, "attn.proj"), true)?;
        Ok((plan.reverse(&out)?, kept))
    }

    /// Concatenates each 2×2 spatial neighbourhood, normalizes and projects
    /// `4C -> 2C`. Odd spatial sizes are padded by replication.
    pub fn patch_merge(&self, ctx: &ForwardCtx, s: usize, x: &Var) -> Result<Var, TensorError> {
        let shape = x.shape();
        if shape.len() != 4 || shape[3] != self.cfg.stage_dim(s) || s + 1 >= NUM_STAGES {
            return Err(TensorError::ShapeMismatch {
                op: "patch_merging",
                lhs: shape.to_vec(),
                rhs: vec![self.cfg.stage_dim(s)],
            });
        }
        let merged = merge_neighbourhoods(x)?;
        let normed = layer_norm(ctx, &merged, &format!("{}.stages.{s}.merge.norm", self.prefix))?;
        linear(ctx, &normed, &format!("{}.stages.{s}.merge.reduction", self.prefix), false)
    }

    pub fn forward(&self, ctx: &ForwardCtx, clip: &Var) -> Result<BackboneOutput, TensorError> {
        let mut x = self.patch_embed(ctx, clip)?;
        let mut stages = Vec::with_capacity(NUM_STAGES);
        for s in 0..NUM_STAGES {
            x = self.stage(ctx, s, &x)?;
            stages.push(x.clone());
            if s + 1 < NUM_STAGES {
                x = self.patch_merge(ctx, s, &x)?;
            }
        }
        Ok(BackboneOutput { stages })
    }
}

/// `[T, H, W, C]` to `[T, ceil(H/2), ceil(W/2), 4C]`, neighbourhood order
/// (0,0), (1,0), (0,1), (1,1) in (row, column) offsets.
pub fn merge_neighbourhoods(x: &Var) -> Result<Var, TensorError> {
    let s = x.shape();
    let (t, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut index = Vec::with_capacity(t * ho * wo * 4 * c);
    for ti in 0..t {
        for y in 0..ho {
            for xo in 0..wo {
                for (dy, dx) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let sy = (2 * y + dy).min(h - 1);
                    let sx = (2 * xo + dx).min(w - 1);
                    let base = ((ti * h + sy) * w + sx) * c;
                    index.extend(base..base + c);
                }
            }
        }
    }
    x.gather(Rc::new(index), &[t, ho, wo, 4 * c])
}

thread_local! {
    static BIAS_INDEX: RefCell<HashMap<([usize; 3], [usize; 3], usize), Rc<Vec<usize>>>> = RefCell::new(HashMap::new());
}

/// Gather index from a `[table, heads]` bias table to `[heads, n, n]`.
fn bias_index(actual: [usize; 3], table: [usize; 3], heads: usize) -> Rc<Vec<usize>> {
    let key = (actual, table, heads);
    if let Some(v) = BIAS_INDEX.with(|m| m.borrow().get(&key).cloned()) {
        return v;
    }
    let rel = relative_position_index(actual, table);
    let mut idx = Vec::with_capacity(rel.len() * heads);
    for h in 0..heads {
        idx.extend(rel.iter().map(|&r| r * heads + h));
    }
    let idx = Rc::new(idx);
    BIAS_INDEX.with(|m| m.borrow_mut().insert(key, idx.clone()));
    idx
}

/// `scores [W, H, n, n] + bias [H, n, n] + mask [W, n, n]`.
fn add_bias_and_mask(scores: &Var, bias: &Var, mask: Option<Rc<Vec<f64>>>) -> Result<Var, TensorError> {
    let s = scores.shape();
    let (nw, heads, n) = (s[0], s[1], s[2]);
    if bias.shape() != [heads, n, n] {
        return Err(TensorError::ShapeMismatch {
            op: "attention_bias",
            lhs: s.to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let per_head = n * n;
    let per_window = heads * per_head;
    let bd = bias.data();
    let mut out = scores.data().to_vec();
    for wi in 0..nw {
        for h in 0..heads {
            let dst = &mut out[wi * per_window + h * per_head..wi * per_window + (h + 1) * per_head];
            dst.iter_mut().zip(&bd[h * per_head..(h + 1) * per_head]).for_each(|(o, b)| *o += b);
            if let Some(m) = &mask {
                dst.iter_mut().zip(&m[wi * per_head..(wi + 1) * per_head]).for_each(|(o, mv)| *o += mv);
            }
        }
    }
    Ok(Var::from_op(
        Tensor::new(s.to_vec(), out)?,
        &[scores, bias],
        Box::new(move |p, g| {
            let gb = p[1].requires_grad().then(|| {
                let mut gb = vec![0.0; per_window];
                for chunk in g.chunks(per_window) {
                    gb.iter_mut().zip(chunk).for_each(|(a, x)| *a += x);
                }
                gb
            });
            vec![p[0].requires_grad().then(|| g.to_vec()), gb]
        }),
    ))
}

//! The dual-branch detector: a video backbone, an optical-flow backbone and
//! a fusion head, wired per architecture variant.

mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{default_fusion_dims, ModelConfig, SwapDirection, Variant, DEFAULT_INTERVAL, PRESET_NAMES};

use crate::backbone::{Backbone, BackboneConfig, NUM_STAGES};
use crate::nn::{
    linear, norm_pool, register_layer_norm, register_linear, ForwardCtx, SKIP_WEIGHT_DECAY, WEIGHT_DECAY,
};
use crate::tensor::{ParamStore, TensorError, Var};

pub const RGB_CHANNELS: usize = 3;
pub const FLOW_CHANNELS: usize = 2;
/// Stage (0-based) after which the swap block fuses the two branches.
pub const SWAP_STAGE: usize = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid model input: {0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Tensors around the swap block, for inspecting its wiring.
pub struct SwapTrace {
    /// Stage-2 outputs of each backbone, before swapping.
    pub video_stage2: Var,
    pub flow_stage2: Var,
    /// What each backbone carries into its stage-2 patch merge and stage 3.
    pub video_stage3_input: Var,
    pub flow_stage3_input: Var,
}

#[derive(Debug, Clone)]
pub struct Dub3d {
    pub cfg: ModelConfig,
    /// Video backbone, or the 5-channel backbone for `union`.
    pub primary: Backbone,
    /// Flow backbone for dual-branch variants.
    pub flow: Option<Backbone>,
}

impl Dub3d {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (primary, flow) = match cfg.variant {
            Variant::SingleSt => (Backbone::new(cfg.backbone_config(RGB_CHANNELS)?, "video")?, None),
            Variant::Union => (
                Backbone::new(cfg.backbone_config(RGB_CHANNELS + FLOW_CHANNELS)?, "union")?,
                None,
            ),
            _ => (
                Backbone::new(cfg.backbone_config(RGB_CHANNELS)?, "video")?,
                Some(Backbone::new(cfg.backbone_config(FLOW_CHANNELS)?, "flow")?),
            ),
        };
        Ok(Dub3d { cfg, primary, flow })
    }

    pub fn backbone_config(&self) -> &BackboneConfig {
        &self.primary.cfg
    }

    /// Pooled feature width `C` of one branch.
    pub fn feature_dim(&self) -> usize {
        self.primary.cfg.final_dim()
    }

    /// Width of the vector entering the fusion MLP.
    pub fn head_input_dim(&self) -> usize {
        let c = self.feature_dim();
        match self.cfg.variant {
            Variant::SingleSt | Variant::Union => c,
            Variant::Sc => {
                let skip: usize = self.cfg.skip_sites.iter().map(|&s| self.primary.cfg.stage_dim(s - 1)).sum();
                2 * c + 2 * skip
            }
            _ => 2 * c,
        }
    }

    /// Output widths of the three head layers.
    pub fn head_dims(&self) -> [usize; 3] {
        let [a, b, out] = self.cfg.fusion_dims;
        if self.cfg.variant.is_dual_branch() {
            [a, b, out]
        } else {
            [a.div_ceil(2), b.div_ceil(2), out]
        }
    }

    /// Registers every parameter with seeded initial values.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bb = &self.primary.cfg;
        self.primary.register(&mut store, &mut rng)?;
        register_layer_norm(&mut store, &format!("{}.norm", self.primary.prefix), bb.final_dim(), WEIGHT_DECAY)?;
        if let Some(flow) = &self.flow {
            flow.register(&mut store, &mut rng)?;
            register_layer_norm(&mut store, "flow.norm", bb.final_dim(), WEIGHT_DECAY)?;
        }
        if let Some(dir) = self.cfg.variant.swap_direction() {
            let c2 = bb.stage_dim(SWAP_STAGE);
            if dir.feeds_video() {
                register_linear(&mut store, "swap.to_video", 2 * c2, c2, true, WEIGHT_DECAY, &mut rng)?;
            }
            if dir.feeds_flow() {
                register_linear(&mut store, "swap.to_flow", 2 * c2, c2, true, WEIGHT_DECAY, &mut rng)?;
            }
        }
        for &site in &self.cfg.skip_sites {
            let dim = bb.stage_dim(site - 1);
            for branch in ["video", "flow"] {
                register_layer_norm(&mut store, &skip_name(branch, site), dim, SKIP_WEIGHT_DECAY)?;
            }
        }
        let mut fan_in = self.head_input_dim();
        for (i, fan_out) in self.head_dims().into_iter().enumerate() {
            register_linear(&mut store, &format!("head.fc{}", i + 1), fan_in, fan_out, true, WEIGHT_DECAY, &mut rng)?;
            fan_in = fan_out;
        }
        Ok(store)
    }

    /// Logits `[1, 2]` for one clip `[N, H, W, 3]` and, except for
    /// `single_st`, its flow input `[N, H, W, 2]`.
    pub fn forward(&self, ctx: &ForwardCtx, clip: &Var, flow: Option<&Var>) -> Result<Var, ModelError> {
        self.check_inputs(clip, flow)?;
        match (self.cfg.variant, flow) {
            (Variant::SingleSt, None) => {
                let f_v = self.spatial_temporal_features(ctx, clip)?;
                self.head(ctx, &f_v)
            }
            (Variant::Union, Some(flow)) => {
                let joint = Var::concat(&[clip, flow], 3)?;
                let out = self.primary.forward(ctx, &joint)?;
                let f = norm_pool(ctx, out.last(), "union.norm")?;
                self.head(ctx, &f)
            }
            (Variant::Ff, Some(flow)) => {
                let f_v = self.spatial_temporal_features(ctx, clip)?;
                let f_o = self.flow_features(ctx, flow)?;
                self.fuse_final(ctx, &f_v, &f_o)
            }
            (Variant::Sc, Some(flow)) => self.forward_skip(ctx, clip, flow),
            (v, Some(flow)) => {
                let dir = v.swap_direction().expect("remaining variants swap");
                self.forward_swap(ctx, clip, flow, dir)
            }
            (_, None) => unreachable!("checked by check_inputs"),
        }
    }

    /// Stacks per-clip logits into `[B, 2]`.
    pub fn forward_batch(&self, ctx: &ForwardCtx, clips: &[Var], flows: Option<&[Var]>) -> Result<Var, ModelError> {
        if clips.is_empty() {
            return Err(ModelError::Input("empty batch".into()));
        }
        if let Some(f) = flows {
            if f.len() != clips.len() {
                return Err(ModelError::Input(format!("{} clips but {} flow inputs", clips.len(), f.len())));
            }
        }
        let logits = clips
            .iter()
            .enumerate()
            .map(|(i, c)| self.forward(ctx, c, flows.map(|f| &f[i])))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&Var> = logits.iter().collect();
        Ok(Var::concat(&refs, 0)?)
    }

    /// `f_v`: the pooled final grid of the video backbone.
    pub fn spatial_temporal_features(&self, ctx: &ForwardCtx, clip: &Var) -> Result<Var, ModelError> {
        if self.cfg.variant == Variant::Union {
            return Err(ModelError::Config("union has no separate video branch".into()));
        }
        let out = self.primary.forward(ctx, clip)?;
        Ok(norm_pool(ctx, out.last(), "video.norm")?)
    }

    /// `f_o`: the pooled final grid of the flow backbone.
    pub fn flow_features(&self, ctx: &ForwardCtx, flow: &Var) -> Result<Var, ModelError> {
        let out = self.flow_backbone()?.forward(ctx, flow)?;
        Ok(norm_pool(ctx, out.last(), "flow.norm")?)
    }

    /// Concatenates `f_v` and `f_o` (each `[C]` or `[B, C]`) and classifies.
    pub fn fuse_final(&self, ctx: &ForwardCtx, f_v: &Var, f_o: &Var) -> Result<Var, ModelError> {
        if f_v.shape() != f_o.shape() {
            return Err(ModelError::Input(format!(
                "fusion inputs differ in shape: {:?} vs {:?}",
                f_v.shape(),
                f_o.shape()
            )));
        }
        let axis = f_v.shape().len() - 1;
        self.head(ctx, &Var::concat(&[f_v, f_o], axis)?)
    }

    /// The 3-layer MLP on a `[D]` or `[B, D]` feature; returns `[B, 2]`.
    pub fn head(&self, ctx: &ForwardCtx, features: &Var) -> Result<Var, ModelError> {
        let d = self.head_input_dim();
        let x = match features.shape() {
            [n] if *n == d => features.reshape(&[1, d])?,
            [_, n] if *n == d => features.clone(),
            other => {
                return Err(ModelError::Input(format!("head expects width {d}, got shape {other:?}")));
            }
        };
        let h = ctx.dropout(&linear(ctx, &x, "head.fc1", true)?.gelu()?)?;
        let h = ctx.dropout(&linear(ctx, &h, "head.fc2", true)?.gelu()?)?;
        Ok(linear(ctx, &h, "head.fc3", true)?)
    }

    /// Runs both backbones through stage 2 and applies the swap block.
    pub fn swap_trace(
        &self,
        ctx: &ForwardCtx,
        clip: &Var,
        flow: &Var,
        dir: SwapDirection,
    ) -> Result<SwapTrace, ModelError> {
        let fb = self.flow_backbone()?;
        let mut xv = self.primary.patch_embed(ctx, clip)?;
        let mut xo = fb.patch_embed(ctx, flow)?;
        for s in 0..=SWAP_STAGE {
            if s > 0 {
                xv = self.primary.patch_merge(ctx, s - 1, &xv)?;
                xo = fb.patch_merge(ctx, s - 1, &xo)?;
            }
            xv = self.primary.stage(ctx, s, &xv)?;
            xo = fb.stage(ctx, s, &xo)?;
        }
        let video_in = if dir.feeds_video() {
            linear(ctx, &Var::concat(&[&xv, &xo], 3)?, "swap.to_video", true)?
        } else {
            xv.clone()
        };
        let flow_in = if dir.feeds_flow() {
            linear(ctx, &Var::concat(&[&xo, &xv], 3)?, "swap.to_flow", true)?
        } else {
            xo.clone()
        };
        Ok(SwapTrace {
            video_stage2: xv,
            flow_stage2: xo,
            video_stage3_input: video_in,
            flow_stage3_input: flow_in,
        })
    }

    fn forward_swap(&self, ctx: &ForwardCtx, clip: &Var, flow: &Var, dir: SwapDirection) -> Result<Var, ModelError> {
        let trace = self.swap_trace(ctx, clip, flow, dir)?;
        let fv = finish_stages(&self.primary, ctx, trace.video_stage3_input)?;
        let fo = finish_stages(self.flow_backbone()?, ctx, trace.flow_stage3_input)?;
        let f_v = norm_pool(ctx, &fv, "video.norm")?;
        let f_o = norm_pool(ctx, &fo, "flow.norm")?;
        self.fuse_final(ctx, &f_v, &f_o)
    }

    fn forward_skip(&self, ctx: &ForwardCtx, clip: &Var, flow: &Var) -> Result<Var, ModelError> {
        let video = self.primary.forward(ctx, clip)?;
        let flows = self.flow_backbone()?.forward(ctx, flow)?;
        let mut parts = vec![
            norm_pool(ctx, video.last(), "video.norm")?,
            norm_pool(ctx, flows.last(), "flow.norm")?,
        ];
        for &site in &self.cfg.skip_sites {
            parts.push(norm_pool(ctx, &video.stages[site - 1], &skip_name("video", site))?);
            parts.push(norm_pool(ctx, &flows.stages[site - 1], &skip_name("flow", site))?);
        }
        let refs: Vec<&Var> = parts.iter().collect();
        self.head(ctx, &Var::concat(&refs, 0)?)
    }

    fn flow_backbone(&self) -> Result<&Backbone, ModelError> {
        self.flow
            .as_ref()
            .ok_or_else(|| ModelError::Config(format!("variant {} has no flow branch", self.cfg.variant)))
    }

    fn check_inputs(&self, clip: &Var, flow: Option<&Var>) -> Result<(), ModelError> {
        let cs = clip.shape();
        if cs.len() != 4 || cs[3] != RGB_CHANNELS {
            return Err(ModelError::Input(format!("clip must be [N, H, W, 3], got {cs:?}")));
        }
        if cs[0] != self.cfg.frame_count {
            return Err(ModelError::Input(format!(
                "clip has {} frames but the model expects {}",
                cs[0], self.cfg.frame_count
            )));
        }
        match (self.cfg.variant.uses_flow(), flow) {
            (false, Some(_)) => Err(ModelError::Input(format!(
                "flow input supplied but variant {} does not use flow",
                self.cfg.variant
            ))),
            (true, None) => Err(ModelError::Input(format!(
                "variant {} needs a flow input",
                self.cfg.name()
            ))),
            (true, Some(f)) => {
                let fs = f.shape();
                if fs.len() != 4 || fs[..3] != cs[..3] || fs[3] != FLOW_CHANNELS {
                    return Err(ModelError::Input(format!(
                        "flow input must be [{}, {}, {}, 2], got {fs:?}",
                        cs[0], cs[1], cs[2]
                    )));
                }
                Ok(())
            }
            (false, None) => Ok(()),
        }
    }
}

fn skip_name(branch: &str, site: usize) -> String {
    format!("skip.{branch}.{site}.norm")
}

/// Continues a backbone from the swap point to its final grid.
fn finish_stages(bb: &Backbone, ctx: &ForwardCtx, x: Var) -> Result<Var, ModelError> {
    let mut x = x;
    for s in SWAP_STAGE + 1..NUM_STAGES {
        x = bb.patch_merge(ctx, s - 1, &x)?;
        x = bb.stage(ctx, s, &x)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn model(name: &str) -> Dub3d {
        Dub3d::new(ModelConfig::from_name(name, "desk", 16).unwrap()).unwrap()
    }

    fn inputs(h: usize) -> (Var, Var) {
        let clip = Tensor::new(
            vec![16, h, h, 3],
            (0..16 * h * h * 3).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect(),
        )
        .unwrap();
        let flow = Tensor::new(
            vec![16, h, h, 2],
            (0..16 * h * h * 2).map(|i| ((i * 13 % 29) as f64 / 14.0) - 1.0).collect(),
        )
        .unwrap();
        (Var::constant(clip), Var::constant(flow))
    }

    #[test]
    fn head_widths_follow_variant() {
        let swin = |n: &str| Dub3d::new(ModelConfig::from_name(n, "swin-t", 16).unwrap()).unwrap();
        assert_eq!(swin("ff_fi8").head_input_dim(), 1536);
        assert_eq!(swin("sc_l2").head_input_dim(), 1920);
        assert_eq!(swin("sc_l123").head_input_dim(), 2880);
        assert_eq!(swin("single_st").head_dims(), [256, 64, 2]);
        assert_eq!(model("ff_fi8").head_dims(), [170, 64, 2]);
        assert_eq!(model("union").primary.cfg.input_channels, 5);
    }

    #[test]
    fn flow_presence_must_match_variant() {
        let (clip, flow) = inputs(32);
        let m = model("single_st");
        let store = m.init_params(1).unwrap();
        let ctx = ForwardCtx::eval(&store);
        assert!(m.forward(&ctx, &clip, Some(&flow)).is_err());
        let m = model("ff_fi8");
        let store = m.init_params(1).unwrap();
        let ctx = ForwardCtx::eval(&store);
        let err = m.forward(&ctx, &clip, None).unwrap_err();
        assert!(err.to_string().contains("flow"));
    }

    #[test]
    fn every_variant_gives_finite_logits() {
        let (clip, flow) = inputs(32);
        for name in ["single_st", "union", "sf_bidirectional", "sf_spatial_temporal", "sf_optical_flow", "sc_l2", "ff_fi8"] {
            let m = model(name);
            let store = m.init_params(3).unwrap();
            let ctx = ForwardCtx::eval(&store);
            let f = m.cfg.variant.uses_flow().then_some(&flow);
            let logits = m.forward(&ctx, &clip, f).unwrap();
            assert_eq!(logits.shape(), &[1, 2], "{name}");
            assert!(logits.data().iter().all(|v| v.is_finite()), "{name}");
        }
    }

    #[test]
    fn spatial_temporal_swap_leaves_flow_input_alone() {
        let (clip, flow) = inputs(32);
        let m = model("sf_spatial_temporal");
        let store = m.init_params(5).unwrap();
        assert!(store.get("swap.to_flow.weight").is_none());
        let ctx = ForwardCtx::eval(&store);
        let t = m.swap_trace(&ctx, &clip, &flow, SwapDirection::SpatialTemporal).unwrap();
        assert_eq!(t.flow_stage3_input.data(), t.flow_stage2.data());
        assert_ne!(t.video_stage3_input.data(), t.video_stage2.data());
    }
}

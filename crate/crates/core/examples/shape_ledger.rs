//! Stage shapes, fusion widths and parameter counts of every variant, plus a
//! forward pass of each on a desk-sized clip.

use dub3d::backbone::BackboneConfig;
use dub3d::model::{Dub3d, ModelConfig, PRESET_NAMES};
use dub3d::nn::ForwardCtx;
use dub3d::tensor::{Tensor, Var};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (name, cfg, n, side) in [
        ("swin-t", BackboneConfig::swin_t(3), 16, 224),
        ("desk", BackboneConfig::desk(3), 16, 56),
    ] {
        println!("{name} on {n}x{side}x{side}:");
        for (s, shape) in cfg.stage_shapes(n, side, side).iter().enumerate() {
            println!("  stage {} -> {shape:?}", s + 1);
        }
    }

    println!("{:18} {:>12} {:>12} {:>10}", "variant", "fusion in", "desk params", "logits");
    for name in PRESET_NAMES {
        let swin = Dub3d::new(ModelConfig::from_name(name, "swin-t", 16)?)?;
        let model = Dub3d::new(ModelConfig::from_name(name, "desk", 16)?)?;
        let store = model.init_params(0)?;
        let params: usize = store.iter().map(|p| p.value.numel()).sum();
        let clip = Var::constant(Tensor::full(&[16, 56, 56, 3], 0.1));
        let flow = Var::constant(Tensor::full(&[16, 56, 56, 2], 0.05));
        let flow = model.cfg.variant.uses_flow().then_some(&flow);
        let logits = model.forward(&ForwardCtx::eval(&store), &clip, flow)?;
        println!("{name:18} {:>12} {params:>12} {:>10}", swin.head_input_dim(), format!("{:?}", logits.shape()));
    }
    Ok(())
}

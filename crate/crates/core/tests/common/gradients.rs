use std::rc::Rc;

use dub3d::backbone::{layout, merge_neighbourhoods};
use dub3d::model::{Dub3d, ModelConfig};
use dub3d::tensor::{cross_entropy, Tensor, TensorError, Var};

use super::{grad_check, model_grad_check, random_tensor, rng, toy_inputs, weighted_sum};

pub const OP_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;

/// Variants checked end to end; together they cover every fusion path.
pub const MODEL_VARIANTS: [&str; 4] = ["single_st", "ff_fi1", "sc_l123", "sf_bidirectional"];

fn inputs(shapes: &[&[usize]], seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    shapes.iter().map(|s| random_tensor(s, &mut r)).collect()
}

fn check(
    out: &mut Vec<(&'static str, f64)>,
    name: &'static str,
    shapes: &[&[usize]],
    f: impl Fn(&[Var]) -> Result<Var, TensorError>,
) {
    out.push((name, grad_check(&inputs(shapes, name.len() as u64), |v| weighted_sum(&f(v)?, 99))));
}

/// Relative error of every differentiable op against central differences.
pub fn op_errors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let o = &mut out;
    check(o, "add", &[&[3, 4], &[4]], |v| v[0].add(&v[1]));
    check(o, "sub", &[&[2, 3, 4], &[3, 1]], |v| v[0].sub(&v[1]));
    check(o, "mul", &[&[2, 3, 4], &[2, 1, 4]], |v| v[0].mul(&v[1]));
    check(o, "scale", &[&[5]], |v| Ok(v[0].scale(-2.5)));
    check(o, "matmul_2d", &[&[3, 4], &[4, 5]], |v| v[0].matmul(&v[1]));
    check(o, "matmul_shared", &[&[2, 3, 4], &[4, 5]], |v| v[0].matmul(&v[1]));
    check(o, "matmul_batched", &[&[2, 3, 3, 4], &[2, 3, 4, 2]], |v| v[0].matmul(&v[1]));
    check(o, "softmax_last", &[&[3, 5]], |v| v[0].softmax(1));
    check(o, "softmax_middle", &[&[2, 4, 3]], |v| v[0].softmax(1));
    check(o, "layer_norm", &[&[4, 6], &[6], &[6]], |v| v[0].layer_norm(&v[1], &v[2], 1e-5));
    check(o, "gelu", &[&[3, 7]], |v| v[0].gelu());
    check(o, "dropout", &[&[4, 8]], |v| v[0].dropout(0.25, &mut rng(7)));
    check(o, "reshape", &[&[2, 6]], |v| v[0].reshape(&[3, 4]));
    check(o, "permute", &[&[2, 3, 4]], |v| v[0].permute(&[2, 0, 1]));
    check(o, "transpose", &[&[2, 3, 4]], |v| v[0].transpose(0, 2));
    check(o, "slice", &[&[4, 3]], |v| v[0].slice(0, 1, 3));
    check(o, "concat", &[&[2, 3], &[2, 2]], |v| Var::concat(&[&v[0], &v[1]], 1));
    // Repeated indices accumulate into the same source slot.
    check(o, "gather", &[&[6]], |v| v[0].gather(Rc::new(vec![0, 5, 5, 2, 0, 1]), &[2, 3]));
    check(o, "mean_axis", &[&[3, 4, 2]], |v| v[0].mean(1));
    check(o, "sum_all", &[&[3, 4]], |v| Ok(v[0].sum_all()));
    check(o, "mean_all", &[&[3, 4]], |v| Ok(v[0].mean_all()));
    o.push(("cross_entropy", grad_check(&inputs(&[&[3, 2]], 5), |v| cross_entropy(&v[0], &[0, 1, 1]))));

    let plan = layout([2, 5, 3], [2, 4, 2], [1, 2, 1]).unwrap();
    check(o, "window_round_trip", &[&[2, 5, 3, 2]], |v| plan.reverse(&plan.partition(&v[0])?));
    check(o, "window_partition", &[&[2, 5, 3, 2]], |v| plan.partition(&v[0]));
    check(o, "patch_merge_gather", &[&[1, 3, 3, 2]], |v| merge_neighbourhoods(&v[0]));
    let mask = plan.attention_mask().expect("shifted plan has a mask");
    let (nw, n) = (plan.num_windows(), plan.tokens_per_window());
    let mask = Var::constant(Tensor::new(vec![nw, 1, n, n], mask).unwrap());
    check(o, "masked_attention", &[&[nw, 1, n, 4], &[nw, 1, n, 4]], |v| {
        let scores = v[0].matmul(&v[1].permute(&[0, 1, 3, 2])?)?;
        scores.add(&mask)?.softmax(3)?.matmul(&v[1])
    });
    out
}

/// Relative error of the whole desk model loss for `variant`.
pub fn model_error(variant: &str) -> f64 {
    // Four frames at 32x32 give an 8x8 first-stage grid, so shifted windows
    // and their masks are exercised.
    let mut cfg = ModelConfig::from_name(variant, "desk", 16).unwrap();
    cfg.frame_count = 4;
    cfg.frame_interval = 1;
    cfg.validate().unwrap();
    let model = Dub3d::new(cfg.clone()).unwrap();
    let (clip, flow) = toy_inputs(&cfg, 32, 32, 3);
    model_grad_check(&model, &clip, flow.as_ref(), 2, 11)
}

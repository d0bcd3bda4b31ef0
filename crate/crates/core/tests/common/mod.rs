#![allow(dead_code)]

use dub3d::model::{Dub3d, ModelConfig};
use dub3d::nn::ForwardCtx;
use dub3d::tensor::{cross_entropy, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `||a - n|| / max(||a||, ||n||)`, or the absolute gap when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Reduces any output to a scalar with fixed random weights, so every
/// output element contributes to the checked gradient.
pub fn weighted_sum(y: &Var, seed: u64) -> Result<Var, TensorError> {
    let w = random_tensor(y.shape(), &mut rng(seed));
    Ok(y.mul(&Var::constant(w))?.sum_all())
}

/// Largest relative error between backprop and central differences over
/// every input of `f`.
pub fn grad_check(inputs: &[Tensor], f: impl Fn(&[Var]) -> Result<Var, TensorError>) -> f64 {
    let leaves: Vec<Var> = inputs.iter().cloned().map(Var::leaf).collect();
    let out = f(&leaves).unwrap();
    assert_eq!(out.numel(), 1, "checked function must return a scalar");
    out.backward().unwrap();
    let eval = |xs: &[Tensor]| {
        let vars: Vec<Var> = xs.iter().cloned().map(Var::constant).collect();
        f(&vars).unwrap().data()[0]
    };
    let mut worst: f64 = 0.0;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().map(|g| g.into_data()).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        let mut xs = inputs.to_vec();
        for j in 0..inputs[i].numel() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&xs);
            xs[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// A small clip and matching flow input for `cfg`.
pub fn toy_inputs(cfg: &ModelConfig, height: usize, width: usize, seed: u64) -> (Tensor, Option<Tensor>) {
    let mut r = rng(seed);
    let clip = random_tensor(&[cfg.frame_count, height, width, 3], &mut r);
    let flow = cfg
        .variant
        .uses_flow()
        .then(|| random_tensor(&[cfg.frame_count, height, width, 2], &mut r));
    (clip, flow)
}

/// Central-difference check of the full model loss against backprop, over
/// a sample of coordinates from every parameter and the input clip.
/// Returns the relative error over all sampled coordinates.
pub fn model_grad_check(model: &Dub3d, clip: &Tensor, flow: Option<&Tensor>, per_param: usize, seed: u64) -> f64 {
    let mut store = model.init_params(seed).unwrap();
    let loss_of = |store: &dub3d::tensor::ParamStore, clip: &Tensor, track: bool| {
        let ctx = if track { ForwardCtx::eval_tracked(store) } else { ForwardCtx::eval(store) };
        let x = if track { Var::leaf(clip.clone()) } else { Var::constant(clip.clone()) };
        let logits = model.forward(&ctx, &x, flow.map(|f| Var::constant(f.clone())).as_ref()).unwrap();
        let loss = cross_entropy(&logits, &[1]).unwrap();
        if track {
            loss.backward().unwrap();
        }
        (loss.data()[0], ctx.params.take_grads(), x.grad())
    };
    let (_, grads, clip_grad) = loss_of(&store, clip, true);
    let mut r = rng(seed ^ 0x5eed);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for id in 0..store.len() {
        let numel = store.by_id(id).value.numel();
        for _ in 0..per_param.min(numel) {
            let j = r.gen_range(0..numel);
            analytic.push(grads[id].as_ref().map_or(0.0, |g| g[j]));
            let orig = store.by_id(id).value.data()[j];
            store.by_id_mut(id).value.data_mut()[j] = orig + FD_STEP;
            let up = loss_of(&store, clip, false).0;
            store.by_id_mut(id).value.data_mut()[j] = orig - FD_STEP;
            let down = loss_of(&store, clip, false).0;
            store.by_id_mut(id).value.data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    let clip_grad = clip_grad.expect("input gradient").into_data();
    let mut x = clip.clone();
    for _ in 0..per_param {
        let j = r.gen_range(0..clip.numel());
        analytic.push(clip_grad[j]);
        let orig = x.data()[j];
        x.data_mut()[j] = orig + FD_STEP;
        let up = loss_of(&store, &x, false).0;
        x.data_mut()[j] = orig - FD_STEP;
        let down = loss_of(&store, &x, false).0;
        x.data_mut()[j] = orig;
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    relative_error(&analytic, &numeric)
}

pub mod flow;
pub mod gradients;
pub mod metrics;
pub mod window;

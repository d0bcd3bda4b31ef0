//! Layer helpers shared by the backbone and the fusion heads.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Bindings, ParamStore, Tensor, TensorError, Var};

/// Default weight decay for every parameter outside the skip blocks.
pub const WEIGHT_DECAY: f64 = 5.0e-4;
/// Weight decay for skip-connection block parameters.
pub const SKIP_WEIGHT_DECAY: f64 = 1.0e-2;
/// The single dropout rate used on attention weights and fusion hiddens.
pub const DROPOUT: f64 = 0.25;
pub const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Everything a forward pass needs besides its inputs.
pub struct ForwardCtx<'a> {
    pub params: Bindings<'a>,
    pub train: bool,
    pub dropout: f64,
    rng: RefCell<ChaCha8Rng>,
}

impl<'a> ForwardCtx<'a> {
    /// Training pass: gradients tracked, dropout active.
    pub fn train(store: &'a ParamStore, dropout: f64, seed: u64) -> Self {
        ForwardCtx {
            params: Bindings::new(store, true),
            train: true,
            dropout,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    /// Inference pass: no dropout and parameters enter as constants.
    pub fn eval(store: &'a ParamStore) -> Self {
        ForwardCtx {
            params: Bindings::new(store, false),
            train: false,
            dropout: 0.0,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    /// Eval-mode numerics (no dropout) with gradients tracked.
    pub fn eval_tracked(store: &'a ParamStore) -> Self {
        ForwardCtx {
            params: Bindings::new(store, true),
            train: false,
            dropout: 0.0,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    pub fn param(&self, name: &str) -> Result<Var, TensorError> {
        self.params.var(name)
    }

    pub fn dropout(&self, x: &Var) -> Result<Var, TensorError> {
        if !self.train || self.dropout == 0.0 {
            return Ok(x.clone());
        }
        x.dropout(self.dropout, &mut *self.rng.borrow_mut())
    }
}

/// Samples from N(0, std²) truncated to ±2 std by resampling.
pub fn trunc_normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, std).expect("positive std");
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

pub fn register_linear(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    bias: bool,
    weight_decay: f64,
    rng: &mut impl Rng,
) -> Result<(), TensorError> {
    store.insert(format!("{name}.weight"), trunc_normal(&[fan_in, fan_out], INIT_STD, rng), weight_decay)?;
    if bias {
        store.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]), weight_decay)?;
    }
    Ok(())
}

pub fn register_layer_norm(store: &mut ParamStore, name: &str, dim: usize, weight_decay: f64) -> Result<(), TensorError> {
    store.insert(format!("{name}.gamma"), Tensor::full(&[dim], 1.0), weight_decay)?;
    store.insert(format!("{name}.beta"), Tensor::zeros(&[dim]), weight_decay)?;
    Ok(())
}

/// `x·W (+ b)` over the last axis.
pub fn linear(ctx: &ForwardCtx, x: &Var, name: &str, bias: bool) -> Result<Var, TensorError> {
    let y = x.matmul(&ctx.param(&format!("{name}.weight"))?)?;
    if bias {
        y.add(&ctx.param(&format!("{name}.bias"))?)
    } else {
        Ok(y)
    }
}

pub fn layer_norm(ctx: &ForwardCtx, x: &Var, name: &str) -> Result<Var, TensorError> {
    x.layer_norm(
        &ctx.param(&format!("{name}.gamma"))?,
        &ctx.param(&format!("{name}.beta"))?,
        LN_EPS,
    )
}

/// Layer norm over channels followed by the mean over every token, for a
/// `[.., C]` token tensor. Returns a `[C]` vector.
pub fn norm_pool(ctx: &ForwardCtx, tokens: &Var, name: &str) -> Result<Var, TensorError> {
    let c = *tokens.shape().last().expect("rank >= 1");
    let flat = tokens.reshape(&[tokens.numel() / c, c])?;
    layer_norm(ctx, &flat, name)?.mean(0)
}

/// Derives an independent stream seed from a base seed and a label.
pub fn stream_seed(base: u64, label: &str) -> u64 {
    // FNV-1a over the label, mixed with the base seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

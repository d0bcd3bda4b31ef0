//! Fits a two-layer perceptron to XOR with the autograd engine and AdamW
//! under the step-decay schedule.

use dub3d::nn::{linear, register_linear, ForwardCtx};
use dub3d::tensor::{cross_entropy, lr_schedule, AdamW, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    register_linear(&mut store, "fc1", 2, 16, true, 0.0, &mut rng)?;
    register_linear(&mut store, "fc2", 16, 2, true, 0.0, &mut rng)?;
    let x = Var::constant(Tensor::new(vec![4, 2], vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0])?);
    let targets = [0, 1, 1, 0];

    let mut opt = AdamW::new(&store);
    let steps = 400;
    for step in 0..steps {
        let ctx = ForwardCtx::eval_tracked(&store);
        let logits = linear(&ctx, &linear(&ctx, &x, "fc1", true)?.gelu()?, "fc2", true)?;
        let loss = cross_entropy(&logits, &targets)?;
        loss.backward()?;
        let grads = ctx.params.take_grads();
        drop(ctx);
        opt.step(&mut store, &grads, lr_schedule(step, steps, 0.05))?;
        if step % 100 == 0 || step == steps - 1 {
            let p = logits.softmax(1)?;
            let correct = targets.iter().enumerate().filter(|&(i, &t)| p.data()[2 * i + t] > 0.5).count();
            println!("step {step:3} loss {:.4} correct {correct}/4", loss.data()[0]);
        }
    }
    Ok(())
}

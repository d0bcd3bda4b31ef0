//! Balanced accuracy and F1 on an imbalanced prediction set, by random
//! undersampling and by exhaustive enumeration.

use dub3d::data::Label;
use dub3d::train::{balanced_metrics, Prediction, Resampling};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // 12 real clips against 5 generated ones, from a detector that is right
    // 80% of the time.
    let preds: Vec<Prediction> = (0..17)
        .map(|i| {
            let truth = if i < 12 { Label::Real } else { Label::Generated };
            let right = rng.gen_bool(0.8);
            let pred = if right { truth } else { Label::from_index(1 - truth.index()).unwrap() };
            Prediction {
                id: format!("clip{i:02}"),
                truth,
                pred,
                score: if pred == Label::Generated { 0.8 } else { 0.2 },
            }
        })
        .collect();

    for (name, resampling) in [
        ("random, 10 repeats", Resampling::Random { repeats: 10, seed: 1 }),
        ("exhaustive", Resampling::Exhaustive),
    ] {
        let r = balanced_metrics(&preds, resampling)?;
        println!(
            "{name:20} accuracy {:.3} ± {:.3}  F1 {:.3} ± {:.3}  over {} subsets of {} per class",
            r.accuracy_mean, r.accuracy_std, r.f1_mean, r.f1_std, r.repeats, r.per_class
        );
    }
    Ok(())
}

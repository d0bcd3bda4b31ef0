//! Scores a split of a manifest with a trained checkpoint and reports
//! balanced metrics overall and per generator.
//!
//! cargo run --release --example evaluate -- <checkpoint> <manifest> [split]

use std::path::PathBuf;

use dub3d::data::{load_manifest, Split};
use dub3d::train::{balanced_metrics, per_generator_breakdown, predict, Resampling, DEFAULT_REPEATS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [ckpt, manifest] = [0, 1].map(|i| args.get(i).map(PathBuf::from));
    let (Some(ckpt), Some(manifest)) = (ckpt, manifest) else {
        return Err("usage: evaluate <checkpoint> <manifest> [split]".into());
    };
    let split: Split = args.get(2).map(String::as_str).unwrap_or("in_domain_test").parse()?;

    let preds = predict(&ckpt, &manifest, split, None)?;
    let resampling = Resampling::Random { repeats: DEFAULT_REPEATS, seed: 0 };
    let r = balanced_metrics(&preds.predictions, resampling)?;
    println!("{} clips: accuracy {:.3} ± {:.3}, F1 {:.3} ± {:.3}", preds.predictions.len(), r.accuracy_mean, r.accuracy_std, r.f1_mean, r.f1_std);
    for row in per_generator_breakdown(&preds.predictions, &load_manifest(&manifest)?, resampling)? {
        match (row.report, row.warning) {
            (Some(r), _) => println!("  {:16} {:5} clips  accuracy {:.3}", row.model, row.clips, r.accuracy_mean),
            (None, Some(w)) => println!("  {:16} {w}", row.model),
            (None, None) => {}
        }
    }
    Ok(())
}

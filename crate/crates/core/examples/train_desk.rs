//! Generates the desk synthetic set, trains one variant on it and reports
//! train and held-out accuracy.
//!
//! cargo run --release --example train_desk -- [variant] [seed] [out_dir] [lr] [batch_size]

use std::path::PathBuf;
use std::time::Instant;

use dub3d::data::{load_manifest, synth_dataset, Split, SynthSpec, MANIFEST_FILE};
use dub3d::train::{balanced_metrics, train, RunConfig, Resampling, TrainOptions, Trained, DEFAULT_REPEATS};
use dub3d::util::RunLog;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant = args.first().map(String::as_str).unwrap_or("ff_fi8");
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let out = PathBuf::from(args.get(2).map(String::as_str).unwrap_or("target/desk-run"));

    let data_dir = out.join("data");
    synth_dataset(&SynthSpec::desk(), &data_dir, seed)?;
    let mut run = RunConfig::desk(variant, data_dir.join(MANIFEST_FILE), out.join(variant))?;
    run.seed = seed;
    if let Some(lr) = args.get(3) {
        run.lr = lr.parse()?;
    }
    if let Some(b) = args.get(4) {
        run.batch_size = b.parse()?;
    }

    let start = Instant::now();
    let mut log = RunLog::create(&run.output_dir, "train", &run, seed)?;
    let outcome = train(&run, &TrainOptions::default(), &mut log)?;
    for s in &outcome.steps {
        println!("step {:3} epoch {} lr {:.2e} loss {:.4}", s.step, s.epoch, s.lr, s.loss);
    }
    println!("train accuracy {:.3} after {:.0?}", outcome.train_accuracy, start.elapsed());

    let trained = Trained::load(&outcome.checkpoint, Some(&run.model.name()))?;
    let entries = load_manifest(&run.manifest)?;
    let preds = trained.predict(&entries, &data_dir, Split::InDomainTest)?;
    let report = balanced_metrics(&preds.predictions, Resampling::Random { repeats: DEFAULT_REPEATS, seed })?;
    println!(
        "held-out accuracy {:.3} ± {:.3}, F1 {:.3} ± {:.3}",
        report.accuracy_mean, report.accuracy_std, report.f1_mean, report.f1_std
    );
    Ok(())
}

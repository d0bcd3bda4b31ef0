//! Generates the seeded motion-only synthetic set and summarises what was
//! written.
//!
//! cargo run --release --example synth_dataset -- [out_dir] [seed]

use std::collections::BTreeMap;
use std::path::PathBuf;

use dub3d::data::{synth_dataset, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map(String::as_str).unwrap_or("target/synth"));
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(0);

    let spec = SynthSpec::desk();
    let entries = synth_dataset(&spec, &out, seed)?;
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for e in &entries {
        *counts.entry((e.split.as_str().into(), e.label.as_str().into())).or_default() += 1;
    }
    println!("{} clips of {}x{}x{} at {} fps in {}", entries.len(), spec.frames, spec.height, spec.width, spec.fps, out.display());
    for ((split, label), n) in counts {
        println!("  {split:16} {label:10} {n}");
    }

    // Out-of-domain fakes shaped like one of the generator presets.
    let preset = SynthSpec::preset("streamingt2v")?;
    let extra = synth_dataset(&preset, &out.join("streamingt2v"), seed)?;
    println!("{} out-of-domain clips at {}x{}, {} frames", extra.len(), preset.width, preset.height, preset.frames);
    Ok(())
}

//! Estimates block-matching flow for a real-motion and a generated-motion
//! synthetic clip and compares how consistent their displacements are.
//!
//! cargo run --release --example flow_field -- [interval]

use dub3d::data::{preprocess_clip, render_clip, ClipKind, Mode, PreprocessConfig, SynthSpec};
use dub3d::flow::{extract_flow_sequence, load_flow_file, FlowConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let interval: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(8);
    let spec = SynthSpec::desk();
    let cfg = FlowConfig::desk();
    let dir = tempfile::tempdir()?;

    for (kind, name) in [(ClipKind::Real, "real"), (ClipKind::Fake, "generated")] {
        let raw = render_clip(kind, &spec, 7);
        let clip = preprocess_clip(&raw.frames, &PreprocessConfig::desk(), Mode::Eval)?;
        let field = extract_flow_sequence(&clip, interval, &cfg)?;
        let [steps, hf, wf, _] = field.flows.shape().try_into().unwrap();

        // Spread of the per-step mean displacement: steady motion keeps it low.
        let means: Vec<(f64, f64)> = field
            .flows
            .data()
            .chunks(hf * wf * 2)
            .map(|step| {
                let n = (hf * wf) as f64;
                let dx = step.iter().step_by(2).sum::<f64>() / n;
                let dy = step.iter().skip(1).step_by(2).sum::<f64>() / n;
                (dx, dy)
            })
            .collect();
        let (mx, my) = means.iter().fold((0.0, 0.0), |a, m| (a.0 + m.0, a.1 + m.1));
        let (mx, my) = (mx / steps as f64, my / steps as f64);
        let spread = means.iter().map(|m| (m.0 - mx).powi(2) + (m.1 - my).powi(2)).sum::<f64>() / steps as f64;
        println!("{name:10} {steps} steps on a {hf}x{wf} grid, mean ({mx:+.2}, {my:+.2}) px, spread {:.2}", spread.sqrt());

        let path = dir.path().join(format!("{name}.flow"));
        field.save(&path, &cfg)?;
        assert_eq!(load_flow_file(&path, &cfg)?, field);
    }
    Ok(())
}

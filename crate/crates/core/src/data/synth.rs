//! Seeded synthetic clips whose classes differ only in how they move.
//!
//! Every frame is a cyclic shift of one texture that is periodic over the
//! frame, so all frames of a clip share the same pixel multiset. Real clips
//! translate at a constant velocity. Fake clips jitter independently in
//! every frame, so their motion has no temporal coherence. Appearance fakes
//! move coherently over a blocky texture instead.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ingest::{write_rawv, Frame, RawClip};
use super::manifest::{write_manifest, Label, ManifestEntry, Split};
use super::DataError;
use crate::nn::stream_seed;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const CLIP_DIR: &str = "clips";
/// Side of the constant blocks in appearance-fake textures.
const BLOCK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipKind {
    Real,
    Fake,
    AppearanceFake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub real: usize,
    pub fake: usize,
    pub appearance_fake: usize,
    /// Extra real and fake clips per class placed in `in_domain_test`.
    pub held_out: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub fps: f64,
    /// Pixels moved per frame.
    pub velocity: usize,
    /// Model names assigned round-robin to generated clips.
    pub generators: Vec<String>,
    pub source: String,
    /// Split for the main (non held-out) clips.
    pub split: Split,
    pub id_prefix: String,
    /// Sinusoids summed per texture.
    pub components: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            real: 100,
            fake: 100,
            appearance_fake: 0,
            held_out: 0,
            height: 56,
            width: 56,
            frames: 16,
            fps: 8.0,
            velocity: 1,
            generators: vec!["synthetic".into()],
            source: "synthetic".into(),
            split: Split::Train,
            id_prefix: "synth".into(),
            components: 6,
        }
    }
}

/// Generator settings from the self-generated video curation table.
pub const GENERATOR_PRESETS: [(&str, &str, usize, f64, usize); 5] = [
    ("open-sora-256p", "Open-Sora", 256, 8.0, 16),
    ("open-sora-512p", "Open-Sora", 512, 8.0, 16),
    ("open-sora-plan", "Open-Sora-Plan", 256, 24.0, 65),
    ("streamingt2v", "StreamingT2V", 720, 10.0, 24),
    ("dynamicrafter", "DynamiCrafter", 256, 8.0, 16),
];

impl SynthSpec {
    /// The desk training set: 100 real and 100 fake 56×56 clips plus a
    /// 50-per-class held-out split.
    pub fn desk() -> Self {
        SynthSpec {
            held_out: 50,
            ..Self::default()
        }
    }

    /// Named presets: `desk` or a generator preset, which yields
    /// out-of-domain fakes at that generator's resolution, rate and length.
    pub fn preset(name: &str) -> Result<Self, DataError> {
        if name == "desk" {
            return Ok(Self::desk());
        }
        let (_, model, p, fps, frames) = GENERATOR_PRESETS
            .iter()
            .find(|g| g.0 == name)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = GENERATOR_PRESETS.iter().map(|g| g.0).collect();
                DataError::Config(format!("unknown synth preset `{name}` (desk, {})", names.join(", ")))
            })?;
        Ok(SynthSpec {
            real: 0,
            fake: 8,
            height: p,
            width: (p * 16 / 9).next_multiple_of(2),
            frames,
            fps,
            generators: vec![model.into()],
            source: "-".into(),
            split: Split::OutOfDomainTest,
            id_prefix: name.into(),
            ..Self::default()
        })
    }

    /// Parses a spec file. A `preset` key supplies defaults that the other
    /// keys override.
    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| DataError::Config(format!("synth spec: {e}")))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| DataError::Config("synth spec must be a JSON object".into()))?;
        let base = match obj.remove("preset") {
            Some(serde_json::Value::String(name)) => Self::preset(&name)?,
            Some(other) => return Err(DataError::Config(format!("synth spec: preset must be a string, got {other}"))),
            None => Self::default(),
        };
        let mut merged = serde_json::to_value(base).expect("spec serializes");
        let target = merged.as_object_mut().expect("object");
        for (k, v) in obj.iter() {
            target.insert(k.clone(), v.clone());
        }
        let spec: SynthSpec = serde_json::from_value(merged).map_err(|e| DataError::Config(format!("synth spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Config(format!("synth spec: {m}")));
        if self.height < BLOCK || self.width < BLOCK || self.frames == 0 {
            return bad("height and width must be at least 8 and frames positive");
        }
        if !(self.fps > 0.0) {
            return bad("fps must be positive");
        }
        if self.generators.is_empty() && (self.fake + self.appearance_fake + self.held_out) > 0 {
            return bad("generators must name at least one model");
        }
        if self.components == 0 {
            return bad("components must be positive");
        }
        Ok(())
    }
}

/// A periodic RGB texture of `height × width`, stored as f64 in [0, 255].
fn smooth_texture(height: usize, width: usize, components: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..components)
        .map(|_| {
            let ky = rng.gen_range(1..=4) as f64 * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let kx = rng.gen_range(1..=4) as f64;
            let phase = rng.gen_range(0.0..TAU);
            let amp = rng.gen_range(0.5..1.0);
            let mix = [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)];
            (ky, kx, phase, mix.map(|m| m * amp))
        })
        .collect();
    let norm: [f64; 3] = std::array::from_fn(|c| waves.iter().map(|w| w.3[c]).sum::<f64>());
    let mut out = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let s: f64 = waves
                    .iter()
                    .map(|&(ky, kx, phase, amp)| {
                        amp[c] * (TAU * (ky * y as f64 / height as f64 + kx * x as f64 / width as f64) + phase).sin()
                    })
                    .sum();
                out.push(128.0 + 120.0 * s / norm[c]);
            }
        }
    }
    out
}

/// Replaces each `BLOCK × BLOCK` tile with its top-left value.
fn blocky(texture: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = texture.to_vec();
    for y in 0..height {
        for x in 0..width {
            let src = ((y / BLOCK * BLOCK) * width + x / BLOCK * BLOCK) * 3;
            for c in 0..3 {
                out[(y * width + x) * 3 + c] = texture[src + c];
            }
        }
    }
    out
}

const DIRECTIONS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Largest per-axis jitter of fake clips, in multiples of the velocity.
/// Two jittered frames then differ by at most twice this, which stays
/// inside the default flow search radius at velocity 1.
const JITTER_REACH: isize = 4;

/// Per-frame content offsets `(dx, dy)`: frame `t` shows the texture moved
/// by `offset[t]`. Real clips translate at constant velocity; fake clips
/// jitter around a fixed position independently in every frame.
fn offsets(kind: ClipKind, frames: usize, velocity: usize, rng: &mut ChaCha8Rng) -> Vec<(isize, isize)> {
    let v = velocity as isize;
    let start = (rng.gen_range(0..1024isize), rng.gen_range(0..1024isize));
    match kind {
        ClipKind::Real | ClipKind::AppearanceFake => {
            let (dx, dy) = DIRECTIONS[rng.gen_range(0..4)];
            (0..frames as isize).map(|t| (start.0 + dx * v * t, start.1 + dy * v * t)).collect()
        }
        ClipKind::Fake => {
            let reach = JITTER_REACH * v;
            (0..frames)
                .map(|_| (start.0 + rng.gen_range(-reach..=reach), start.1 + rng.gen_range(-reach..=reach)))
                .collect()
        }
    }
}

/// Renders one clip deterministically from its seed.
pub fn render_clip(kind: ClipKind, spec: &SynthSpec, seed: u64) -> RawClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (spec.height, spec.width);
    let mut texture = smooth_texture(h, w, spec.components, &mut rng);
    if kind == ClipKind::AppearanceFake {
        texture = blocky(&texture, h, w);
    }
    let texture: Vec<u8> = texture.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let frames = offsets(kind, spec.frames, spec.velocity, &mut rng)
        .into_iter()
        .map(|(ox, oy)| {
            let mut data = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                let sy = (y as isize - oy).rem_euclid(h as isize) as usize;
                for x in 0..w {
                    let sx = (x as isize - ox).rem_euclid(w as isize) as usize;
                    data.extend_from_slice(&texture[(sy * w + sx) * 3..(sy * w + sx) * 3 + 3]);
                }
            }
            Frame { height: h, width: w, data }
        })
        .collect();
    RawClip {
        fps: spec.fps as f32,
        frames,
    }
}

/// Writes clips under `out/clips` and the manifest to `out/manifest.jsonl`.
pub fn synth_dataset(spec: &SynthSpec, out: &Path, seed: u64) -> Result<Vec<ManifestEntry>, DataError> {
    spec.validate()?;
    let clip_dir = out.join(CLIP_DIR);
    fs::create_dir_all(&clip_dir).map_err(|e| DataError::io(&clip_dir, e))?;
    let mut plan: Vec<(ClipKind, &str, usize, Split)> = Vec::new();
    for (kind, tag, count) in [
        (ClipKind::Real, "real", spec.real),
        (ClipKind::Fake, "fake", spec.fake),
        (ClipKind::AppearanceFake, "appearance", spec.appearance_fake),
    ] {
        plan.extend((0..count).map(|i| (kind, tag, i, spec.split)));
    }
    for (kind, tag, base) in [(ClipKind::Real, "real", spec.real), (ClipKind::Fake, "fake", spec.fake)] {
        plan.extend((0..spec.held_out).map(|i| (kind, tag, base + i, Split::InDomainTest)));
    }
    let mut entries = Vec::with_capacity(plan.len());
    let mut generated = 0usize;
    for (kind, tag, index, split) in plan {
        let id = format!("{}-{tag}-{index:05}", spec.id_prefix);
        let clip = render_clip(kind, spec, stream_seed(seed, &id));
        let rel = format!("{CLIP_DIR}/{id}.rawv");
        write_rawv(&out.join(&rel), &clip)?;
        let (label, model) = match kind {
            ClipKind::Real => (Label::Real, None),
            _ => {
                let m = spec.generators[generated % spec.generators.len()].clone();
                generated += 1;
                (Label::Generated, Some(m))
            }
        };
        let entry = ManifestEntry {
            id,
            path: rel,
            label,
            source: spec.source.clone(),
            model,
            fps: spec.fps,
            width: spec.width as u32,
            height: spec.height as u32,
            frame_count: spec.frames as u32,
            split,
        };
        entry.validate().map_err(DataError::Config)?;
        entries.push(entry);
    }
    write_manifest(&entries, &out.join(MANIFEST_FILE))?;
    Ok(entries)
}

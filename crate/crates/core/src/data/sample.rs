use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Where the sampled window starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Offset {
    /// Frame 0, used for evaluation.
    Start,
    /// Uniform over the start positions that keep the window inside the
    /// source, drawn from this seed.
    Seeded(u64),
}

/// Source frames skipped between samples to approximate `target_fps`.
pub fn frame_stride(native_fps: f64, target_fps: Option<f64>) -> usize {
    match target_fps {
        Some(t) if t > 0.0 => ((native_fps / t).round() as usize).max(1),
        _ => 1,
    }
}

/// `n` source frame indices starting at the chosen offset with the
/// frame-rate stride. Indices past the end wrap to the start.
pub fn sample_frames(frame_count: usize, native_fps: f64, n: usize, target_fps: Option<f64>, offset: Offset) -> Vec<usize> {
    let frame_count = frame_count.max(1);
    let stride = frame_stride(native_fps, target_fps);
    let span = (n.max(1) - 1) * stride + 1;
    let start = match offset {
        Offset::Start => 0,
        Offset::Seeded(seed) if frame_count > span => ChaCha8Rng::seed_from_u64(seed).gen_range(0..=frame_count - span),
        Offset::Seeded(_) => 0,
    };
    (0..n).map(|i| (start + i * stride) % frame_count).collect()
}

//! Randomized invariants across sampling, scheduling, persistence,
//! windowing and statistics.

mod common;

use dub3d::backbone::layout;
use dub3d::data::{parse_manifest, sample_frames, Label, ManifestEntry, Offset, Split};
use dub3d::stats::{composition_summary, histogram, Dimension};
use dub3d::tensor::{load_checkpoint, lr_schedule, save_checkpoint, Tensor, Var};
use proptest::prelude::*;

fn entry_strategy() -> impl Strategy<Value = ManifestEntry> {
    (
        any::<bool>(),
        prop::sample::select(vec![4.0, 8.0, 10.0, 24.0, 25.0, 29.97, 30.0, 60.0]),
        prop::sample::select(vec![256u32, 320, 512, 576, 720, 1080, 240]),
        1u32..400,
        0usize..3,
    )
        .prop_map(|(real, fps, short, frames, source)| ManifestEntry {
            id: String::new(),
            path: "clip.mp4".into(),
            label: if real { Label::Real } else { Label::Generated },
            source: ["InternVid", "VidProM", "-"][source].into(),
            model: (!real).then(|| "Pika".to_string()),
            fps,
            width: short + 64,
            height: short,
            frame_count: frames,
            split: Split::Train,
        })
}

fn with_ids(mut entries: Vec<ManifestEntry>) -> Vec<ManifestEntry> {
    for (i, e) in entries.iter_mut().enumerate() {
        e.id = format!("e{i:05}");
    }
    entries
}

proptest! {
    #[test]
    fn sampled_frames_stay_in_range(
        frames in 1usize..300,
        native in prop::sample::select(vec![8.0, 10.0, 24.0, 25.0, 30.0]),
        n in 1usize..32,
        target in prop::option::of(prop::sample::select(vec![4.0, 8.0, 30.0])),
        seed in any::<u64>(),
    ) {
        for offset in [Offset::Start, Offset::Seeded(seed)] {
            let idx = sample_frames(frames, native, n, target, offset);
            prop_assert_eq!(idx.len(), n);
            prop_assert!(idx.iter().all(|&i| i < frames));
            prop_assert_eq!(&idx, &sample_frames(frames, native, n, target, offset));
        }
    }

    #[test]
    fn schedule_never_increases(steps_per_epoch in 1u64..500, step in 0u64..5000) {
        let base = 1e-4;
        prop_assert_eq!(lr_schedule(0, steps_per_epoch, base), base);
        prop_assert!(lr_schedule(step + 1, steps_per_epoch, base) <= lr_schedule(step, steps_per_epoch, base));
    }

    #[test]
    fn histograms_partition_their_input(entries in prop::collection::vec(entry_strategy(), 1..60)) {
        for d in Dimension::ALL {
            let r = histogram(d, &entries, None);
            let total: u64 = r.per_label.iter().map(|h| h.counts.iter().sum::<u64>()).sum();
            prop_assert_eq!(total as usize, entries.len());
            for h in &r.per_label {
                let pct: f64 = (0..r.bins.len()).map(|i| h.pct(i)).sum();
                prop_assert!((pct - 100.0).abs() < 0.01);
                prop_assert_eq!(h.total, h.counts.iter().sum::<u64>());
            }
        }
    }

    #[test]
    fn reports_ignore_entry_order(entries in prop::collection::vec(entry_strategy(), 1..40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = entries.clone();
        shuffled.shuffle(&mut common::rng(seed));
        for d in Dimension::ALL {
            prop_assert_eq!(histogram(d, &entries, None), histogram(d, &shuffled, None));
        }
        let (a, b) = (composition_summary(&entries), composition_summary(&shuffled));
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.total_clips, a.rows.iter().map(|r| r.count).sum::<u64>());
    }

    #[test]
    fn manifest_round_trips(entries in prop::collection::vec(entry_strategy(), 1..20)) {
        let entries = with_ids(entries);
        let text: String = entries.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
        prop_assert_eq!(parse_manifest(text.as_bytes()).unwrap(), entries);
    }

    #[test]
    fn checkpoint_round_trips_at_single_precision(values in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        let t = Tensor::new(vec![values.len()], values.clone()).unwrap();
        save_checkpoint(&path, "ff_fi8", "hash", 3, serde_json::json!({}), &[("w", &t)]).unwrap();
        let (header, tensors) = load_checkpoint(&path, Some("ff_fi8")).unwrap();
        prop_assert_eq!(header.step, 3);
        for (got, want) in tensors[0].1.data().iter().zip(&values) {
            prop_assert_eq!(*got, *want as f32 as f64);
        }
    }

    #[test]
    fn larger_window_layouts_invert(
        grid in (1usize..7, 1usize..12, 1usize..12),
        window in (1usize..5, 1usize..8, 1usize..8),
        shift_frac in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
    ) {
        let grid = [grid.0, grid.1, grid.2];
        let window = [window.0, window.1, window.2];
        let shift = [
            (shift_frac.0 * window[0] as f64) as usize,
            (shift_frac.1 * window[1] as f64) as usize,
            (shift_frac.2 * window[2] as f64) as usize,
        ];
        let plan = layout(grid, window, shift).unwrap();
        let n: usize = grid.iter().product();
        let x = Var::constant(Tensor::new(vec![grid[0], grid[1], grid[2], 1], (0..n).map(|i| i as f64).collect()).unwrap());
        let back = plan.reverse(&plan.partition(&x).unwrap()).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }
}

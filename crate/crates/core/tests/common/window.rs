use dub3d::backbone::{effective_window, layout, Backbone, BackboneConfig};
use dub3d::nn::ForwardCtx;
use dub3d::tensor::{Tensor, Var};

use super::{random_tensor, rng};

/// Window shapes swept by the bijection check.
pub const SWEEP_WINDOWS: [[usize; 3]; 3] = [[2, 4, 4], [2, 3, 3], [4, 7, 7]];

/// Grid token expected in window slot `pos` (padded coordinates): the grid
/// is rolled by `-shift` and padded by repeating its last slice.
fn expected_source(pos: [usize; 3], grid: [usize; 3], padded: [usize; 3], shift: [usize; 3]) -> usize {
    let src = [0, 1, 2].map(|d| ((pos[d] + shift[d]) % padded[d]).min(grid[d] - 1));
    (src[0] * grid[1] + src[1]) * grid[2] + src[2]
}

/// Checks partition against the roll-and-pad definition and
/// `reverse(partition(x)) == x` for every grid up to `max` and every shift of
/// each window. Returns the number of layouts checked and any failures.
pub fn sweep_bijection(max: [usize; 3]) -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut failures = Vec::new();
    for window in SWEEP_WINDOWS {
        for t in 1..=max[0] {
            for h in 1..=max[1] {
                for w in 1..=max[2] {
                    let grid = [t, h, w];
                    for s0 in 0..window[0] {
                        for s1 in 0..window[1] {
                            for s2 in 0..window[2] {
                                checked += 1;
                                if let Err(e) = check_layout(grid, window, [s0, s1, s2]) {
                                    failures.push(e);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (checked, failures)
}

fn check_layout(grid: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Result<(), String> {
    let tag = format!("grid {grid:?} window {window:?} shift {shift:?}");
    let plan = layout(grid, window, shift).map_err(|e| format!("{tag}: {e}"))?;
    let n: usize = grid.iter().product();
    // Two channels holding the token id and its negation.
    let ids: Vec<f64> = (0..n).flat_map(|i| [i as f64, -(i as f64)]).collect();
    let x = Var::constant(Tensor::new(vec![grid[0], grid[1], grid[2], 2], ids.clone()).unwrap());
    let windows = plan.partition(&x).map_err(|e| format!("{tag}: {e}"))?;
    let counts = [0, 1, 2].map(|d| plan.padded[d] / window[d]);
    let data = windows.data();
    let mut slot = 0;
    for wt in 0..counts[0] {
        for wh in 0..counts[1] {
            for ww in 0..counts[2] {
                for lt in 0..window[0] {
                    for lh in 0..window[1] {
                        for lw in 0..window[2] {
                            let pos = [wt * window[0] + lt, wh * window[1] + lh, ww * window[2] + lw];
                            let want = expected_source(pos, grid, plan.padded, shift) as f64;
                            if data[2 * slot] != want || data[2 * slot + 1] != -want {
                                return Err(format!("{tag}: slot {slot} holds {} not {want}", data[2 * slot]));
                            }
                            slot += 1;
                        }
                    }
                }
            }
        }
    }
    let back = plan.reverse(&windows).map_err(|e| format!("{tag}: {e}"))?;
    if back.data() != ids.as_slice() {
        return Err(format!("{tag}: reverse(partition(x)) differs from x"));
    }
    Ok(())
}

/// Largest deviation of an attention row sum from 1 and the largest weight
/// on a masked pair, over shifted and unshifted blocks of a desk backbone on
/// random tokens.
pub fn attention_extremes(seed: u64) -> (f64, f64) {
    let cfg = BackboneConfig::desk(3);
    let bb = Backbone::new(cfg.clone(), "video").unwrap();
    let mut store = dub3d::tensor::ParamStore::new();
    bb.register(&mut store, &mut rng(seed)).unwrap();
    let ctx = ForwardCtx::eval(&store);
    let mut row_err: f64 = 0.0;
    let mut masked: f64 = 0.0;
    for grid in [[2, 8, 8], [4, 9, 10], [3, 14, 8]] {
        let x = Var::constant(random_tensor(&[grid[0], grid[1], grid[2], cfg.embed_dim], &mut rng(seed + 1))).scale(3.0);
        for shifted in [false, true] {
            let (_, weights) = bb.window_attention(&ctx, 0, 0, &x, shifted, true).unwrap();
            let weights = weights.expect("weights kept");
            let (win, shift) = effective_window(grid, cfg.window_size, shifted);
            let plan = layout(grid, win, shift).unwrap();
            let n = plan.tokens_per_window();
            let heads = weights.shape()[1];
            let w = weights.data();
            for row in w.chunks(n) {
                row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
            }
            if !plan.is_shifted() {
                continue;
            }
            let counts = [0, 1, 2].map(|d| plan.padded[d] / win[d]);
            for win_i in 0..plan.num_windows() {
                let wpos = [win_i / (counts[1] * counts[2]), win_i / counts[2] % counts[1], win_i % counts[2]];
                let labels: Vec<usize> = (0..n)
                    .map(|k| {
                        let local = [k / (win[1] * win[2]), k / win[2] % win[1], k % win[2]];
                        let pos = [0, 1, 2].map(|d| wpos[d] * win[d] + local[d]);
                        region_label(pos, plan.padded, win, shift)
                    })
                    .collect();
                for h in 0..heads {
                    for i in 0..n {
                        for j in 0..n {
                            if labels[i] != labels[j] {
                                masked = masked.max(w[((win_i * heads + h) * n + i) * n + j]);
                            }
                        }
                    }
                }
            }
        }
    }
    (row_err, masked)
}

/// Which of the rolled grid's contiguous regions a padded position belongs
/// to: tokens wrapped around by the roll never attend across the seam.
fn region_label(pos: [usize; 3], padded: [usize; 3], win: [usize; 3], shift: [usize; 3]) -> usize {
    (0..3).fold(0, |acc, d| {
        let r = if shift[d] == 0 || pos[d] < padded[d] - win[d] {
            0
        } else if pos[d] < padded[d] - shift[d] {
            1
        } else {
            2
        };
        acc * 3 + r
    })
}

use dub3d::flow::{estimate_flow_pair, extract_flow_sequence, FlowConfig, QUANT_SCALE};
use dub3d::tensor::Tensor;
use rand::Rng;

use super::rng;

/// A `[h, w, 3]` frame whose intensities are `k / QUANT_SCALE` for integer
/// `k < levels`, so quantization is exact and the oracle can work on `k`.
pub fn integer_frame(h: usize, w: usize, levels: i64, rng: &mut impl Rng) -> (Tensor, Vec<i64>) {
    let ks: Vec<i64> = (0..h * w * 3).map(|_| rng.gen_range(0..levels)).collect();
    let data = ks.iter().map(|&k| k as f64 / QUANT_SCALE).collect();
    (Tensor::new(vec![h, w, 3], data).unwrap(), ks)
}

/// Exhaustive SSD search written from the definition: every displacement in
/// the radius, clamped sampling at borders, and ties resolved by the
/// smallest `(|dx| + |dy|, dx, dy)`.
pub fn brute_force_flow(a: &[i64], b: &[i64], h: usize, w: usize, cfg: &FlowConfig) -> Vec<(i32, i32)> {
    let r = cfg.radius as i32;
    let half = (cfg.block / 2) as i32;
    let clamp = |v: i32, len: usize| v.clamp(0, len as i32 - 1) as usize;
    let px = |f: &[i64], y: usize, x: usize, c: usize| f[(y * w + x) * 3 + c];
    let mut out = Vec::new();
    for cy in (0..cfg.cells(h)).map(|i| cfg.center(i, h) as i32) {
        for cx in (0..cfg.cells(w)).map(|i| cfg.center(i, w) as i32) {
            let mut best: Option<((i64, i32, i32, i32), (i32, i32))> = None;
            for dx in -r..=r {
                for dy in -r..=r {
                    let mut cost = 0i64;
                    for oy in -half..=half {
                        for ox in -half..=half {
                            let (y, x) = (cy + oy, cx + ox);
                            for c in 0..3 {
                                let d = px(a, clamp(y, h), clamp(x, w), c) - px(b, clamp(y + dy, h), clamp(x + dx, w), c);
                                cost += d * d;
                            }
                        }
                    }
                    let key = (cost, dx.abs() + dy.abs(), dx, dy);
                    if best.map_or(true, |(k, _)| key < k) {
                        best = Some((key, (dx, dy)));
                    }
                }
            }
            out.push(best.unwrap().1);
        }
    }
    out
}

fn as_pairs(t: &Tensor) -> Vec<(i32, i32)> {
    t.data().chunks(2).map(|p| (p[0] as i32, p[1] as i32)).collect()
}

/// Compares the estimator with the brute-force search on `pairs` random
/// 16x16 frame pairs; half use three intensity levels so ties are common.
/// Returns the number of mismatching pairs.
pub fn oracle_mismatches(pairs: usize, seed: u64) -> usize {
    let cfg = FlowConfig::desk();
    let mut r = rng(seed);
    let mut bad = 0;
    for i in 0..pairs {
        let levels = if i % 2 == 0 { 256 } else { 3 };
        let (a, ka) = integer_frame(16, 16, levels, &mut r);
        let (b, kb) = integer_frame(16, 16, levels, &mut r);
        let got = as_pairs(&estimate_flow_pair(&a, &b, &cfg, None).unwrap());
        if got != brute_force_flow(&ka, &kb, 16, 16, &cfg) {
            bad += 1;
        }
    }
    bad
}

/// Moves a random texture by every `(dx, dy)` within the radius and counts
/// interior cells whose estimate differs from the true shift, along with
/// the number of interior cells checked.
pub fn translation_errors(seed: u64) -> (usize, usize) {
    let cfg = FlowConfig {
        block: 5,
        radius: 4,
        stride: 4,
        ..FlowConfig::desk()
    };
    let (h, w) = (28, 28);
    let mut r = rng(seed);
    let (_, base) = integer_frame(h, w, 256, &mut r);
    let frame = |ks: &[i64]| Tensor::new(vec![h, w, 3], ks.iter().map(|&k| k as f64 / QUANT_SCALE).collect()).unwrap();
    let reach = cfg.block / 2 + cfg.radius;
    let r_i = cfg.radius as i32;
    let (mut wrong, mut checked) = (0, 0);
    for dx in -r_i..=r_i {
        for dy in -r_i..=r_i {
            // b(y, x) = a(y - dy, x - dx); uncovered pixels get fresh noise.
            let mut moved = Vec::with_capacity(base.len());
            for y in 0..h as i32 {
                for x in 0..w as i32 {
                    for c in 0..3 {
                        let (sy, sx) = (y - dy, x - dx);
                        moved.push(if sy >= 0 && sx >= 0 && sy < h as i32 && sx < w as i32 {
                            base[(sy as usize * w + sx as usize) * 3 + c]
                        } else {
                            r.gen_range(0..256)
                        });
                    }
                }
            }
            let flow = estimate_flow_pair(&frame(&base), &frame(&moved), &cfg, None).unwrap();
            let got = as_pairs(&flow);
            for iy in 0..cfg.cells(h) {
                for ix in 0..cfg.cells(w) {
                    let (cy, cx) = (cfg.center(iy, h), cfg.center(ix, w));
                    let interior = cy >= reach && cx >= reach && cy + reach < h && cx + reach < w;
                    if interior {
                        checked += 1;
                        if got[iy * cfg.cells(w) + ix] != (dx, dy) {
                            wrong += 1;
                        }
                    }
                }
            }
        }
    }
    (wrong, checked)
}

/// `(N, K)` pairs whose flow sequence length is not `N - K`, or which were
/// accepted although `K >= N`.
pub fn sequence_length_violations() -> Vec<(usize, usize)> {
    let cfg = FlowConfig::desk();
    let mut r = rng(17);
    let mut bad = Vec::new();
    for n in 1..=10 {
        let frames: Vec<Tensor> = (0..n).map(|_| integer_frame(8, 8, 256, &mut r).0).collect();
        let clip = Tensor::stack(&frames).unwrap();
        for k in 1..=n + 1 {
            match extract_flow_sequence(&clip, k, &cfg) {
                Ok(f) if k < n && f.len() == n - k => {}
                Err(_) if k >= n => {}
                _ => bad.push((n, k)),
            }
        }
    }
    bad
}

/// Mirrors both frames horizontally and counts mirrored cells where the
/// flow is not `(-dx, dy)`.
pub fn flip_violations(pairs: usize, seed: u64) -> usize {
    // 17 columns with stride 4 put cell centers at 2, 6, 10, 14, which
    // mirror onto each other.
    let cfg = FlowConfig {
        block: 5,
        radius: 3,
        stride: 4,
        ..FlowConfig::desk()
    };
    let (h, w) = (17, 17);
    let mut r = rng(seed);
    let mirror = |t: &Tensor| {
        let d = t.data();
        let data = (0..h)
            .flat_map(|y| (0..w).flat_map(move |x| (0..3).map(move |c| d[(y * w + (w - 1 - x)) * 3 + c])))
            .collect();
        Tensor::new(vec![h, w, 3], data).unwrap()
    };
    let mut bad = 0;
    for _ in 0..pairs {
        let (a, _) = integer_frame(h, w, 256, &mut r);
        let (b, _) = integer_frame(h, w, 256, &mut r);
        let f = as_pairs(&estimate_flow_pair(&a, &b, &cfg, None).unwrap());
        let g = as_pairs(&estimate_flow_pair(&mirror(&a), &mirror(&b), &cfg, None).unwrap());
        let (hf, wf) = (cfg.cells(h), cfg.cells(w));
        for iy in 0..hf {
            for ix in 0..wf {
                let (dx, dy) = f[iy * wf + ix];
                if g[iy * wf + (wf - 1 - ix)] != (-dx, dy) {
                    bad += 1;
                }
            }
        }
    }
    bad
}

use dub3d::data::Label;
use dub3d::train::{balanced_metrics, Prediction, Resampling};
use rand::Rng;

use super::rng;

pub fn prediction(i: usize, truth: Label, pred: Label) -> Prediction {
    Prediction {
        id: format!("clip-{i}"),
        truth,
        pred,
        score: if pred == Label::Generated { 0.8 } else { 0.2 },
    }
}

/// Random predictions with `real` real and `fake` generated clips.
pub fn random_predictions(real: usize, fake: usize, seed: u64) -> Vec<Prediction> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for (truth, count) in [(Label::Real, real), (Label::Generated, fake)] {
        for _ in 0..count {
            let pred = if r.gen_bool(0.6) { truth } else { other(truth) };
            out.push(prediction(out.len(), truth, pred));
        }
    }
    out
}

fn other(l: Label) -> Label {
    match l {
        Label::Real => Label::Generated,
        Label::Generated => Label::Real,
    }
}

/// Mean and population std of accuracy and F1 over every majority subset
/// of minority size, enumerated by bitmask.
pub fn brute_force(preds: &[Prediction]) -> (f64, f64, f64, f64, usize) {
    let real: Vec<&Prediction> = preds.iter().filter(|p| p.truth == Label::Real).collect();
    let fake: Vec<&Prediction> = preds.iter().filter(|p| p.truth == Label::Generated).collect();
    let (minority, majority) = if real.len() <= fake.len() { (real, fake) } else { (fake, real) };
    let m = minority.len();
    let mut accs = Vec::new();
    let mut f1s = Vec::new();
    for mask in 0u32..(1 << majority.len()) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let chosen: Vec<&Prediction> = minority
            .iter()
            .copied()
            .chain((0..majority.len()).filter(|i| mask >> i & 1 == 1).map(|i| majority[i]))
            .collect();
        let correct = chosen.iter().filter(|p| p.truth == p.pred).count();
        let tp = chosen.iter().filter(|p| p.truth == Label::Generated && p.pred == Label::Generated).count() as f64;
        let fp = chosen.iter().filter(|p| p.truth == Label::Real && p.pred == Label::Generated).count() as f64;
        let fneg = chosen.iter().filter(|p| p.truth == Label::Generated && p.pred == Label::Real).count() as f64;
        accs.push(correct as f64 / chosen.len() as f64);
        f1s.push(if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) });
    }
    let stats = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        (mean, (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
    };
    let (am, asd) = stats(&accs);
    let (fm, fsd) = stats(&f1s);
    (am, asd, fm, fsd, accs.len())
}

/// Largest gap between the exhaustive metric and the bitmask enumeration
/// over every class split up to 8 against 4, plus any subset-count mismatch.
pub fn exhaustive_gap() -> (f64, bool) {
    let mut gap: f64 = 0.0;
    let mut counts_ok = true;
    for real in 1..=8 {
        for fake in 1..=8 {
            if real.min(fake) > 4 {
                continue;
            }
            for seed in 0..3 {
                let preds = random_predictions(real, fake, (real * 100 + fake * 10 + seed) as u64);
                let got = balanced_metrics(&preds, Resampling::Exhaustive).unwrap();
                let (am, asd, fm, fsd, n) = brute_force(&preds);
                counts_ok &= got.repeats == n;
                for (a, b) in [(got.accuracy_mean, am), (got.accuracy_std, asd), (got.f1_mean, fm), (got.f1_std, fsd)] {
                    gap = gap.max((a - b).abs());
                }
            }
        }
    }
    (gap, counts_ok)
}

/// The worked fixture: 4 real with one false positive, 2 generated both
/// caught. Every balanced subset scores 7/8 on average.
pub fn seven_eighths_fixture() -> Vec<Prediction> {
    use Label::*;
    [(Real, Real), (Real, Real), (Real, Real), (Real, Generated), (Generated, Generated), (Generated, Generated)]
        .into_iter()
        .enumerate()
        .map(|(i, (t, p))| prediction(i, t, p))
        .collect()
}

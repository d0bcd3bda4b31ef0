//! Balanced accuracy and F1 over repeated majority-class undersampling.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::predict::Prediction;
use super::TrainError;
use crate::data::{Label, ManifestEntry};

pub const DEFAULT_REPEATS: usize = 10;

/// How majority-class subsets are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampling {
    /// `repeats` uniform draws without replacement; repeat `r` is seeded
    /// with `seed + r`.
    Random { repeats: usize, seed: u64 },
    /// Every subset of minority size, in lexicographic order.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub repeats: usize,
    /// Clips per class in each balanced subsample.
    pub per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRow {
    pub model: String,
    pub clips: usize,
    pub report: Option<EvalReport>,
    pub warning: Option<String>,
}

/// Accuracy and F1 with generated as the positive class. F1 is 0 when
/// precision and recall are both 0.
pub fn accuracy_f1(pairs: impl IntoIterator<Item = (Label, Label)>) -> (f64, f64) {
    let (mut tp, mut fp, mut fn_, mut n, mut correct) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (truth, pred) in pairs {
        n += 1;
        correct += (truth == pred) as usize;
        match (truth, pred) {
            (Label::Generated, Label::Generated) => tp += 1,
            (Label::Real, Label::Generated) => fp += 1,
            (Label::Generated, Label::Real) => fn_ += 1,
            _ => {}
        }
    }
    let acc = if n == 0 { 0.0 } else { correct as f64 / n as f64 };
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (acc, f1)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    // Identical repeats get an exact mean and zero spread, free of
    // summation rounding.
    if values.windows(2).all(|w| w[0] == w[1]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Next k-combination of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Undersamples the majority class to the minority size and averages
/// accuracy and F1 over the subsamples. Standard deviations are population
/// values over repeats.
pub fn balanced_metrics(preds: &[Prediction], resampling: Resampling) -> Result<EvalReport, TrainError> {
    let real: Vec<&Prediction> = preds.iter().filter(|p| p.truth == Label::Real).collect();
    let fake: Vec<&Prediction> = preds.iter().filter(|p| p.truth == Label::Generated).collect();
    if real.is_empty() || fake.is_empty() {
        return Err(TrainError::Config(format!(
            "balanced metrics need both classes; got {} real and {} generated predictions",
            real.len(),
            fake.len()
        )));
    }
    let (minority, majority) = if real.len() <= fake.len() { (&real, &fake) } else { (&fake, &real) };
    let m = minority.len();
    let score = |chosen: &[usize]| {
        accuracy_f1(
            minority
                .iter()
                .copied()
                .chain(chosen.iter().map(|&i| majority[i]))
                .map(|p| (p.truth, p.pred)),
        )
    };
    let mut accs = Vec::new();
    let mut f1s = Vec::new();
    match resampling {
        Resampling::Random { repeats, seed } => {
            if repeats == 0 {
                return Err(TrainError::Config("repeats must be at least 1".into()));
            }
            for r in 0..repeats as u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r));
                let mut chosen = index::sample(&mut rng, majority.len(), m).into_vec();
                chosen.sort_unstable();
                let (a, f) = score(&chosen);
                accs.push(a);
                f1s.push(f);
            }
        }
        Resampling::Exhaustive => {
            let mut chosen: Vec<usize> = (0..m).collect();
            loop {
                let (a, f) = score(&chosen);
                accs.push(a);
                f1s.push(f);
                if !next_combination(&mut chosen, majority.len()) {
                    break;
                }
            }
        }
    }
    let (accuracy_mean, accuracy_std) = mean_std(&accs);
    let (f1_mean, f1_std) = mean_std(&f1s);
    Ok(EvalReport {
        accuracy_mean,
        accuracy_std,
        f1_mean,
        f1_std,
        repeats: accs.len(),
        per_class: m,
    })
}

/// One row per generator model in `manifest`: that model's generated clips
/// against every real clip. Models without predictions get a warning row.
pub fn per_generator_breakdown(
    preds: &[Prediction],
    manifest: &[ManifestEntry],
    resampling: Resampling,
) -> Result<Vec<GeneratorRow>, TrainError> {
    let by_id: HashMap<&str, &ManifestEntry> = manifest.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut models: BTreeMap<&str, Vec<Prediction>> = manifest
        .iter()
        .filter_map(|e| e.model.as_deref())
        .map(|m| (m, Vec::new()))
        .collect();
    let mut real = Vec::new();
    for p in preds {
        let entry = by_id
            .get(p.id.as_str())
            .ok_or_else(|| TrainError::Config(format!("prediction `{}` has no manifest entry", p.id)))?;
        match (&entry.model, p.truth) {
            (None, Label::Real) => real.push(p.clone()),
            (Some(m), Label::Generated) => models.get_mut(m.as_str()).expect("listed").push(p.clone()),
            _ => {
                return Err(TrainError::Config(format!(
                    "prediction `{}` disagrees with its manifest label",
                    p.id
                )))
            }
        }
    }
    models
        .into_iter()
        .map(|(model, fakes)| {
            let clips = fakes.len();
            if clips == 0 {
                return Ok(GeneratorRow {
                    model: model.to_string(),
                    clips,
                    report: None,
                    warning: Some(format!("no predictions for generator `{model}`; row omitted")),
                });
            }
            let mut subset = fakes;
            subset.extend(real.iter().cloned());
            Ok(GeneratorRow {
                model: model.to_string(),
                clips,
                report: Some(balanced_metrics(&subset, resampling)?),
                warning: None,
            })
        })
        .collect()
}

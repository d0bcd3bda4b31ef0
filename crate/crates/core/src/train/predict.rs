use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{model_inputs, RunConfig, TrainError};
use crate::data::{load_manifest, Label, ManifestEntry, Mode, Offset, Split};
use crate::model::Dub3d;
use crate::nn::ForwardCtx;
use crate::tensor::{read_header, ParamStore, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub id: String,
    #[serde(rename = "true")]
    pub truth: Label,
    pub pred: Label,
    /// Probability of the generated class.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub split: Split,
    pub predictions: Vec<Prediction>,
}

/// A trained model restored from a checkpoint together with the run
/// configuration that produced it.
pub struct Trained {
    pub run: RunConfig,
    pub model: Dub3d,
    pub store: ParamStore,
}

impl Trained {
    /// Restores a checkpoint. When `expected` names a variant, a checkpoint
    /// for any other variant is rejected.
    pub fn load(path: &Path, expected: Option<&str>) -> Result<Self, TrainError> {
        let header = read_header(path)?;
        let run: RunConfig = serde_json::from_value(header.meta.get("run").cloned().unwrap_or_default())
            .map_err(|e| TrainError::Config(format!("{}: checkpoint lacks a run configuration: {e}", path.display())))?;
        let model = Dub3d::new(run.model.clone())?;
        let mut store = model.init_params(0)?;
        store.load_into(path, expected)?;
        Ok(Trained { run, model, store })
    }

    /// Softmax probability of the generated class for one clip.
    pub fn score(&self, entry: &ManifestEntry, root: &Path) -> Result<f64, TrainError> {
        let (clip, flow) = model_inputs(&self.run, entry, root, Offset::Start, Mode::Eval)?;
        let ctx = ForwardCtx::eval(&self.store);
        let logits = self
            .model
            .forward(&ctx, &Var::constant(clip), flow.map(Var::constant).as_ref())?;
        let l = logits.data();
        Ok(1.0 / (1.0 + (l[0] - l[1]).exp()))
    }

    /// Eval-mode predictions for every entry of `split`, in manifest order.
    pub fn predict(&self, entries: &[ManifestEntry], root: &Path, split: Split) -> Result<PredictionSet, TrainError> {
        let chosen: Vec<&ManifestEntry> = entries.iter().filter(|e| e.split == split).collect();
        let predictions = chosen
            .par_iter()
            .map(|e| {
                let score = self.score(e, root)?;
                Ok(Prediction {
                    id: e.id.clone(),
                    truth: e.label,
                    pred: if score > 0.5 { Label::Generated } else { Label::Real },
                    score,
                })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Ok(PredictionSet { split, predictions })
    }
}

/// Loads a checkpoint and predicts every clip of `split` in the manifest.
pub fn predict(checkpoint: &Path, manifest: &Path, split: Split, expected: Option<&str>) -> Result<PredictionSet, TrainError> {
    let trained = Trained::load(checkpoint, expected)?;
    let entries = load_manifest(manifest)?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    trained.predict(&entries, root, split)
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), TrainError> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| TrainError::io(path, e))?);
    for p in preds {
        writeln!(out, "{}", serde_json::to_string(p).expect("prediction serializes")).map_err(|e| TrainError::io(path, e))?;
    }
    out.flush().map_err(|e| TrainError::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, TrainError> {
    let file = File::open(path).map_err(|e| TrainError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TrainError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line)
            .map_err(|e| TrainError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if !(0.0..=1.0).contains(&p.score) {
            return Err(TrainError::Data(format!("{} line {}: score {} outside [0, 1]", path.display(), i + 1, p.score)));
        }
        out.push(p);
    }
    Ok(out)
}

//! Training, prediction and the evaluation protocol.

mod metrics;
mod predict;

use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use metrics::{accuracy_f1, balanced_metrics, per_generator_breakdown, EvalReport, GeneratorRow, Resampling, DEFAULT_REPEATS};
pub use predict::{predict, read_predictions, write_predictions, Prediction, PredictionSet, Trained};

use crate::data::{clip_path, load_clip, load_manifest, DataError, Label, ManifestEntry, Mode, Offset, PreprocessConfig, Split};
use crate::flow::{extract_flow_sequence, flow_branch_input, flow_cache_path, load_flow_file, FlowConfig, FlowError};
use crate::model::{Dub3d, ModelConfig, ModelError};
use crate::nn::{stream_seed, ForwardCtx, DROPOUT, SKIP_WEIGHT_DECAY, WEIGHT_DECAY};
use crate::tensor::{cross_entropy, lr_schedule, AdamW, Tensor, TensorError, Var};
use crate::util::{config_hash, RunLog};

pub const BASE_LR: f64 = 1.0e-4;
pub const PAPER_BATCH: usize = 20;
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Dataset(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Everything a training run needs. Relative paths resolve against the
/// working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_skip_wd")]
    pub skip_weight_decay: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    /// Train on a per-class random fraction of the train split.
    #[serde(default)]
    pub train_fraction: Option<f64>,
    /// Generator models left out of training.
    #[serde(default)]
    pub exclude_models: Vec<String>,
    /// External decoder command template for container inputs.
    #[serde(default)]
    pub decoder_command: Option<String>,
}

fn default_wd() -> f64 {
    WEIGHT_DECAY
}

fn default_skip_wd() -> f64 {
    SKIP_WEIGHT_DECAY
}

fn default_dropout() -> f64 {
    DROPOUT
}

impl RunConfig {
    /// Full-size settings: Swin-T backbones on 16×224×224 clips.
    pub fn paper(variant: &str, manifest: PathBuf, output_dir: PathBuf) -> Result<Self, TrainError> {
        Ok(RunConfig {
            model: ModelConfig::from_name(variant, "swin-t", 16)?,
            preprocess: PreprocessConfig::default(),
            flow: FlowConfig::default(),
            lr: BASE_LR,
            batch_size: PAPER_BATCH,
            weight_decay: WEIGHT_DECAY,
            skip_weight_decay: SKIP_WEIGHT_DECAY,
            dropout: DROPOUT,
            epochs: 1,
            seed: 0,
            manifest,
            output_dir,
            train_fraction: None,
            exclude_models: vec!["Text2Video-Zero".into()],
            decoder_command: None,
        })
    }

    /// CPU-scale settings: desk backbones on 16×56×56 clips.
    pub fn desk(variant: &str, manifest: PathBuf, output_dir: PathBuf) -> Result<Self, TrainError> {
        Ok(RunConfig {
            model: ModelConfig::from_name(variant, "desk", 16)?,
            preprocess: PreprocessConfig::desk(),
            flow: FlowConfig::desk(),
            lr: 1.0e-3,
            batch_size: 5,
            epochs: 3,
            exclude_models: Vec::new(),
            ..Self::paper(variant, manifest, output_dir)?
        })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        self.model.validate()?;
        self.preprocess.validate()?;
        self.flow.validate()?;
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if self.weight_decay < 0.0 || self.skip_weight_decay < 0.0 {
            return bad("weight decays must be non-negative".into());
        }
        if self.preprocess.frame_count != self.model.frame_count {
            return bad(format!(
                "preprocess.frame_count {} differs from model.frame_count {}",
                self.preprocess.frame_count, self.model.frame_count
            ));
        }
        if let Some(f) = self.train_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("train_fraction {f} must lie in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Preprocessed clip and, for variants that use it, the flow-branch input.
pub fn model_inputs(
    run: &RunConfig,
    entry: &ManifestEntry,
    root: &Path,
    offset: Offset,
    mode: Mode,
) -> Result<(Tensor, Option<Tensor>), TrainError> {
    let clip = load_clip(entry, root, &run.preprocess, offset, mode, run.decoder_command.as_deref())?;
    if !run.model.variant.uses_flow() {
        return Ok((clip, None));
    }
    let s = clip.shape().to_vec();
    let k = run.model.frame_interval;
    // Augmented clips never match a cache, so only the deterministic path
    // consults one.
    let cached = (mode == Mode::Eval && offset == Offset::Start)
        .then(|| flow_cache_path(&clip_path(entry, root), k))
        .filter(|p| p.exists())
        .and_then(|p| load_flow_file(&p, &run.flow).ok())
        .filter(|f| f.interval == k && f.len() + k == s[0]);
    let field = match cached {
        Some(f) => f,
        None => extract_flow_sequence(&clip, k, &run.flow)?,
    };
    let flow = flow_branch_input(&field, &run.flow, s[0], s[1], s[2])?;
    Ok((clip, Some(flow)))
}

/// Keeps `fraction` of each class of the train split, chosen uniformly
/// per class. Other splits pass through unchanged.
pub fn subsample_train(entries: &[ManifestEntry], fraction: f64, seed: u64) -> Result<Vec<ManifestEntry>, TrainError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(TrainError::Config(format!("fraction {fraction} must lie in (0, 1]")));
    }
    let mut keep = vec![true; entries.len()];
    for label in [Label::Real, Label::Generated] {
        let members: Vec<usize> = (0..entries.len())
            .filter(|&i| entries[i].split == Split::Train && entries[i].label == label)
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = (members.len() as f64 * fraction).round() as usize;
        if k == 0 {
            return Err(TrainError::Config(format!(
                "fraction {fraction} leaves no {label} clips out of {}",
                members.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, label.as_str()));
        let mut chosen = vec![false; members.len()];
        for i in index::sample(&mut rng, members.len(), k) {
            chosen[i] = true;
        }
        for (j, &i) in members.iter().enumerate() {
            keep[i] = chosen[j];
        }
    }
    Ok(entries.iter().zip(keep).filter(|(_, k)| *k).map(|(e, _)| e.clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub steps: Vec<StepRecord>,
    pub checkpoint: PathBuf,
    /// Eval-mode accuracy over the training clips after the last epoch.
    pub train_accuracy: f64,
}

/// Options that shape a run without changing its result.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Stop after this many optimizer steps.
    pub max_steps: Option<u64>,
    /// Skip the final pass over the training clips.
    pub skip_train_accuracy: bool,
}

fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch-{epoch}.ckpt"))
}

/// Trains `run.model` on the train split of `run.manifest`.
pub fn train(run: &RunConfig, opts: &TrainOptions, log: &mut RunLog) -> Result<TrainOutcome, TrainError> {
    run.validate()?;
    let entries = load_manifest(&run.manifest)?;
    let root = run.manifest.parent().unwrap_or(Path::new("")).to_path_buf();
    let entries = match run.train_fraction {
        Some(f) => subsample_train(&entries, f, run.seed)?,
        None => entries,
    };
    let train_set: Vec<ManifestEntry> = entries
        .into_iter()
        .filter(|e| e.split == Split::Train)
        .filter(|e| e.model.as_ref().map_or(true, |m| !run.exclude_models.contains(m)))
        .collect();
    let reals = train_set.iter().filter(|e| e.label == Label::Real).count();
    if reals == 0 || reals == train_set.len() {
        return Err(TrainError::Data(format!(
            "train split needs both labels; found {reals} real and {} generated clips",
            train_set.len() - reals
        )));
    }

    let model = Dub3d::new(run.model.clone())?;
    let mut store = model.init_params(run.seed)?;
    for p in store.iter_mut() {
        p.weight_decay = if p.name.starts_with("skip.") {
            run.skip_weight_decay
        } else {
            run.weight_decay
        };
    }
    let mut optimizer = AdamW::new(&store);
    std::fs::create_dir_all(&run.output_dir).map_err(|e| TrainError::io(&run.output_dir, e))?;
    let steps_per_epoch = train_set.len().div_ceil(run.batch_size) as u64;
    let meta = json!({ "run": run });
    let hash = config_hash(&run.model);
    log.event(
        "start",
        json!({ "clips": train_set.len(), "real": reals, "steps_per_epoch": steps_per_epoch, "parameters": store.num_scalars() }),
    )
    .map_err(|e| TrainError::io(&run.output_dir, e))?;

    let mut steps = Vec::new();
    let mut step = 0u64;
    'epochs: for epoch in 0..run.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(run.seed, &format!("shuffle-{epoch}"))));
        for batch in order.chunks(run.batch_size) {
            if opts.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let inputs = batch
                .par_iter()
                .map(|&i| {
                    let e = &train_set[i];
                    let tag = format!("{epoch}-{}", e.id);
                    let offset = Offset::Seeded(stream_seed(run.seed, &format!("offset-{tag}")));
                    let mode = Mode::Train(stream_seed(run.seed, &format!("flip-{tag}")));
                    model_inputs(run, e, &root, offset, mode).map(|(c, f)| (c, f, e.label.index()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; store.len()];
            let mut loss_sum = 0.0;
            for (i, (clip, flow, label)) in inputs.into_iter().enumerate() {
                let ctx = ForwardCtx::train(&store, run.dropout, stream_seed(run.seed, &format!("dropout-{step}-{i}")));
                let logits = model.forward(&ctx, &Var::constant(clip), flow.map(Var::constant).as_ref())?;
                let loss = cross_entropy(&logits, &[label])?;
                loss_sum += loss.data()[0];
                loss.scale(1.0 / batch.len() as f64).backward()?;
                for (acc, g) in grads.iter_mut().zip(ctx.params.take_grads()) {
                    match (acc.as_mut(), g) {
                        (Some(a), Some(g)) => a.iter_mut().zip(g).for_each(|(a, g)| *a += g),
                        (None, Some(g)) => *acc = Some(g),
                        (_, None) => {}
                    }
                }
            }
            let lr = lr_schedule(step, steps_per_epoch, run.lr);
            optimizer.step(&mut store, &grads, lr)?;
            let record = StepRecord {
                step,
                epoch,
                lr,
                loss: loss_sum / batch.len() as f64,
            };
            log.event("step", serde_json::to_value(&record).expect("record serializes"))
                .map_err(|e| TrainError::io(&run.output_dir, e))?;
            steps.push(record);
            step += 1;
        }
        let path = epoch_checkpoint(&run.output_dir, epoch);
        store.save(&path, &run.model.name(), &hash, step, meta.clone())?;
        log.event("checkpoint", json!({ "epoch": epoch, "step": step, "path": path }))
            .map_err(|e| TrainError::io(&run.output_dir, e))?;
    }
    let final_path = run.output_dir.join(FINAL_CHECKPOINT);
    store.save(&final_path, &run.model.name(), &hash, step, meta)?;
    let checkpoint = final_path;

    let train_accuracy = if opts.skip_train_accuracy {
        f64::NAN
    } else {
        let trained = Trained {
            run: run.clone(),
            model,
            store,
        };
        let correct = train_set
            .par_iter()
            .map(|e| trained.score(e, &root).map(|s| ((s > 0.5) == (e.label == Label::Generated)) as usize))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .sum::<usize>();
        correct as f64 / train_set.len() as f64
    };
    log.event("done", json!({ "steps": step, "train_accuracy": train_accuracy, "checkpoint": checkpoint }))
        .map_err(|e| TrainError::io(&run.output_dir, e))?;
    Ok(TrainOutcome {
        steps,
        checkpoint,
        train_accuracy,
    })
}

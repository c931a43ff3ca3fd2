use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adamw::{adamw_step, clip_global_norm, AdamWState};
use super::TrainConfig;
use crate::dataio::{one_hot, BlendshapeDataset, ClassLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::lossmetrics::{argmax, cce, ConfusionMatrix, Loss, Metrics};
use crate::nn::{backward, forward, save_model, Gradients, Model, Params};
use crate::par;

/// Samples per work unit when computing batch gradients. Fixed so the
/// reduction order does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Metrics,
    /// Optimizer steps taken so far, this epoch included.
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub epoch: usize,
    pub path: Option<PathBuf>,
    pub val: Metrics,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<CheckpointRecord>,
    /// Epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    /// Weights with the lowest validation loss.
    pub best: Model,
    /// Weights after the final epoch.
    pub last: Model,
}

/// One masked training example.
struct Example {
    features: Vec<f64>,
    target: Vec<f64>,
    label: ClassLabel,
}

fn prepare(model: &Model, ds: &BlendshapeDataset) -> Result<Vec<Example>> {
    model.mask.check_names(&ds.blendshape_names).map_err(|e| Error::Config(e.to_string()))?;
    ds.samples
        .iter()
        .map(|s| {
            Ok(Example {
                features: model.features(&s.frame.scores)?,
                target: one_hot(s.label3, NUM_CLASSES)?,
                label: s.label3,
            })
        })
        .collect()
}

/// Summed gradient and summed loss over `batch`, each sample a length-1 sequence.
pub fn batch_gradient(params: &Params, batch: &[(&[f64], &[f64])], loss: &Loss) -> Result<(Gradients, f64)> {
    let partials = par::map_chunks(batch, GRAD_CHUNK, |chunk| -> Result<(Gradients, f64)> {
        let mut acc = params.zeros_like();
        let mut total = 0.0;
        for &(x, y) in chunk {
            let (probs, cache, _) = forward(params, &[x.to_vec()], None)?;
            total += loss.value(y, &probs)?;
            acc.add_assign(&backward(params, &cache, y, loss)?);
        }
        Ok((acc, total))
    });
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for p in partials {
        let (g, l) = p?;
        grads.add_assign(&g);
        total += l;
    }
    Ok((grads, total))
}

fn evaluate_examples(params: &Params, examples: &[Example], loss: &Loss) -> Result<Metrics> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let probs = par::map(examples, |ex| forward(params, std::slice::from_ref(&ex.features), None).map(|r| r.0));
    let mut cm = ConfusionMatrix::default();
    let mut loss_sum = 0.0;
    let mut cce_sum = 0.0;
    for (ex, p) in examples.iter().zip(probs) {
        let p = p?;
        loss_sum += loss.value(&ex.target, &p)?;
        cce_sum += cce(&ex.target, &p)?;
        cm.record(ex.label, ClassLabel::from_code(argmax(&p))?);
    }
    let n = examples.len() as f64;
    Metrics::from_confusion(cm, loss_sum / n, cce_sum / n)
}

/// Metrics with categorical cross-entropy as the loss.
pub fn evaluate(model: &Model, ds: &BlendshapeDataset) -> Result<Metrics> {
    evaluate_with_loss(model, ds, &Loss::Cce)
}

pub fn evaluate_with_loss(model: &Model, ds: &BlendshapeDataset, loss: &Loss) -> Result<Metrics> {
    let examples = prepare(model, ds)?;
    evaluate_examples(&model.params, &examples, loss)
}

fn snapshot(base: &Model, params: &Params, cfg: &TrainConfig) -> Model {
    let mut m = base.clone();
    m.params = params.clone();
    m.metadata.train_config_digest = Some(cfg.digest());
    m.metadata.train_config = serde_json::to_value(cfg).ok();
    m
}

/// Trains `model` with mini-batch AdamW.
///
/// Each epoch shuffles the training set, steps once per batch (the last
/// partial batch included), then evaluates on `val_ds`. A checkpoint is
/// written to `out_dir` when the validation loss improves and at least
/// `checkpoint_min_interval` epochs have passed since the previous one; the
/// first improvement is always written. Training stops after
/// `early_stop_patience` epochs without improvement. With an `out_dir`,
/// `best.model`, `last.model` and `history.csv` are written at the end.
pub fn train(
    model: &Model,
    train_ds: &BlendshapeDataset,
    val_ds: &BlendshapeDataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if val_ds.is_empty() || train_ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if model.params.in_dim() != model.mask.len() {
        return Err(Error::Config("model input width does not match its mask".into()));
    }
    let train_ex = prepare(model, train_ds)?;
    let val_ex = prepare(model, val_ds)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let loss = cfg.loss_fn();
    let mut params = model.params.clone();
    let mut state = AdamWState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();

    let mut history = TrainHistory::default();
    let mut best_loss = f64::INFINITY;
    let mut best_params = params.clone();
    let mut last_ckpt: Option<usize> = None;
    let mut since_improvement = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], &[f64])> = idx
                .iter()
                .map(|&i| (train_ex[i].features.as_slice(), train_ex[i].target.as_slice()))
                .collect();
            let (mut grads, batch_loss) = batch_gradient(&params, &batch, &loss)?;
            loss_sum += batch_loss;
            grads.scale(1.0 / batch.len() as f64);
            clip_global_norm(&mut grads, cfg.global_clipnorm);
            adamw_step(&mut params, &grads, &mut state, cfg)?;
        }
        let train_loss = loss_sum / train_ex.len() as f64;
        let val = evaluate_examples(&params, &val_ex, &loss)?;

        if val.loss < best_loss {
            best_loss = val.loss;
            best_params = params.clone();
            history.best_epoch = epoch;
            since_improvement = 0;
            let due = last_ckpt.is_none_or(|e| epoch - e >= cfg.checkpoint_min_interval);
            if due {
                let path = match out_dir {
                    Some(dir) => {
                        let p = dir.join(format!("ckpt_epoch{epoch}.model"));
                        save_model(&snapshot(model, &params, cfg), &p)?;
                        Some(p)
                    }
                    None => None,
                };
                history.checkpoints.push(CheckpointRecord {
                    epoch,
                    path,
                    val: val.clone(),
                });
                last_ckpt = Some(epoch);
            }
        } else {
            since_improvement += 1;
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val,
            steps: state.t,
        });

        if since_improvement >= cfg.early_stop_patience {
            history.stopped_early = true;
            break;
        }
    }

    let best = snapshot(model, &best_params, cfg);
    let last = snapshot(model, &params, cfg);
    if let Some(dir) = out_dir {
        save_model(&best, dir.join("best.model"))?;
        save_model(&last, dir.join("last.model"))?;
        write_history_csv(&history, dir.join("history.csv"))?;
    }
    Ok(TrainOutcome { history, best, last })
}

/// Writes `epoch,train_loss,val_loss,val_acc,val_f1`, one row per epoch.
pub fn write_history_csv(history: &TrainHistory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let io = |e| Error::io(path, e);
    writeln!(out, "epoch,train_loss,val_loss,val_acc,val_f1").map_err(io)?;
    for r in &history.epochs {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.val.loss, r.val.accuracy, r.val.macro_f1
        )
        .map_err(io)?;
    }
    std::fs::write(path, out).map_err(io)
}

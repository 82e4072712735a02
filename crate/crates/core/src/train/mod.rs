//! The training loop, evaluation and reference predictors.

pub mod checkpoint;
pub mod config;
pub mod curve;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::dataset::{batch_tensors, ImageSet, RawImage, LABEL_LEN, NUM_CLASSES, PATCH_OFFSET, PATCH_SIDE};
use crate::error::{Error, Result};
use crate::loss::per_example_mse;
use crate::model::{builtin_with_head, ModelSpec, ParamSet};
use crate::optim::{AdamState, Minibatches};
use crate::tensor::{Shape, Tensor};

pub use checkpoint::Checkpoint;
pub use config::{ConfigFile, TrainConfig};
pub use curve::{EpochRecord, LossCurve};

/// Inference batch size. Fixed so that a stored dev loss is reproduced
/// exactly by a later evaluation.
pub const EVAL_BATCH: usize = 256;

pub const CURVE_FILE: &str = "loss_curve.csv";
pub const BEST_FILE: &str = "best.ckpt";
pub const FINAL_FILE: &str = "final.ckpt";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassLoss {
    pub class: u8,
    pub count: usize,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub count: usize,
    pub mse: f64,
    pub per_class: Vec<ClassLoss>,
}

fn summarize(set: &ImageSet, losses: &[f64]) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty split".into()));
    }
    let mut sums = [0.0; NUM_CLASSES];
    let mut counts = [0usize; NUM_CLASSES];
    for (img, &l) in set.images.iter().zip(losses) {
        sums[img.class() as usize] += l;
        counts[img.class() as usize] += 1;
    }
    let per_class = (0..NUM_CLASSES)
        .filter(|&c| counts[c] > 0)
        .map(|c| ClassLoss {
            class: c as u8,
            count: counts[c],
            mse: sums[c] / counts[c] as f64,
        })
        .collect();
    Ok(Evaluation {
        count: losses.len(),
        mse: losses.iter().sum::<f64>() / losses.len() as f64,
        per_class,
    })
}

/// Per-example MSE of the model over `set`, in set order.
pub fn per_example_losses(spec: &ModelSpec, params: &ParamSet, set: &ImageSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len());
    for chunk in set.images.chunks(EVAL_BATCH) {
        let (x, y) = batch_tensors(chunk.iter())?;
        let pred = spec.forward_batch(params, &x)?;
        out.extend(per_example_mse(&y, &pred)?);
    }
    Ok(out)
}

/// Mean per-example MSE over `set` plus a per-class breakdown.
pub fn evaluate(spec: &ModelSpec, params: &ParamSet, set: &ImageSet) -> Result<Evaluation> {
    summarize(set, &per_example_losses(spec, params, set)?)
}

/// Center-patch labels of a set as unit values, one 192-row per image.
fn label_rows(images: &[RawImage]) -> impl Iterator<Item = [f64; LABEL_LEN]> + '_ {
    images.iter().map(|img| {
        let mut row = [0.0; LABEL_LEN];
        let bytes = img.bytes();
        for r in 0..PATCH_SIDE {
            let src = ((PATCH_OFFSET + r) * crate::dataset::SIDE + PATCH_OFFSET) * crate::dataset::CHANNELS;
            let n = PATCH_SIDE * crate::dataset::CHANNELS;
            for (k, &b) in bytes[src..src + n].iter().enumerate() {
                row[r * n + k] = crate::dataset::to_unit(b);
            }
        }
        row
    })
}

/// Mean over `set` of the per-example MSE of always predicting `patch`.
pub fn constant_predictor(set: &ImageSet, patch: &Tensor) -> Result<Evaluation> {
    if patch.len() != LABEL_LEN {
        return Err(Error::Shape(format!("predictor must have {LABEL_LEN} values, got {}", patch.len())));
    }
    let p = patch.data();
    let losses: Vec<f64> = label_rows(&set.images)
        .map(|y| y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / LABEL_LEN as f64)
        .collect();
    summarize(set, &losses)
}

/// Element-wise mean of all center patches in `set`.
pub fn mean_patch(set: &ImageSet) -> Result<Tensor> {
    if set.is_empty() {
        return Err(Error::Contract("mean patch of an empty set".into()));
    }
    let mut acc = vec![0.0; LABEL_LEN];
    for row in label_rows(&set.images) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = set.len() as f64;
    Tensor::from_vec(&Shape::new(&[LABEL_LEN])?, acc.into_iter().map(|a| a / n).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineScores {
    pub constant_half: f64,
    pub train_mean: f64,
}

/// Scores of the constant-0.5 and train-mean-patch predictors on `set`.
pub fn baselines(train: &ImageSet, set: &ImageSet) -> Result<BaselineScores> {
    let half = Tensor::full(&Shape::new(&[LABEL_LEN])?, 0.5);
    Ok(BaselineScores {
        constant_half: constant_predictor(set, &half)?.mse,
        train_mean: constant_predictor(set, &mean_patch(train)?)?.mse,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub curve: LossCurve,
    pub best: Checkpoint,
    pub last: Checkpoint,
}

fn train_step(
    spec: &ModelSpec,
    params: &mut ParamSet,
    adam: &mut AdamState,
    x: Tensor,
    y: Tensor,
    lr: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let x = tape.constant(x);
    let y = tape.constant(y);
    let pred = spec.forward_tape(&mut tape, &vars, x)?;
    let loss = tape.mse(pred, y)?;
    let value = tape.value(loss).data()[0];
    // the caller reports divergence with its position in the run
    if !value.is_finite() {
        return Ok(value);
    }
    let mut grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.take(v).ok_or_else(|| Error::State("missing parameter gradient".into())))
        .collect::<Result<_>>()?;
    adam.step(&mut params.tensors, &grads, lr)?;
    Ok(value)
}

/// Trains `config.model` on `train` (or its first `subset` images),
/// evaluating on `dev`. Writes the loss curve, best and final checkpoints
/// and the effective config into `config.out`.
pub fn train(config: &TrainConfig, train: &ImageSet, dev: &ImageSet) -> Result<TrainOutcome> {
    config.validate()?;
    let train = match config.subset {
        Some(k) if k > train.len() => {
            return Err(Error::Contract(format!("subset {k} exceeds {} training images", train.len())))
        }
        Some(k) => train.truncated(k),
        None => train.clone(),
    };
    if dev.is_empty() {
        return Err(Error::Contract("dev split is empty".into()));
    }
    let spec = builtin_with_head(config.model, config.head);
    let audit = spec.audit_shapes();
    if !audit.passed {
        return Err(Error::Shape(format!("{} fails its shape audit", spec.name)));
    }

    std::fs::create_dir_all(&config.out)?;
    std::fs::write(config.out.join(CONFIG_FILE), config.to_toml())?;

    let mut params = spec.init_params(config.seed)?;
    let mut adam = AdamState::new(&params.tensors);
    let batches = Minibatches::new(train.len(), config.batch, config.seed)?;
    let mut curve = LossCurve::default();
    let mut best: Option<Checkpoint> = None;
    let snapshot = |params: &ParamSet, adam: &AdamState, epoch: usize, dev_loss: f64| Checkpoint {
        model: config.model,
        head: config.head,
        seed: config.seed,
        split_seed: config.split_seed,
        epoch,
        dev_loss,
        params: params.clone(),
        adam: adam.clone(),
    };

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let lr = config.schedule.rate(epoch - 1);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (b, idx) in batches.epoch(epoch as u64 - 1).iter().enumerate() {
            let (x, y) = batch_tensors(idx.iter().map(|&i| &train.images[i]))?;
            let loss = train_step(&spec, &mut params, &mut adam, x, y, lr)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b + 1,
                    lr,
                    loss,
                });
            }
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
        }
        let train_mse = loss_sum / seen as f64;

        let dev_mse = if epoch % config.eval_every == 0 || epoch == config.epochs {
            Some(evaluate(&spec, &params, dev)?.mse)
        } else {
            None
        };
        let elapsed = started.elapsed().as_secs_f64();
        curve.push(EpochRecord {
            epoch,
            train_mse,
            dev_mse,
            lr,
            seconds: if config.record_time { elapsed } else { 0.0 },
        })?;
        eprintln!(
            "epoch {epoch}/{} train {train_mse:.6} dev {} lr {lr:e} ({elapsed:.1}s)",
            config.epochs,
            dev_mse.map_or("-".to_string(), |d| format!("{d:.6}"))
        );

        if let Some(d) = dev_mse {
            if best.as_ref().is_none_or(|b| d < b.dev_loss) {
                let ckpt = snapshot(&params, &adam, epoch, d);
                ckpt.save(&config.out.join(BEST_FILE))?;
                best = Some(ckpt);
            }
        }
        curve.write(&config.out.join(CURVE_FILE))?;
    }

    let final_dev = curve.records.last().and_then(|r| r.dev_mse).expect("final epoch has a dev pass");
    let last = snapshot(&params, &adam, config.epochs, final_dev);
    last.save(&config.out.join(FINAL_FILE))?;
    Ok(TrainOutcome {
        curve,
        best: best.expect("at least one dev pass"),
        last,
    })
}

/// Loads a checkpoint and rebuilds its model.
pub fn load_model(path: &Path) -> Result<(Checkpoint, ModelSpec)> {
    let ckpt = Checkpoint::load(path)?;
    let spec = ckpt.spec();
    Ok((ckpt, spec))
}

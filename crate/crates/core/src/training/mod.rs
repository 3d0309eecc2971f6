//! Losses, the optimizer and learning-rate schedule, the training loop and
//! checkpoints.

mod checkpoint;
mod losses;
mod objective;
mod optim;

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DialogueModel, Dropout, EncodedPair};
use crate::rng::{derive_seed, derive_seed_index, seeded};

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint, ProgressMeta, TrainState};
pub use losses::{
    bow_loss, bow_loss_t, gaussian_kl, gaussian_kl_t, gmm_kl_estimate, kl_anneal_weight, nll_t, noise_tensor, prior_kl,
    prior_kl_t, token_kd_loss, token_kd_t,
};
pub use objective::{
    combine, dense_targets, distillation_instances, loss_terms, multi_ref_loss, multi_ref_loss_t, nll_loss,
    per_token_nll, replicate_references, LatentNoise, LossBreakdown, LossTerms, SparseDist, TrainInstance,
};
pub use optim::{Adam, PlateauScheduler, TrainSchedule};

/// One line of the training log, written after every validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub recon: f64,
    pub kl: f64,
    pub bow: f64,
    pub anneal: f64,
    pub total: f64,
    /// Per-token validation negative log-likelihood.
    pub val_total: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Appends one JSON line per validation.
    pub log_path: Option<PathBuf>,
    /// Receives `last.safetensors` every epoch and `best.safetensors` on
    /// every improvement.
    pub checkpoint_dir: Option<PathBuf>,
    pub vocab_hash: String,
    pub resume: Option<TrainState>,
}

pub struct FitOutcome {
    pub log: Vec<LogRecord>,
    pub state: TrainState,
    pub best_val: f64,
}

fn batch_loss(
    model: &DialogueModel,
    instances: &[&TrainInstance],
    schedule: &TrainSchedule,
    anneal: f64,
    seed: u64,
) -> Result<(Tensor, LossBreakdown)> {
    let pairs: Vec<&EncodedPair> = instances.iter().map(|i| &i.pair).collect();
    let batch = model.batch(&pairs)?;
    let soft = if instances[0].soft_targets.is_some() {
        let like = Tensor::zeros(1, model.dtype(), model.device())?;
        Some(dense_targets(instances, batch.response.width(), model.config().vocab_size, &like)?)
    } else {
        None
    };
    let mut noise_rng = seeded(derive_seed(seed, "noise"));
    let noise = if model.is_variational() {
        Some(LatentNoise::draw(model, instances.len(), schedule.gmm_kl_samples, &mut noise_rng)?)
    } else {
        None
    };
    let mut dropout_rng = seeded(derive_seed(seed, "dropout"));
    let mut dropout = Dropout::train(model.config().dropout, &mut dropout_rng);
    let terms = loss_terms(model, &batch, soft.as_ref(), noise.as_ref(), &mut dropout)?;
    combine(&terms, anneal, schedule.bow_weight)
}

fn append_log(path: &PathBuf, record: &LogRecord) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(record)?)?;
    Ok(())
}

/// Trains `model` in place: seeded per-epoch shuffling, one validation per
/// epoch, learning-rate decay on plateaus and early stopping. The best
/// parameters by validation loss are restored at the end.
pub fn fit(
    model: &DialogueModel,
    train: &[TrainInstance],
    valid: &[EncodedPair],
    schedule: &TrainSchedule,
    seed: u64,
    options: FitOptions,
) -> Result<FitOutcome> {
    schedule.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if valid.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let soft = train[0].soft_targets.is_some();
    if train.iter().any(|i| i.soft_targets.is_some() != soft) {
        return Err(Error::invalid("cannot mix distillation and plain instances"));
    }
    let vocab = model.config().vocab_size as u32;
    let out_of_range =
        |p: &EncodedPair| p.response.iter().chain(p.context.iter().flat_map(|u| &u.ids)).any(|&t| t >= vocab);
    if train.iter().any(|i| out_of_range(&i.pair)) || valid.iter().any(out_of_range) {
        return Err(Error::VocabMismatch("data contains ids outside the model vocabulary".into()));
    }

    let mut state = options.resume.unwrap_or_else(|| TrainState::new(schedule));
    let mut best: Option<BTreeMap<String, Tensor>> = None;
    if let Some(dir) = &options.checkpoint_dir {
        let path = dir.join("best.safetensors");
        if state.best_val.is_some() && path.exists() {
            best = Some(load_checkpoint(&path)?.model.params().snapshot()?);
        }
    }
    let max_epochs = schedule.max_epochs.unwrap_or(usize::MAX);
    let max_steps = schedule.max_steps.unwrap_or(u64::MAX);
    let bs = schedule.batch_size;
    let mut log = Vec::new();

    while !state.stopped && state.epoch < max_epochs && state.step < max_steps {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seeded(derive_seed_index(derive_seed(seed, "shuffle"), state.epoch as u64)));
        let mut sums = LossBreakdown::default();
        let mut seen = 0usize;
        for chunk in order.chunks(bs) {
            if state.step >= max_steps {
                break;
            }
            let instances: Vec<&TrainInstance> = chunk.iter().map(|&i| &train[i]).collect();
            let anneal = kl_anneal_weight(state.step, schedule.kl_anneal_steps);
            let step_seed = derive_seed_index(derive_seed(seed, "step"), state.step);
            let (loss, parts) = batch_loss(model, &instances, schedule, anneal, step_seed)?;
            let grads = loss.backward()?;
            state.adam.step(model.params(), &grads, state.scheduler.lr)?;
            state.step += 1;
            let n = instances.len() as f64;
            sums.recon += parts.recon * n;
            sums.kl += parts.kl * n;
            sums.bow += parts.bow * n;
            sums.total += parts.total * n;
            sums.anneal = parts.anneal;
            seen += instances.len();
        }
        state.epoch += 1;

        let val = per_token_nll(model, valid, bs)?;
        let lr_used = state.scheduler.lr;
        if state.best_val.is_none_or(|b| val < b) {
            state.best_val = Some(val);
            best = Some(model.params().snapshot()?);
            if let Some(dir) = &options.checkpoint_dir {
                save_checkpoint(&dir.join("best.safetensors"), model, &options.vocab_hash, None)?;
            }
        }
        let (_, stop) = state.scheduler.update(val);
        state.stopped = stop;
        let n = seen.max(1) as f64;
        let record = LogRecord {
            step: state.step,
            epoch: state.epoch,
            lr: lr_used,
            recon: sums.recon / n,
            kl: sums.kl / n,
            bow: sums.bow / n,
            anneal: sums.anneal,
            total: sums.total / n,
            val_total: val,
        };
        log::info!(
            "epoch {} step {} lr {:.2e} train {:.4} valid {:.4}",
            record.epoch,
            record.step,
            record.lr,
            record.total,
            record.val_total
        );
        if let Some(path) = &options.log_path {
            append_log(path, &record)?;
        }
        log.push(record);
        if let Some(dir) = &options.checkpoint_dir {
            save_checkpoint(&dir.join("last.safetensors"), model, &options.vocab_hash, Some(&state))?;
        }
    }

    if let Some(snapshot) = &best {
        model.params().restore(snapshot)?;
    }
    let best_val = match state.best_val {
        Some(v) => v,
        None => per_token_nll(model, valid, bs)?,
    };
    Ok(FitOutcome { log, state, best_val })
}

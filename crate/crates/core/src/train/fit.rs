use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;

use super::{batch_all_loss, mine, AdamW, TrainConfig};
use crate::error::{Error, Result};
use crate::net::{NetConfig, NetworkParams};
use crate::signal_io::{HapticSignal, Trial};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's mini-batches of the Batch-All loss.
    pub mean_loss: f64,
    /// Active triplets summed over the epoch.
    pub active_triplets: usize,
    pub lr: f64,
    pub wd: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: NetworkParams,
    pub log: Vec<EpochLog>,
}

fn collect_samples(trials: &[Trial]) -> Result<(Vec<HapticSignal>, Vec<Vector3<f64>>)> {
    let mut signals = Vec::new();
    let mut positions = Vec::new();
    for trial in trials {
        for ev in &trial.events {
            let pos = ev.foothold_world_truth.ok_or_else(|| Error::InvalidStep {
                step_id: ev.step_id,
                msg: format!("trial {}: training needs foothold_world_truth", trial.trial_id),
            })?;
            signals.push(ev.signal.clone());
            positions.push(pos);
        }
    }
    Ok((signals, positions))
}

/// Trains a freshly initialized network on every step of `trials`.
///
/// Each epoch shuffles the samples and walks them in mini-batches of
/// `batch_size`; a trailing partial batch is dropped. Epochs without any
/// active triplet are logged like any other. `progress` is called after
/// every epoch. The result depends only on the data and the two seeds.
pub fn fit(
    trials: &[Trial],
    net: &NetConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLog),
) -> Result<FitResult> {
    cfg.validate()?;
    let (signals, positions) = collect_samples(trials)?;
    if signals.len() < cfg.batch_size {
        return Err(Error::DatasetTooSmall {
            have: signals.len(),
            batch_size: cfg.batch_size,
        });
    }
    let mut params = NetworkParams::init(net)?;
    let mut opt = AdamW::new(net);
    let mut rng = crate::seed::rng(cfg.seed, "train.batches");
    let mut order: Vec<usize> = (0..signals.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let wd = cfg.weight_decay_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut active = 0usize;
        for idx in order.chunks_exact(cfg.batch_size) {
            let batch: Vec<HapticSignal> = idx.iter().map(|&i| signals[i].clone()).collect();
            let pos: Vec<Vector3<f64>> = idx.iter().map(|&i| positions[i]).collect();
            let mined = mine(&pos, cfg.d_thr);
            let (emb, cache) = params.forward_train(&batch)?;
            let tl = batch_all_loss(&emb, &mined, cfg.margin);
            loss_sum += tl.loss;
            active += tl.active;
            batches += 1;
            if tl.active == 0 {
                continue;
            }
            let grads = params.backward(&cache, &tl.grad)?;
            opt.step(&mut params.weights, &grads, lr, wd)?;
        }
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / batches as f64,
            active_triplets: active,
            lr,
            wd,
        };
        progress(&entry);
        log.push(entry);
    }
    Ok(FitResult { params, log })
}

/// Writes the loss log as CSV: `epoch,mean_loss,active_triplets,lr,wd`.
pub fn write_loss_log(log: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,mean_loss,active_triplets,lr,wd\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.mean_loss, e.active_triplets, e.lr, e.wd
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

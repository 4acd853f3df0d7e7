//! The Siamese training loop with per-epoch validation and early stopping.

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::lars::{Lars, LarsConfig};
use super::miner::mine_triplets;
use super::sampler::{group_by_subject, sample_groups};
use super::schedule::lr_schedule;
use crate::data::Slice;
use crate::error::{Error, Result};
use crate::eval::{evaluate, DEFAULT_K};
use crate::nn::{batch_tensor, encoder_forward, projector_forward, BnUpdate, Graph, Mode, ParamStore, BN_MOMENTUM};
use crate::seed::{self, stream};
use crate::transforms::{apply_transform, sample_transform, LoadedScan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub beta: f64,
    pub l_bt: f64,
    pub l_c: f64,
    /// Combined objective actually minimized.
    pub l_bp: f64,
    pub lr_w: f64,
    pub lr_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub val_map_at_3: f64,
    pub val_recall_at_3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogRecord {
    Step(StepLog),
    Epoch(EpochLog),
}

/// Preprocessed train and validation scans.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<LoadedScan>,
    pub val: Vec<LoadedScan>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation mAP@3.
    pub params: ParamStore,
    pub best_epoch: usize,
    pub best_val_map: f64,
    pub epochs_run: usize,
    pub log: Vec<LogRecord>,
}

/// Draws the two distorted views of every batch item.
pub fn distorted_views(cfg_seed: u64, epoch: usize, step: usize, slices: &[&Slice]) -> [Vec<Slice>; 2] {
    [1u64, 2].map(|branch| {
        slices
            .iter()
            .enumerate()
            .map(|(item, s)| {
                let mut rng = seed::rng(&[
                    cfg_seed,
                    stream::TRANSFORM,
                    epoch as u64,
                    step as u64,
                    item as u64,
                    branch,
                ]);
                apply_transform(&sample_transform(&mut rng), s)
            })
            .collect()
    })
}

fn apply_bn_updates(params: &mut ParamStore, updates: &[BnUpdate]) -> Result<()> {
    let m = BN_MOMENTUM;
    for u in updates {
        for (suffix, stat) in [("running_mean", &u.batch_mean), ("running_var", &u.batch_var)] {
            let name = format!("{}.{suffix}", u.prefix);
            let entry = params
                .get_mut(&name)
                .ok_or_else(|| Error::NotFound(format!("parameter {name}")))?;
            if entry.frozen {
                continue;
            }
            for (r, &s) in entry.value.data_mut().iter_mut().zip(stat.iter()) {
                *r = (1.0 - m) * *r + m * s;
            }
        }
    }
    Ok(())
}

struct StepResult {
    l_bt: f64,
    l_c: f64,
    l_bp: f64,
}

fn train_step(
    cfg: &TrainConfig,
    params: &mut ParamStore,
    lars: &mut Lars,
    views: &[Vec<Slice>; 2],
    labels: &[usize],
    (epoch, step): (usize, usize),
    beta: f64,
    (lr_w, lr_b): (f64, f64),
) -> Result<StepResult> {
    let (grads, updates, result) = {
        let mut g = Graph::new(params, Mode::Train);
        let mut emb = Vec::with_capacity(2);
        for view in views {
            let x = g.input(batch_tensor(view)?);
            let r = encoder_forward(&mut g, x)?.repr;
            emb.push(projector_forward(&mut g, r)?);
        }
        let l_bt = g.barlow_twins(emb[0], emb[1], cfg.lambda)?;
        let triplets = mine_triplets(g.value(emb[0]), labels)?;
        let l_c = g.info_nce(emb[0], triplets, cfg.temperature)?;
        let loss = g.weighted_sum(l_bt, l_c, beta, 1.0 - beta)?;
        let result = StepResult {
            l_bt: g.scalar(l_bt),
            l_c: g.scalar(l_c),
            l_bp: g.scalar(loss),
        };
        if !(result.l_bt.is_finite() && result.l_c.is_finite() && result.l_bp.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                step,
                l_bt: result.l_bt,
                l_c: result.l_c,
            });
        }
        let grads = g.backward(loss)?;
        (grads, g.take_bn_updates(), result)
    };
    apply_bn_updates(params, &updates)?;
    lars.step(params, &grads, lr_w, lr_b)?;
    Ok(result)
}

pub fn train(cfg: &TrainConfig, params: ParamStore, data: &TrainData) -> Result<TrainOutcome> {
    train_observed(cfg, params, data, |_| {})
}

/// [`train`] that reports each log record as soon as it is produced.
pub fn train_observed(
    cfg: &TrainConfig,
    mut params: ParamStore,
    data: &TrainData,
    mut observe: impl FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::invalid("training needs non-empty train and val splits"));
    }
    let groups = group_by_subject(data.train.iter().map(|s| s.record.subject_id.as_str()));
    let mut subject_of = vec![0usize; data.train.len()];
    for (gi, g) in groups.iter().enumerate() {
        for &i in g {
            subject_of[i] = gi;
        }
    }
    let steps = cfg.steps_for(data.train.len());
    let mut lars = Lars::new(LarsConfig {
        trust_coeff: cfg.trust_coeff,
        weight_decay: cfg.weight_decay,
        momentum: cfg.momentum,
    });
    let mut log = Vec::new();
    let mut record = |r: LogRecord, log: &mut Vec<LogRecord>| {
        observe(&r);
        log.push(r);
    };
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        let beta = cfg.effective_beta(epoch)?;
        let lrs = lr_schedule(epoch, cfg)?;
        for step in 0..steps {
            let mut rng = seed::rng(&[cfg.seed, stream::BATCH, epoch as u64, step as u64]);
            let idx = sample_groups(&groups, &mut rng, cfg.batch_size, cfg.samples_per_subject)?;
            let slices: Vec<&Slice> = idx.iter().map(|&i| &data.train[i].slice).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| subject_of[i]).collect();
            let views = distorted_views(cfg.seed, epoch, step, &slices);
            let r = train_step(cfg, &mut params, &mut lars, &views, &labels, (epoch, step), beta, lrs)?;
            record(
                LogRecord::Step(StepLog {
                    epoch,
                    step,
                    beta,
                    l_bt: r.l_bt,
                    l_c: r.l_c,
                    l_bp: r.l_bp,
                    lr_w: lrs.0,
                    lr_b: lrs.1,
                }),
                &mut log,
            );
        }
        epochs_run = epoch + 1;
        let report = evaluate(&params, &data.val, DEFAULT_K, false)?;
        record(
            LogRecord::Epoch(EpochLog {
                epoch,
                val_map_at_3: report.map_at_k,
                val_recall_at_3: report.recall_at_k,
            }),
            &mut log,
        );
        match &best {
            Some((_, score, _)) if report.map_at_k <= *score => {}
            _ => best = Some((epoch, report.map_at_k, params.clone())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if epoch - best_epoch >= cfg.early_stop_patience {
            break;
        }
    }
    let (best_epoch, best_val_map, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        best_epoch,
        best_val_map,
        epochs_run,
        log,
    })
}

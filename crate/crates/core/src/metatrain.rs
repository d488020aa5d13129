//! Training orchestration: pooled pretraining, Reptile meta-training,
//! fine-tuning on a target task, and single-pair inference.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::data::{PairSample, Task};
use crate::error::{Error, Result};
use crate::grid::{DisplacementField, ImageGrid};
use crate::kernels::warp_bilinear;
use crate::loss::{total_loss, LossConfig};
use crate::model::RegistrationNet;
use crate::optim::{reptile_outer, reptile_outer_adam, AdamState};
use crate::params::ParamVector;
use crate::rng::stream;
use crate::scalar::Real;

const PRETRAIN_STREAM: u64 = 0x5052_4554;
const META_STREAM: u64 = 0x4D45_5441;
const FINETUNE_STREAM: u64 = 0x4654_554E;

/// How the inner loop of a meta-iteration picks pairs from its task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InnerPairs {
    /// A new pair for every inner update.
    #[default]
    FreshPerUpdate,
    /// One pair per task, reused for all inner updates.
    ReusePerTask,
}

impl InnerPairs {
    pub fn name(self) -> &'static str {
        match self {
            InnerPairs::FreshPerUpdate => "fresh",
            InnerPairs::ReusePerTask => "reuse",
        }
    }
}

impl fmt::Display for InnerPairs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InnerPairs {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fresh" => Ok(InnerPairs::FreshPerUpdate),
            "reuse" => Ok(InnerPairs::ReusePerTask),
            other => Err(Error::config(format!("inner pair mode must be fresh or reuse, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Adam step size for pretraining, inner updates and fine-tuning.
    pub inner_lr: f64,
    /// Interpolation factor of the outer update, or the outer Adam step size
    /// when `outer_adam` is set.
    pub meta_alpha: f64,
    /// Tasks per meta-iteration.
    pub meta_batch: usize,
    /// Inner Adam updates per task.
    pub inner_steps: usize,
    pub iterations: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub outer_adam: bool,
    pub inner_pairs: InnerPairs,
    pub pretrain_steps: usize,
    /// Stop pretraining once the 100-step running mean improves by less than 0.1%.
    pub early_stop: bool,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            inner_lr: 1e-4,
            meta_alpha: 1e-4,
            meta_batch: 3,
            inner_steps: 10,
            iterations: 1000,
            seed: 0,
            loss: LossConfig::default(),
            outer_adam: false,
            inner_pairs: InnerPairs::default(),
            pretrain_steps: 2000,
            early_stop: false,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.meta_batch == 0 || self.inner_steps == 0 {
            return Err(Error::config("meta_batch and inner_steps must be at least 1"));
        }
        if !(self.inner_lr >= 0.0 && self.inner_lr.is_finite()) {
            return Err(Error::config(format!("inner_lr must be finite and >= 0, got {}", self.inner_lr)));
        }
        if !(self.meta_alpha >= 0.0 && self.meta_alpha.is_finite()) {
            return Err(Error::config(format!("meta_alpha must be finite and >= 0, got {}", self.meta_alpha)));
        }
        if self.workers == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Meta,
    Finetune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Meta => "meta",
            Phase::Finetune => "finetune",
        }
    }
}

/// One `step,phase,task_id,loss` log line.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub phase: Phase,
    pub task_id: String,
    pub loss: f64,
}

pub fn write_log<W: Write>(out: W, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "phase", "task_id", "loss"])?;
    for r in rows {
        w.write_record([r.step.to_string(), r.phase.name().into(), r.task_id.clone(), format!("{}", r.loss)])?;
    }
    w.flush().map_err(|e| Error::io("<log>", e))
}

#[derive(Clone, Debug)]
pub struct Trained<T> {
    pub params: ParamVector<T>,
    pub log: Vec<LogRow>,
}

#[derive(Clone, Debug)]
pub struct FineTuned<T> {
    pub params: ParamVector<T>,
    /// Mean training loss of each epoch.
    pub history: Vec<f64>,
    pub log: Vec<LogRow>,
}

/// One forward/loss/backward pass followed by an Adam update. Returns the
/// loss before the update.
pub fn train_step<T: Real>(
    net: &RegistrationNet,
    params: &mut ParamVector<T>,
    adam: &mut AdamState<T>,
    pair: &PairSample<T>,
    loss: &LossConfig,
) -> Result<f64> {
    let (phi, cache) = net.forward(params, &pair.moving, &pair.fixed)?;
    let eval = total_loss(&pair.fixed, &pair.moving, &phi, loss)?;
    let grad = net.backward(&cache, &eval.grad_phi)?;
    adam.step(params, &grad)?;
    Ok(eval.value.to_f64_lossy())
}

/// Eq. loss of `params` on `pair` without updating anything.
pub fn pair_loss<T: Real>(
    net: &RegistrationNet,
    params: &ParamVector<T>,
    pair: &PairSample<T>,
    loss: &LossConfig,
) -> Result<f64> {
    let phi = net.predict(params, &pair.moving, &pair.fixed)?;
    Ok(total_loss(&pair.fixed, &pair.moving, &phi, loss)?.value.to_f64_lossy())
}

fn ensure_tasks<T: Real>(tasks: &[Task<T>]) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::config("at least one source task is required"));
    }
    if let Some(t) = tasks.iter().find(|t| t.is_empty()) {
        return Err(Error::config(format!("task {} has no pairs", t.id)));
    }
    Ok(())
}

fn running_mean(rows: &[LogRow]) -> f64 {
    rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64
}

/// `steps` Adam updates on pairs drawn from the pooled source tasks: a task
/// uniformly, then a pair uniformly from it.
pub fn pretrain<T: Real>(
    net: &RegistrationNet,
    tasks: &[Task<T>],
    cfg: &TrainConfig,
    theta0: &ParamVector<T>,
    steps: usize,
) -> Result<Trained<T>> {
    cfg.validate()?;
    ensure_tasks(tasks)?;
    let mut rng = stream(cfg.seed, &[PRETRAIN_STREAM]);
    let mut params = theta0.clone();
    let mut adam = AdamState::new(&params, cfg.inner_lr);
    let mut log = Vec::with_capacity(steps);
    const WINDOW: usize = 100;
    for step in 0..steps {
        let task = &tasks[rng.random_range(0..tasks.len())];
        let pair = task.sample(&mut rng)?;
        let loss = train_step(net, &mut params, &mut adam, pair, &cfg.loss)?;
        log.push(LogRow { step, phase: Phase::Pretrain, task_id: task.id.clone(), loss });
        let done = log.len();
        if cfg.early_stop && done >= 2 * WINDOW && done % WINDOW == 0 {
            let prev = running_mean(&log[done - 2 * WINDOW..done - WINDOW]);
            let last = running_mean(&log[done - WINDOW..]);
            if prev - last < 1e-3 * prev.abs() {
                break;
            }
        }
    }
    Ok(Trained { params, log })
}

/// `k` inner Adam updates from `start` on one task with a fresh optimizer.
/// Returns the adapted parameters and the mean inner loss.
fn adapt_to_task<T: Real, R: Rng>(
    net: &RegistrationNet,
    start: &ParamVector<T>,
    task: &Task<T>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(ParamVector<T>, f64)> {
    let mut params = start.clone();
    let mut adam = AdamState::new(&params, cfg.inner_lr);
    let reused = match cfg.inner_pairs {
        InnerPairs::ReusePerTask => Some(task.sample(rng)?),
        InnerPairs::FreshPerUpdate => None,
    };
    let mut total = 0.0;
    for _ in 0..cfg.inner_steps {
        let pair = match reused {
            Some(p) => p,
            None => task.sample(rng)?,
        };
        total += train_step(net, &mut params, &mut adam, pair, &cfg.loss)?;
    }
    Ok((params, total / cfg.inner_steps as f64))
}

/// Reptile meta-training from `theta`. Each iteration samples `meta_batch`
/// tasks with replacement, adapts a copy of the meta-parameters to each, and
/// moves the meta-parameters toward the adapted mean.
pub fn meta_train<T: Real>(
    net: &RegistrationNet,
    theta: &ParamVector<T>,
    tasks: &[Task<T>],
    cfg: &TrainConfig,
) -> Result<Trained<T>> {
    cfg.validate()?;
    ensure_tasks(tasks)?;
    let pool = if cfg.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::config(format!("cannot start {} workers: {e}", cfg.workers)))?,
        )
    } else {
        None
    };
    let mut meta = theta.clone();
    let mut outer_adam = AdamState::new(&meta, cfg.meta_alpha);
    let alpha = T::lit(cfg.meta_alpha);
    let mut log = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let mut pick = stream(cfg.seed, &[META_STREAM, iter as u64]);
        let chosen: Vec<usize> = (0..cfg.meta_batch).map(|_| pick.random_range(0..tasks.len())).collect();
        let run_slot = |slot: usize| {
            let mut rng = stream(cfg.seed, &[META_STREAM, iter as u64, slot as u64]);
            adapt_to_task(net, &meta, &tasks[chosen[slot]], cfg, &mut rng)
        };
        let results: Vec<Result<(ParamVector<T>, f64)>> = match &pool {
            Some(pool) => pool.install(|| (0..cfg.meta_batch).into_par_iter().map(run_slot).collect()),
            None => (0..cfg.meta_batch).map(run_slot).collect(),
        };
        let mut adapted = Vec::with_capacity(cfg.meta_batch);
        let mut loss = 0.0;
        for r in results {
            let (p, l) = r?;
            adapted.push(p);
            loss += l;
        }
        if cfg.outer_adam {
            reptile_outer_adam(&mut meta, &adapted, &mut outer_adam)?;
        } else {
            meta = reptile_outer(&meta, &adapted, alpha)?;
        }
        let ids: Vec<&str> = chosen.iter().map(|&i| tasks[i].id.as_str()).collect();
        log.push(LogRow {
            step: iter,
            phase: Phase::Meta,
            task_id: ids.join("+"),
            loss: loss / cfg.meta_batch as f64,
        });
    }
    Ok(Trained { params: meta, log })
}

/// Fine-tunes a copy of `theta` on `task`. Each epoch visits every pair once
/// in a seeded shuffled order with one Adam step per pair; the optimizer
/// state persists across epochs.
pub fn fine_tune<T: Real>(
    net: &RegistrationNet,
    theta: &ParamVector<T>,
    task: &Task<T>,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<FineTuned<T>> {
    fine_tune_with(net, theta, task, epochs, cfg, |_, _| Ok(()))
}

/// [`fine_tune`] with a hook called after every completed epoch (1-based).
pub fn fine_tune_with<T: Real>(
    net: &RegistrationNet,
    theta: &ParamVector<T>,
    task: &Task<T>,
    epochs: usize,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ParamVector<T>) -> Result<()>,
) -> Result<FineTuned<T>> {
    cfg.validate()?;
    if task.is_empty() {
        return Err(Error::config(format!("fine-tune task {} has no pairs", task.id)));
    }
    let mut params = theta.clone();
    let mut adam = AdamState::new(&params, cfg.inner_lr);
    let mut history = Vec::with_capacity(epochs);
    let mut log = Vec::with_capacity(epochs * task.len());
    let mut order: Vec<usize> = (0..task.len()).collect();
    for epoch in 0..epochs {
        let mut rng = stream(cfg.seed, &[FINETUNE_STREAM, epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let loss = train_step(net, &mut params, &mut adam, &task.pairs[i], &cfg.loss)?;
            log.push(LogRow { step: log.len(), phase: Phase::Finetune, task_id: task.id.clone(), loss });
            total += loss;
        }
        history.push(total / task.len() as f64);
        on_epoch(epoch + 1, &params)?;
    }
    Ok(FineTuned { params, history, log })
}

/// Predicts the field for one pair and applies it to the moving image.
pub fn register_pair<T: Real>(
    net: &RegistrationNet,
    theta: &ParamVector<T>,
    moving: &ImageGrid<T>,
    fixed: &ImageGrid<T>,
) -> Result<(DisplacementField<T>, ImageGrid<T>)> {
    let phi = net.predict(theta, moving, fixed)?;
    let warped = warp_bilinear(moving, &phi)?;
    Ok((phi, warped))
}

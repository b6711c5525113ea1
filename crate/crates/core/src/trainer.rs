//! Minibatch SGD over a materialized list of patch pairs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{batch_tensors, PatchPair};
use crate::error::{config_err, Error, Result};
use crate::kv::KvMap;
use crate::model::{Checkpoint, Network};
use crate::ops::mse_loss;
use crate::optim::{sgd_step, OptimizerState, SgdConfig};
use crate::tensor::Tensor4;

pub const DEFAULT_LR0: f64 = 0.1;
pub const DECADE_EPOCHS: f64 = 30.0;
pub const FINETUNE_LR: f64 = 1e-4;

/// `0.1 · 10^(−epoch/30)`.
pub fn lr_schedule(epoch: f64) -> f64 {
    DEFAULT_LR0 * 10f64.powf(-epoch / DECADE_EPOCHS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Continuous geometric decay, one decade per `decay_epochs`.
    Smooth,
    /// Drops by 10 at every multiple of `decay_epochs`.
    Staircase,
    Fixed,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Smooth => "smooth",
            Schedule::Staircase => "staircase",
            Schedule::Fixed => "fixed",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(Schedule::Smooth),
            "staircase" => Ok(Schedule::Staircase),
            "fixed" => Ok(Schedule::Fixed),
            _ => Err(config_err!("unknown schedule {s:?}")),
        }
    }
}

/// How per-pixel squared errors become the minimized objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossReduction {
    /// Mean over every element of the batch.
    Mean,
    /// Half the per-sample sum of squares, averaged over the batch: the
    /// Euclidean loss of the Caffe toolchain.
    SampleSum,
}

impl fmt::Display for LossReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossReduction::Mean => "mean",
            LossReduction::SampleSum => "sample-sum",
        })
    }
}

impl FromStr for LossReduction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(LossReduction::Mean),
            "sample-sum" => Ok(LossReduction::SampleSum),
            _ => Err(config_err!("unknown loss reduction {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub decay_epochs: f64,
    pub schedule: Schedule,
    pub sgd: SgdConfig,
    pub seed: u64,
    pub loss_reduction: LossReduction,
    /// Hand a checkpoint to the sink every this many steps; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 90,
            lr0: DEFAULT_LR0,
            decay_epochs: DECADE_EPOCHS,
            schedule: Schedule::Smooth,
            sgd: SgdConfig::default(),
            seed: 0,
            loss_reduction: LossReduction::SampleSum,
            checkpoint_every: 0,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "batch_size",
    "epochs",
    "lr0",
    "decay_epochs",
    "schedule",
    "momentum",
    "weight_decay",
    "clip_theta",
    "seed",
    "loss_reduction",
    "checkpoint_every",
];

impl TrainConfig {
    /// Fixed learning rate 1e-4, otherwise the defaults.
    pub fn finetune(epochs: usize) -> Self {
        Self {
            epochs,
            lr0: FINETUNE_LR,
            schedule: Schedule::Fixed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be at least 1"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(config_err!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.decay_epochs > 0.0) {
            return Err(config_err!("decay_epochs must be positive"));
        }
        let s = &self.sgd;
        if !(s.momentum >= 0.0 && s.momentum < 1.0) || !(s.weight_decay >= 0.0) || !(s.clip_theta > 0.0) {
            return Err(config_err!("bad optimizer settings {s:?}"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: f64) -> f64 {
        match self.schedule {
            Schedule::Smooth => self.lr0 * 10f64.powf(-epoch / self.decay_epochs),
            Schedule::Staircase => self.lr0 * 10f64.powf(-(epoch / self.decay_epochs).floor()),
            Schedule::Fixed => self.lr0,
        }
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("batch_size", self.batch_size);
        kv.set("epochs", self.epochs);
        kv.set("lr0", self.lr0);
        kv.set("decay_epochs", self.decay_epochs);
        kv.set("schedule", self.schedule);
        kv.set("momentum", self.sgd.momentum);
        kv.set("weight_decay", self.sgd.weight_decay);
        kv.set("clip_theta", self.sgd.clip_theta);
        kv.set("seed", self.seed);
        kv.set("loss_reduction", self.loss_reduction);
        kv.set("checkpoint_every", self.checkpoint_every);
        kv
    }

    /// Defaults overridden by whichever keys `kv` carries.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.check_keys(CONFIG_KEYS)?;
        let mut c = Self::default();
        c.update_from(kv)?;
        Ok(c)
    }

    pub fn update_from(&mut self, kv: &KvMap) -> Result<()> {
        kv.read_into("batch_size", &mut self.batch_size)?;
        kv.read_into("epochs", &mut self.epochs)?;
        kv.read_into("lr0", &mut self.lr0)?;
        kv.read_into("decay_epochs", &mut self.decay_epochs)?;
        kv.read_into("schedule", &mut self.schedule)?;
        kv.read_into("momentum", &mut self.sgd.momentum)?;
        kv.read_into("weight_decay", &mut self.sgd.weight_decay)?;
        kv.read_into("clip_theta", &mut self.sgd.clip_theta)?;
        kv.read_into("seed", &mut self.seed)?;
        kv.read_into("loss_reduction", &mut self.loss_reduction)?;
        kv.read_into("checkpoint_every", &mut self.checkpoint_every)?;
        self.validate()
    }

    pub fn steps_per_epoch(&self, pairs: usize) -> u64 {
        pairs.div_ceil(self.batch_size) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: f64,
    pub lr: f64,
    /// Mean squared error per pixel of the batch.
    pub loss: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,epoch,lr,loss";

pub fn write_loss_csv(records: &[LossRecord], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{LOSS_CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{},{:.6},{:e},{:e}", r.step, r.epoch, r.lr, r.loss)?;
    }
    Ok(())
}

/// Mean of `values` over consecutive windows of `window`, dropping the tail.
pub fn windowed_means(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks_exact(window.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Training state: parameters, momentum buffers and the global step.
#[derive(Debug, Clone)]
pub struct Trainer {
    net: Network<f32>,
    opt: OptimizerState<f32>,
    cfg: TrainConfig,
    step: u64,
    log: Vec<LossRecord>,
}

pub const META_STEP: &str = "train.step";
pub const META_EPOCH: &str = "train.epoch";
pub const META_PAIRS: &str = "train.pairs";

impl Trainer {
    pub fn new(net: Network<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = OptimizerState::new(cfg.sgd, net.params());
        Ok(Self {
            net,
            opt,
            cfg,
            step: 0,
            log: Vec::new(),
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`]. The
    /// optimizer hyperparameters of `cfg` replace the stored ones.
    pub fn resume(ckpt: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let step = match ckpt.meta(META_STEP) {
            Some(s) => s.parse().map_err(|_| Error::Format(format!("bad {META_STEP} {s:?}")))?,
            None => 0,
        };
        let mut opt = match &ckpt.optimizer {
            Some(o) => o.clone(),
            None => OptimizerState::new(cfg.sgd, ckpt.network.params()),
        };
        opt.config = cfg.sgd;
        Ok(Self {
            net: ckpt.network.clone(),
            opt,
            cfg,
            step,
            log: Vec::new(),
        })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn into_network(self) -> Network<f32> {
        self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Changes the number of passes [`Trainer::run`] stops after, e.g. to
    /// evaluate between epochs.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.cfg.epochs = epochs;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn log(&self) -> &[LossRecord] {
        &self.log
    }

    pub fn checkpoint(&self, pairs: usize) -> Checkpoint {
        let spe = self.cfg.steps_per_epoch(pairs).max(1);
        let mut ck = Checkpoint::new(self.net.clone());
        ck.optimizer = Some(self.opt.clone());
        for (k, v) in self.cfg.to_kv().iter() {
            ck.metadata.insert(format!("train.cfg.{k}"), v.to_string());
        }
        ck.with_meta(META_STEP, self.step)
            .with_meta(META_EPOCH, self.step as f64 / spe as f64)
            .with_meta(META_PAIRS, pairs)
    }

    fn epoch_order(&self, epoch: u64, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        order
    }

    /// Trains until `epochs` full passes over `pairs` have been made,
    /// continuing from the current step. `sink` receives a checkpoint every
    /// `checkpoint_every` steps. A non-finite loss or gradient aborts with
    /// [`Error::Numerical`] before the update, so [`Trainer::checkpoint`]
    /// still holds the last good state.
    pub fn run(&mut self, pairs: &[PatchPair], sink: &mut dyn FnMut(&Checkpoint) -> Result<()>) -> Result<()> {
        if pairs.is_empty() {
            return Err(Error::EmptySet("no training pairs".into()));
        }
        let spe = self.cfg.steps_per_epoch(pairs.len());
        let total = spe * self.cfg.epochs as u64;
        let mut order = Vec::new();
        let mut order_epoch = u64::MAX;
        while self.step < total {
            let epoch = self.step / spe;
            if epoch != order_epoch {
                order = self.epoch_order(epoch, pairs.len());
                order_epoch = epoch;
            }
            let b = (self.step % spe) as usize * self.cfg.batch_size;
            let batch: Vec<&PatchPair> = order[b..(b + self.cfg.batch_size).min(pairs.len())]
                .iter()
                .map(|&i| &pairs[i])
                .collect();
            let lr = self.cfg.lr_at(self.step as f64 / spe as f64);
            let loss = self.train_batch(&batch, lr)?;
            self.log.push(LossRecord {
                step: self.step,
                epoch: self.step as f64 / spe as f64,
                lr,
                loss,
            });
            self.step += 1;
            if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 {
                sink(&self.checkpoint(pairs.len()))?;
            }
        }
        Ok(())
    }

    /// One forward/backward/update on `batch`; returns the per-pixel MSE.
    pub fn train_batch(&mut self, batch: &[&PatchPair], lr: f64) -> Result<f64> {
        let (input, residual) = batch_tensors(batch)?;
        let target = if self.net.spec().global_residual {
            add_tensors(&input, &residual)
        } else {
            residual
        };
        let (out, trace) = self.net.forward_train(&input)?;
        let (loss, mut grad) = mse_loss(&out, &target)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss is {loss} at step {}", self.step)));
        }
        if self.cfg.loss_reduction == LossReduction::SampleSum {
            let half_sample = out.dims().sample_len() as f32 / 2.0;
            for g in grad.data_mut() {
                *g *= half_sample;
            }
        }
        let grads = self.net.backward(&trace, &grad)?;
        if grads.params.iter().any(|p| !p.weights.all_finite() || p.bias.iter().any(|b| !b.is_finite())) {
            return Err(Error::Numerical(format!("non-finite gradient at step {}", self.step)));
        }
        sgd_step(self.net.params_mut(), &grads.params, &mut self.opt, lr)?;
        Ok(loss)
    }
}

fn add_tensors(a: &Tensor4<f32>, b: &Tensor4<f32>) -> Tensor4<f32> {
    crate::ops::add(a, b).expect("batch tensors share dims")
}

/// Convenience wrapper: fresh trainer, full run, final checkpoint.
pub fn train(net: Network<f32>, pairs: &[PatchPair], cfg: &TrainConfig) -> Result<(Checkpoint, Vec<LossRecord>)> {
    let mut t = Trainer::new(net, cfg.clone())?;
    t.run(pairs, &mut |_| Ok(()))?;
    Ok((t.checkpoint(pairs.len()), t.log))
}

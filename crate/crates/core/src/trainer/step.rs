use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::augmentation::{AugmentationPolicy, MultiCropSpec};
use crate::ema::{ema_update, momentum_schedule, EmaConfig, MomentumSchedule};
use crate::error::{Error, Result};
use crate::harness::dataset::DatasetId;
use crate::loss::{total_loss, warmup_weight, TemperaturePair, WarmupSchedule};
use crate::memory_queue::MemoryQueue;
use crate::model::{EmbeddingBatch, Mode, ModelPair, ModelSpec, Param};

use super::optim::{Optimizer, OptimizerConfig, OptimizerState};
use super::pipeline::{CropMode, ViewBatch, ViewPlan};
use super::schedule::LrSchedule;

/// Everything that determines the optimization trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetId,
    pub model: ModelSpec,
    pub temps: TemperaturePair,
    /// Admit tau_t == tau_s. Off except for the unsharpened ablation.
    #[serde(default)]
    pub allow_unsharpened_teacher: bool,
    pub queue_capacity: usize,
    /// While the queue holds fewer rows than this, the current teacher
    /// batch is appended to the relation bank.
    pub queue_min_fill: usize,
    pub ema: EmaConfig,
    pub epochs: u64,
    pub batch_size: usize,
    /// Learning rate per 256 images.
    pub base_lr: f64,
    pub optimizer: OptimizerConfig,
    pub lr_warmup_epochs: u64,
    pub crop_mode: CropMode,
    /// `None` optimizes the relational term alone (alpha = 1 throughout).
    pub infonce_warmup: Option<WarmupSchedule>,
    pub seed: u64,
    pub teacher_aug: AugmentationPolicy,
    pub student_aug: AugmentationPolicy,
    pub multi_crop: Option<MultiCropSpec>,
}

impl TrainConfig {
    pub fn view_plan(&self) -> ViewPlan {
        ViewPlan {
            mode: self.crop_mode,
            teacher: self.teacher_aug.clone(),
            student: self.student_aug.clone(),
            multi_crop: self.multi_crop.clone(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.epochs == 0 {
            out.push("train.epochs must be positive".into());
        }
        if self.batch_size == 0 {
            out.push("train.batch_size must be positive".into());
        }
        if self.queue_capacity < self.batch_size {
            out.push(format!(
                "train.queue_capacity ({}) must be at least the batch size ({})",
                self.queue_capacity, self.batch_size
            ));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            out.push(format!("train.base_lr must be positive, got {}", self.base_lr));
        }
        if self.lr_warmup_epochs >= self.epochs && self.epochs > 0 {
            out.push(format!(
                "train.lr_warmup_epochs ({}) must be smaller than train.epochs ({})",
                self.lr_warmup_epochs, self.epochs
            ));
        }
        out.extend(self.temps.violations_with(self.allow_unsharpened_teacher));
        // total_steps = 0 means "the whole run" and is filled in by the trainer
        out.extend(EmaConfig { total_steps: self.ema.total_steps.max(1), ..self.ema }.violations());
        out.extend(self.optimizer.violations());
        out.extend(self.view_plan().violations());
        if let Err(e) = self.model.validate() {
            out.push(format!("model: {e}"));
        }
        for s in self.view_plan().input_sizes() {
            if !self.model.input_sizes.contains(&s) {
                out.push(format!("model does not accept input size {s}"));
            }
        }
        out
    }
}

/// One record per optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: u64,
    pub loss_total: f64,
    pub loss_rel: f64,
    pub loss_nce: f64,
    pub alpha: f64,
    pub lr: f64,
    pub m: f64,
    pub queue_fill: usize,
    pub grad_norm: f64,
    /// Mean over dimensions of the across-batch standard deviation of the
    /// teacher embeddings; approaches 0 when the encoder collapses.
    pub embedding_std: f64,
}

impl StepMetrics {
    pub fn is_finite(&self) -> bool {
        [
            self.loss_total,
            self.loss_rel,
            self.loss_nce,
            self.alpha,
            self.lr,
            self.m,
            self.grad_norm,
            self.embedding_std,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Mean per-dimension standard deviation of the rows of `z` (population).
pub fn embedding_std(z: &Tensor) -> Result<f64> {
    let z = z.to_dtype(DType::F64)?;
    let mean = z.mean_keepdim(0)?;
    let var = z.broadcast_sub(&mean)?.sqr()?.mean(0)?;
    Ok(var.sqrt()?.mean_all()?.to_scalar::<f64>()?)
}

/// Mutable training state: model pair, optimizer, queue and step counter.
/// All mutation happens inside [`Trainer::train_step`].
pub struct Trainer {
    cfg: TrainConfig,
    pair: ModelPair,
    queue: MemoryQueue,
    optimizer: Optimizer,
    lr: LrSchedule,
    ema: EmaConfig,
    warmup: Option<WarmupSchedule>,
    steps_per_epoch: u64,
    step: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, steps_per_epoch: u64, device: &Device) -> Result<Self> {
        let v = cfg.violations();
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        if steps_per_epoch == 0 {
            return Err(Error::Config(vec!["an epoch must contain at least one step".into()]));
        }
        let total = cfg.epochs * steps_per_epoch;
        let pair = ModelPair::new(&cfg.model, cfg.seed, device)?;
        let queue = MemoryQueue::new(cfg.queue_capacity, cfg.model.embedding_dim())?;
        let optimizer = Optimizer::new(cfg.optimizer, &trainable(&pair));
        let lr = LrSchedule::scaled(cfg.base_lr, cfg.batch_size, cfg.lr_warmup_epochs * steps_per_epoch, total);
        let mut ema = cfg.ema;
        if ema.schedule == MomentumSchedule::CosineToOne && ema.total_steps == 0 {
            ema.total_steps = total;
        }
        let warmup = cfg.infonce_warmup.map(|w| WarmupSchedule {
            warmup_steps: if w.warmup_steps == 0 { total } else { w.warmup_steps },
            ..w
        });
        Ok(Self {
            cfg,
            pair,
            queue,
            optimizer,
            lr,
            ema,
            warmup,
            steps_per_epoch,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn pair(&self) -> &ModelPair {
        &self.pair
    }

    pub fn queue(&self) -> &MemoryQueue {
        &self.queue
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    /// Number of completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u64 {
        self.step / self.steps_per_epoch
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    pub fn total_steps(&self) -> u64 {
        self.cfg.epochs * self.steps_per_epoch
    }

    pub fn lr_schedule(&self) -> &LrSchedule {
        &self.lr
    }

    pub fn alpha_at(&self, step: u64) -> f64 {
        self.warmup.as_ref().map_or(1.0, |w| warmup_weight(step, w))
    }

    pub fn momentum_at(&self, step: u64) -> f64 {
        momentum_schedule(step, &self.ema)
    }

    /// Overwrites the mutable state (used when resuming).
    pub fn restore_state(&mut self, step: u64, queue: MemoryQueue, optimizer: &OptimizerState) -> Result<()> {
        if queue.capacity() != self.queue.capacity() || queue.dim() != self.queue.dim() {
            return Err(Error::Shape(format!(
                "queue {}x{} does not match configured {}x{}",
                queue.capacity(),
                queue.dim(),
                self.queue.capacity(),
                self.queue.dim()
            )));
        }
        let params = trainable(&self.pair);
        self.optimizer.load_state(optimizer, &params)?;
        self.queue = queue;
        self.step = step;
        Ok(())
    }

    /// Relation bank for this step: the queue, plus the current teacher
    /// batch while the queue is still short of `queue_min_fill`.
    fn bank(&self, z2: &EmbeddingBatch) -> Result<Tensor> {
        let z2 = z2.values();
        if self.queue.fill() == 0 {
            return Ok(z2.clone());
        }
        let snap = self.queue.snapshot(self.pair.device())?;
        if self.queue.fill() < self.cfg.queue_min_fill {
            Ok(Tensor::cat(&[&snap, z2], 0)?)
        } else {
            Ok(snap)
        }
    }

    /// Forward, backward, optimizer update, EMA update and enqueue, in
    /// that order.
    pub fn train_step(&mut self, batch: &ViewBatch) -> Result<StepMetrics> {
        let step = self.step;
        let expected = self.cfg.view_plan().student_views();
        if batch.students.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} student views, got {}",
                batch.students.len()
            )));
        }
        let alpha = self.alpha_at(step);
        let lr = self.lr.at(step);
        let m = self.momentum_at(step);

        let z2 = self.pair.forward_teacher(&batch.teacher, true)?;
        let bank = self.bank(&z2)?;
        let mut losses = Vec::with_capacity(expected);
        let (mut rel, mut nce) = (0.0, 0.0);
        for view in &batch.students {
            let z1 = self.pair.forward_student(view, Mode::Train)?;
            let (loss, parts) = total_loss(z1.values(), z2.values(), &bank, self.cfg.temps, alpha)?;
            rel += parts.loss_rel / expected as f64;
            nce += parts.loss_nce / expected as f64;
            losses.push(loss);
        }
        let loss = if losses.len() == 1 {
            losses.pop().expect("one loss")
        } else {
            Tensor::stack(&losses, 0)?.mean(0)?
        };
        let loss_total = crate::loss::scalar_f64(&loss)?;

        let grads = loss.backward()?;
        let params = trainable(&self.pair);
        let mut sq = 0.0;
        for p in &params {
            if let Some(g) = grads.get(p.var.as_tensor()) {
                sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
            }
        }
        let grad_norm = sq.sqrt();
        if !(loss_total.is_finite() && grad_norm.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                lr,
                alpha,
                grad_norm,
                loss_rel: rel,
                loss_nce: nce,
            });
        }
        self.optimizer.step(&params, &grads, lr)?;
        ema_update(&self.pair, m)?;
        self.queue.enqueue(&z2)?;
        self.step += 1;

        Ok(StepMetrics {
            step,
            epoch: step / self.steps_per_epoch,
            loss_total,
            loss_rel: rel,
            loss_nce: nce,
            alpha,
            lr,
            m,
            queue_fill: self.queue.fill(),
            grad_norm,
            embedding_std: embedding_std(z2.values())?,
        })
    }
}

/// Student backbone + projector + predictor tensors that receive updates.
pub fn trainable(pair: &ModelPair) -> Vec<&Param> {
    pair.student_params
        .trainable()
        .chain(pair.predictor_params.trainable())
        .collect()
}

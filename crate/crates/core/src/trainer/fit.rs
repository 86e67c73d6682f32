use std::path::PathBuf;

use candle_core::Device;

use crate::error::{Error, Result};
use crate::harness::checkpoint::{save_checkpoint, Checkpoint};
use crate::harness::config::ExperimentConfig;
use crate::harness::dataset::DatasetSplits;
use crate::harness::metrics::MetricsWriter;

use super::pipeline::DataPipeline;
use super::step::{StepMetrics, Trainer};

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub device: Device,
    pub resume: Option<Checkpoint>,
    /// Accept a resume checkpoint whose config hash differs.
    pub force: bool,
    /// Stop (and checkpoint) once this many steps have completed.
    pub stop_after_step: Option<u64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            device: Device::Cpu,
            resume: None,
            force: false,
            stop_after_step: None,
        }
    }
}

pub struct FitOutcome {
    pub final_checkpoint: PathBuf,
    pub last_metrics: Option<StepMetrics>,
    pub trainer: Trainer,
}

/// Pretrains from scratch or from `opts.resume`, logging to
/// `out_dir/metrics.jsonl` and checkpointing to `out_dir`.
///
/// Runs are deterministic given the seed: batch contents do not depend on
/// the worker count, and all mutation happens on the calling thread.
/// Floating-point reductions on accelerators may still differ run to run.
pub fn fit(
    cfg: &ExperimentConfig,
    data: &DatasetSplits,
    opts: FitOptions,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<FitOutcome> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    if data.id != cfg.dataset() {
        return Err(Error::Dataset(format!(
            "config names dataset {:?} but {:?} was loaded",
            cfg.dataset(),
            data.id
        )));
    }
    let mut split = data.pretrain();
    if let Some(n) = cfg.run.train_subset {
        split = split.truncated(n);
    }
    let pipeline = DataPipeline::new(
        split,
        cfg.train.view_plan(),
        cfg.train.batch_size,
        cfg.train.seed,
        opts.device.clone(),
    )?
    .with_workers(cfg.run.workers, cfg.run.prefetch);
    let spe = pipeline.steps_per_epoch() as u64;
    let hash = cfg.hash();
    let out = cfg.run.out_dir.clone();
    cfg.write_resolved(&out)?;
    let mut metrics = MetricsWriter::open(&out.join("metrics.jsonl"))?;

    let mut trainer = Trainer::new(cfg.train.clone(), spe, &opts.device)?;
    if let Some(ckpt) = &opts.resume {
        ckpt.restore_into(&mut trainer, &hash, opts.force)?;
        log::info!("resumed at step {} (epoch {})", trainer.step(), trainer.epoch());
    }
    let total = trainer.total_steps();
    let end = opts.stop_after_step.map_or(total, |s| s.min(total));
    log::info!(
        "training {} steps ({} per epoch) into {}",
        end.saturating_sub(trainer.step()),
        spe,
        out.display()
    );

    let mut last = None;
    while trainer.step() < end {
        let epoch = trainer.step() / spe;
        let start_batch = (trainer.step() % spe) as usize;
        for batch in pipeline.epoch(epoch, start_batch) {
            if trainer.step() >= end {
                break;
            }
            let m = trainer.train_step(&batch?)?;
            on_step(&m);
            let done = m.step + 1;
            let epoch_end = done % spe == 0;
            if m.step % cfg.run.log_every == 0 || epoch_end || done == end {
                metrics.log(&m)?;
            }
            if epoch_end && done < total {
                let finished = done / spe;
                let every = cfg.run.checkpoint_every_epochs;
                if every > 0 && finished.is_multiple_of(every) {
                    let path = out.join(format!("epoch_{finished:04}.ckpt"));
                    save_checkpoint(&Checkpoint::capture(&trainer, &hash)?, &path)?;
                    log::info!("checkpoint {}", path.display());
                }
            }
            last = Some(m);
        }
    }

    let path = if trainer.step() >= total {
        out.join("final.ckpt")
    } else {
        out.join(format!("step_{:08}.ckpt", trainer.step()))
    };
    save_checkpoint(&Checkpoint::capture(&trainer, &hash)?, &path)?;
    Ok(FitOutcome {
        final_checkpoint: path,
        last_metrics: last,
        trainer,
    })
}

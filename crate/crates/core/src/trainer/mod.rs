//! The optimization loop: views, forward, loss, optimizer, EMA, queue.

mod fit;
mod optim;
mod pipeline;
mod schedule;
mod step;

pub use fit::{fit, FitOptions, FitOutcome};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind, OptimizerState};
pub use pipeline::{CropMode, DataPipeline, EpochBatches, ViewBatch, ViewPlan};
pub use schedule::{lr_schedule, LrSchedule};
pub use step::{embedding_std, trainable, StepMetrics, TrainConfig, Trainer};

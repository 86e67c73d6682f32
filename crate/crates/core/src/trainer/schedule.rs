use serde::{Deserialize, Serialize};

/// Linear warm-up from 0 to `peak` over `warmup_steps`, then cosine decay
/// to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    /// Peak rate scaled linearly with batch size: `base * batch / 256`.
    pub fn scaled(base_lr: f64, batch_size: usize, warmup_steps: u64, total_steps: u64) -> Self {
        Self {
            peak: base_lr * batch_size as f64 / 256.0,
            warmup_steps,
            total_steps,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        lr_schedule(step, self)
    }
}

pub fn lr_schedule(step: u64, s: &LrSchedule) -> f64 {
    let total = s.total_steps.max(1);
    let step = step.min(total);
    let warm = s.warmup_steps.min(total);
    if step < warm {
        return s.peak * step as f64 / warm as f64;
    }
    let span = total - warm;
    if span == 0 {
        return 0.0;
    }
    let progress = (step - warm) as f64 / span as f64;
    s.peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

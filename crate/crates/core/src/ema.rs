//! Exponential-moving-average coupling of teacher to student.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelPair, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumSchedule {
    Constant,
    /// 1 - (1 - m0) * (cos(pi * t / T) + 1) / 2, reaching 1 at the last step.
    CosineToOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmaConfig {
    pub m0: f64,
    pub schedule: MomentumSchedule,
    #[serde(default)]
    pub total_steps: u64,
}

impl EmaConfig {
    pub fn constant(m0: f64) -> Self {
        Self {
            m0,
            schedule: MomentumSchedule::Constant,
            total_steps: 0,
        }
    }

    pub fn cosine(m0: f64, total_steps: u64) -> Self {
        Self {
            m0,
            schedule: MomentumSchedule::CosineToOne,
            total_steps,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.m0) {
            out.push(format!("ema.m0 must lie in [0, 1], got {}", self.m0));
        }
        if self.schedule == MomentumSchedule::CosineToOne && self.total_steps == 0 {
            out.push("ema.total_steps must be positive for the cosine schedule".into());
        }
        out
    }
}

/// Teacher momentum at `step`. Steps past `total_steps` are clamped.
pub fn momentum_schedule(step: u64, cfg: &EmaConfig) -> f64 {
    match cfg.schedule {
        MomentumSchedule::Constant => cfg.m0,
        MomentumSchedule::CosineToOne => {
            let total = cfg.total_steps.max(1);
            let step = if step > total {
                log::warn!("momentum schedule step {step} past total {total}; clamping");
                total
            } else {
                step
            };
            let progress = step as f64 / total as f64;
            1.0 - (1.0 - cfg.m0) * ((std::f64::consts::PI * progress).cos() + 1.0) / 2.0
        }
    }
}

/// teacher <- m * teacher + (1 - m) * student, for every tensor including
/// normalization running statistics.
pub fn ema_update_params(teacher: &ParamStore, student: &ParamStore, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidMomentum(m));
    }
    teacher.check_compatible(student)?;
    if m == 1.0 {
        return Ok(());
    }
    if m == 0.0 {
        return teacher.copy_from(student);
    }
    for (t, s) in teacher.iter().zip(student.iter()) {
        let updated = (t.var.as_tensor().affine(m, 0.0)? + s.var.as_tensor().detach().affine(1.0 - m, 0.0)?)?;
        t.var.set(&updated)?;
    }
    Ok(())
}

/// EMA step for a model pair. The predictor has no teacher counterpart
/// and is untouched.
pub fn ema_update(pair: &ModelPair, m: f64) -> Result<()> {
    ema_update_params(&pair.teacher_params, &pair.student_params, m)
}

//! Relation distributions, the sharpened-teacher consistency loss, InfoNCE
//! and their warm-up blend.
//!
//! All functions are dtype-generic over candle float tensors. Softmaxes are
//! computed as log-softmaxes with the row max subtracted, and every
//! cross-entropy goes through log-probabilities.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Student and teacher softmax temperatures. The teacher must be sharper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperaturePair {
    pub tau_s: f64,
    pub tau_t: f64,
}

impl TemperaturePair {
    pub fn new(tau_s: f64, tau_t: f64) -> Result<Self> {
        let pair = Self { tau_s, tau_t };
        let v = pair.violations();
        if v.is_empty() {
            Ok(pair)
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        self.violations_with(false)
    }

    /// As [`Self::violations`]; `allow_equal` admits tau_t == tau_s (an
    /// unsharpened teacher, used only by ablations).
    pub fn violations_with(&self, allow_equal: bool) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.tau_s > 0.0 && self.tau_s.is_finite()) {
            out.push(format!("temps.tau_s must be positive, got {}", self.tau_s));
        }
        if !(self.tau_t > 0.0 && self.tau_t.is_finite()) {
            out.push(format!("temps.tau_t must be positive, got {}", self.tau_t));
        }
        if !(self.tau_t < self.tau_s || (allow_equal && self.tau_t == self.tau_s)) {
            out.push(format!(
                "temps.tau_t ({}) must be smaller than temps.tau_s ({}): the teacher distribution has to be sharper than the student's",
                self.tau_t, self.tau_s
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupMode {
    Linear,
}

/// Ramp for the relation/InfoNCE blend weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupSchedule {
    pub warmup_steps: u64,
    #[serde(default = "default_warmup_mode")]
    pub mode: WarmupMode,
}

fn default_warmup_mode() -> WarmupMode {
    WarmupMode::Linear
}

impl WarmupSchedule {
    pub fn linear(warmup_steps: u64) -> Self {
        Self {
            warmup_steps,
            mode: WarmupMode::Linear,
        }
    }
}

/// alpha = min(step / warmup_steps, 1).
pub fn warmup_weight(step: u64, sched: &WarmupSchedule) -> f64 {
    match sched.mode {
        WarmupMode::Linear => {
            if sched.warmup_steps == 0 {
                return 1.0;
            }
            (step as f64 / sched.warmup_steps as f64).min(1.0)
        }
    }
}

/// Row-wise softmax over similarities to a bank, stored as log-probabilities.
#[derive(Debug, Clone)]
pub struct RelationDistribution {
    log_probs: Tensor,
    temperature: f64,
}

impl RelationDistribution {
    /// Wraps an explicit B x K probability matrix (rows must sum to one).
    /// Zero entries are allowed, e.g. for one-hot targets.
    pub fn from_probs(probs: &Tensor, temperature: f64) -> Result<Self> {
        if probs.rank() != 2 {
            return Err(Error::Shape(format!("probabilities must be B x K, got {:?}", probs.dims())));
        }
        Ok(Self {
            log_probs: probs.log()?,
            temperature,
        })
    }

    pub fn log_probs(&self) -> &Tensor {
        &self.log_probs
    }

    pub fn probs(&self) -> Result<Tensor> {
        Ok(self.log_probs.exp()?)
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn dims(&self) -> (usize, usize) {
        let d = self.log_probs.dims();
        (d[0], d[1])
    }

    pub fn detach(&self) -> Self {
        Self {
            log_probs: self.log_probs.detach(),
            temperature: self.temperature,
        }
    }

    /// Mean over rows of the Shannon entropy of each row (0 log 0 = 0).
    pub fn entropy(&self) -> Result<Tensor> {
        let p = self.probs()?;
        let finite_log = self.log_probs.clamp(-1e30, 0.0)?;
        Ok((p * finite_log)?.sum(1)?.neg()?.mean(0)?)
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(tau))
    }
}

fn check_bank(z: &Tensor, bank: &Tensor) -> Result<()> {
    if z.rank() != 2 || bank.rank() != 2 {
        return Err(Error::Shape(format!(
            "embeddings {:?} and bank {:?} must both be matrices",
            z.dims(),
            bank.dims()
        )));
    }
    if bank.dim(0)? == 0 {
        return Err(Error::EmptyBank);
    }
    if z.dim(1)? != bank.dim(1)? {
        return Err(Error::Shape(format!(
            "embedding width {} != bank width {}",
            z.dim(1)?,
            bank.dim(1)?
        )));
    }
    if z.dtype() != bank.dtype() {
        return Err(Error::Shape(format!("dtype {:?} vs bank {:?}", z.dtype(), bank.dtype())));
    }
    Ok(())
}

/// Stable log-softmax over the last axis. The subtracted max is detached;
/// the result is shift invariant so it contributes no gradient.
pub fn log_softmax(logits: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Stable log-sum-exp over the last axis, keeping the axis.
fn logsumexp(logits: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let lse = logits.broadcast_sub(&max)?.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(lse.broadcast_add(&max)?)
}

/// probs[i][k] = softmax_k(z_i . bank_k / tau).
pub fn relation_distribution(z: &Tensor, bank: &Tensor, tau: f64) -> Result<RelationDistribution> {
    check_temperature(tau)?;
    check_bank(z, bank)?;
    let logits = (z.matmul(&bank.t()?)? / tau)?;
    Ok(RelationDistribution {
        log_probs: log_softmax(&logits)?,
        temperature: tau,
    })
}

/// Cross-entropy H(p_teacher, p_student) averaged over rows. The teacher
/// side is detached.
pub fn relational_consistency(p_student: &RelationDistribution, p_teacher: &RelationDistribution) -> Result<Tensor> {
    if p_student.dims() != p_teacher.dims() {
        return Err(Error::Shape(format!(
            "student distribution {:?} vs teacher {:?}",
            p_student.dims(),
            p_teacher.dims()
        )));
    }
    let target = p_teacher.probs()?.detach();
    Ok((target * p_student.log_probs())?.sum(1)?.neg()?.mean(0)?)
}

/// InfoNCE with row-aligned positives (z1_i, z2_i) and the bank as negatives.
pub fn info_nce(z1: &Tensor, z2: &Tensor, bank: &Tensor, tau: f64) -> Result<Tensor> {
    check_temperature(tau)?;
    check_bank(z1, bank)?;
    if z1.dims() != z2.dims() {
        return Err(Error::Shape(format!("positives {:?} vs {:?}", z1.dims(), z2.dims())));
    }
    let pos = ((z1 * z2)?.sum_keepdim(1)? / tau)?;
    let neg = (z1.matmul(&bank.t()?)? / tau)?;
    let logits = Tensor::cat(&[&pos, &neg], 1)?;
    let per_row = (logsumexp(&logits)? - pos)?;
    Ok(per_row.squeeze(1)?.mean(0)?)
}

/// Unweighted component values of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossMetrics {
    pub loss_rel: f64,
    pub loss_nce: f64,
    pub alpha: f64,
}

pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// alpha * relational_consistency + (1 - alpha) * info_nce, with the student
/// embeddings `z1` and teacher embeddings `z2` (treated as constants).
pub fn total_loss(
    z1: &Tensor,
    z2: &Tensor,
    bank: &Tensor,
    temps: TemperaturePair,
    alpha: f64,
) -> Result<(Tensor, LossMetrics)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Shape(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let z2 = z2.detach();
    let p_student = relation_distribution(z1, bank, temps.tau_s)?;
    let p_teacher = relation_distribution(&z2, bank, temps.tau_t)?;
    let rel = relational_consistency(&p_student, &p_teacher)?;
    let nce = info_nce(z1, &z2, bank, temps.tau_s)?;
    let metrics = LossMetrics {
        loss_rel: scalar_f64(&rel)?,
        loss_nce: scalar_f64(&nce)?,
        alpha,
    };
    let total = if alpha == 1.0 {
        rel
    } else if alpha == 0.0 {
        nce
    } else {
        (rel.affine(alpha, 0.0)? + nce.affine(1.0 - alpha, 0.0)?)?
    };
    Ok((total, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t64(rows: &[&[f64]]) -> Tensor {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    fn axis_bank() -> Tensor {
        t64(&[&[1., 0.], &[0., 1.], &[-1., 0.], &[0., -1.]])
    }

    #[test]
    fn relation_distribution_axis_example() {
        let z = t64(&[&[1., 0.]]);
        let p = relation_distribution(&z, &axis_bank(), 0.1).unwrap();
        let probs = p.probs().unwrap().to_vec2::<f64>().unwrap()[0].clone();
        // softmax of (10, 0, -10, 0)
        let e = [10f64.exp(), 1.0, (-10f64).exp(), 1.0];
        let s: f64 = e.iter().sum();
        for (got, want) in probs.iter().zip(e.iter().map(|x| x / s)) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((probs[0] - 0.999909).abs() < 1e-6);
        assert!((probs[1] - 4.5396e-5).abs() < 1e-9);
        assert!((probs[2] - 2.061e-9).abs() < 1e-12);
    }

    #[test]
    fn equal_similarities_give_uniform_rows() {
        let z = t64(&[&[0., 0., 1.]]);
        let bank = t64(&[&[1., 0., 0.], &[0., 1., 0.], &[-1., 0., 0.]]);
        let p = relation_distribution(&z, &bank, 0.07).unwrap();
        for v in p.probs().unwrap().to_vec2::<f64>().unwrap()[0].iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_temperature_gives_one_hot() {
        let z = t64(&[&[0.8, 0.6]]);
        let p = relation_distribution(&z, &axis_bank(), 1e-3).unwrap();
        let row = p.probs().unwrap().to_vec2::<f64>().unwrap()[0].clone();
        assert!((row[0] - 1.0).abs() < 1e-12);
        assert!(row[1..].iter().all(|v| *v < 1e-12));
    }

    #[test]
    fn bad_inputs_rejected() {
        let z = t64(&[&[1., 0.]]);
        let empty = Tensor::zeros((0, 2), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(relation_distribution(&z, &empty, 0.1), Err(Error::EmptyBank)));
        assert!(matches!(
            relation_distribution(&z, &axis_bank(), 0.0),
            Err(Error::InvalidTemperature(_))
        ));
        assert!(matches!(
            relation_distribution(&z, &axis_bank(), -1.0),
            Err(Error::InvalidTemperature(_))
        ));
        let wide = t64(&[&[1., 0., 0.]]);
        assert!(matches!(relation_distribution(&wide, &axis_bank(), 0.1), Err(Error::Shape(_))));
        let p2 = relation_distribution(&t64(&[&[1., 0.], &[0., 1.]]), &axis_bank(), 0.1).unwrap();
        let p1 = relation_distribution(&z, &axis_bank(), 0.1).unwrap();
        assert!(matches!(relational_consistency(&p1, &p2), Err(Error::Shape(_))));
    }

    #[test]
    fn consistency_with_one_hot_target() {
        let z = t64(&[&[0.6, 0.8], &[1., 0.]]);
        let p1 = relation_distribution(&z, &axis_bank(), 0.1).unwrap();
        let target = t64(&[&[0., 1., 0., 0.], &[0., 1., 0., 0.]]);
        let p2 = RelationDistribution::from_probs(&target, 0.0).unwrap();
        let loss = scalar_f64(&relational_consistency(&p1, &p2).unwrap()).unwrap();
        let lp = p1.log_probs().to_vec2::<f64>().unwrap();
        let want = -(lp[0][1] + lp[1][1]) / 2.0;
        assert!((loss - want).abs() < 1e-12);
        assert_eq!(scalar_f64(&p2.entropy().unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn consistency_uniform_is_ln4() {
        let u = Tensor::full(0.25f64, (2, 4), &Device::Cpu).unwrap();
        let p = RelationDistribution::from_probs(&u, 0.1).unwrap();
        let loss = scalar_f64(&relational_consistency(&p, &p).unwrap()).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn info_nce_closed_form() {
        let z = t64(&[&[1., 0.]]);
        let bank = t64(&[&[0., 1.], &[0., -1.]]);
        let loss = scalar_f64(&info_nce(&z, &z, &bank, 0.1).unwrap()).unwrap();
        let want = (1.0 + 2.0 * (-10f64).exp()).ln();
        assert!((loss - want).abs() < 1e-15);
        assert!((loss - 9.079e-5).abs() < 1e-8);
    }

    #[test]
    fn info_nce_symmetric_case_is_ln_k_plus_1() {
        // positive and both negatives have similarity 0
        let z1 = t64(&[&[1., 0., 0.]]);
        let z2 = t64(&[&[0., 1., 0.]]);
        let bank = t64(&[&[0., 0., 1.], &[0., -1., 0.]]);
        let loss = scalar_f64(&info_nce(&z1, &z2, &bank, 0.2).unwrap()).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn info_nce_decreases_with_positive_similarity() {
        let bank = t64(&[&[0., 1.], &[0., -1.], &[-1., 0.]]);
        let z1 = t64(&[&[1., 0.]]);
        let mut last = f64::INFINITY;
        for angle in [1.5f64, 1.0, 0.5, 0.1, 0.0] {
            let z2 = t64(&[&[angle.cos(), angle.sin()]]);
            let l = scalar_f64(&info_nce(&z1, &z2, &bank, 0.1).unwrap()).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn warmup_weight_examples() {
        let s = WarmupSchedule::linear(1000);
        assert_eq!(warmup_weight(0, &s), 0.0);
        assert_eq!(warmup_weight(500, &s), 0.5);
        assert_eq!(warmup_weight(1000, &s), 1.0);
        assert_eq!(warmup_weight(1500, &s), 1.0);
    }

    #[test]
    fn total_loss_endpoints() {
        let z1 = t64(&[&[0.6, 0.8], &[0., 1.]]);
        let z2 = t64(&[&[0.8, 0.6], &[1., 0.]]);
        let temps = TemperaturePair::new(0.1, 0.04).unwrap();
        let bank = axis_bank();
        let rel = relational_consistency(
            &relation_distribution(&z1, &bank, 0.1).unwrap(),
            &relation_distribution(&z2, &bank, 0.04).unwrap(),
        )
        .unwrap();
        let nce = info_nce(&z1, &z2, &bank, 0.1).unwrap();
        let (t1, m1) = total_loss(&z1, &z2, &bank, temps, 1.0).unwrap();
        let (t0, m0) = total_loss(&z1, &z2, &bank, temps, 0.0).unwrap();
        assert_eq!(scalar_f64(&t1).unwrap(), scalar_f64(&rel).unwrap());
        assert_eq!(scalar_f64(&t0).unwrap(), scalar_f64(&nce).unwrap());
        assert_eq!(m1.loss_rel, m0.loss_rel);
        assert_eq!(m1.loss_nce, scalar_f64(&nce).unwrap());
        assert!(total_loss(&z1, &z2, &bank, temps, 1.5).is_err());
    }

    #[test]
    fn temperature_pair_requires_sharper_teacher() {
        assert!(TemperaturePair::new(0.1, 0.04).is_ok());
        let err = TemperaturePair::new(0.1, 0.2).unwrap_err();
        assert!(err.to_string().contains("sharper"));
        assert!(TemperaturePair::new(0.1, 0.1).is_err());
        assert_eq!(TemperaturePair { tau_s: -1.0, tau_t: 0.0 }.violations().len(), 3);
    }

    #[test]
    fn teacher_side_receives_no_gradient() {
        use candle_core::Var;
        let z1 = Var::from_tensor(&t64(&[&[0.6, 0.8]])).unwrap();
        let z2 = Var::from_tensor(&t64(&[&[0.8, 0.6]])).unwrap();
        let temps = TemperaturePair::new(0.1, 0.05).unwrap();
        let (loss, _) = total_loss(z1.as_tensor(), z2.as_tensor(), &axis_bank(), temps, 0.5).unwrap();
        let grads = loss.backward().unwrap();
        assert!(grads.get(z1.as_tensor()).is_some());
        assert!(grads.get(z2.as_tensor()).is_none());
    }
}

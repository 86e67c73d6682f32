use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{AugmentationPolicy, Normalization};
use crate::error::{Error, Result};
use crate::harness::dataset::Split;
use crate::loss::log_softmax;
use crate::model::{ModelPair, Param, ParamBuilder, ParamKind, ParamStore};
use crate::trainer::{Optimizer, OptimizerConfig};

use super::features::{extract_features, FeatureBank, FeatureTransform};

/// Linear classifier training recipe on frozen pooled features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeProtocol {
    pub epochs: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Epochs at which the learning rate is multiplied by `decay`.
    pub milestones: Vec<u64>,
    pub decay: f64,
    pub batch_size: usize,
    /// Random crop + flip on training images; test images always use the
    /// center crop.
    pub train_augment: bool,
}

impl Default for ProbeProtocol {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 10.0,
            weight_decay: 0.0,
            momentum: 0.9,
            milestones: vec![60, 80],
            decay: 0.1,
            batch_size: 256,
            train_augment: true,
        }
    }
}

impl ProbeProtocol {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.epochs == 0 {
            out.push("eval.probe_epochs must be positive".into());
        }
        for m in &self.milestones {
            if *m >= self.epochs {
                out.push(format!(
                    "eval.probe_milestones: milestone {m} must be smaller than probe_epochs ({})",
                    self.epochs
                ));
            }
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            out.push("eval.probe_milestones must be strictly increasing".into());
        }
        if !(self.lr > 0.0) {
            out.push(format!("eval.probe_lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(format!("eval.probe_momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            out.push("eval.probe_batch_size must be positive".into());
        }
        out
    }

    pub fn lr_at(&self, epoch: u64) -> f64 {
        let passed = self.milestones.iter().filter(|m| epoch >= **m).count();
        self.lr * self.decay.powi(passed as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub test_top1: f64,
    pub train_top1: f64,
    pub encoder_digest: String,
}

fn rows_tensor(bank: &FeatureBank, idx: &[usize], device: &Device) -> Result<Tensor> {
    let mut data = Vec::with_capacity(idx.len() * bank.dim);
    for &i in idx {
        data.extend_from_slice(bank.row(i));
    }
    Ok(Tensor::from_vec(data, (idx.len(), bank.dim), device)?)
}

fn accuracy(weight: &Tensor, bias: &Tensor, bank: &FeatureBank, labels: &[u32], device: &Device) -> Result<f64> {
    let mut correct = 0usize;
    let all: Vec<usize> = (0..bank.len()).collect();
    for chunk in all.chunks(1024) {
        let x = rows_tensor(bank, chunk, device)?;
        let logits = x.matmul(&weight.t()?)?.broadcast_add(bias)?;
        let pred = logits.argmax(1)?.to_vec1::<u32>()?;
        correct += pred.iter().zip(chunk).filter(|(p, i)| **p == labels[**i]).count();
    }
    Ok(correct as f64 / bank.len().max(1) as f64)
}

/// Trains a linear classifier on pooled student-backbone features and
/// reports top-1 accuracy. The encoder is verified unchanged afterwards.
#[allow(clippy::too_many_arguments)]
pub fn linear_probe(
    pair: &ModelPair,
    train: &Split,
    test: &Split,
    proto: &ProbeProtocol,
    image_size: usize,
    normalization: Normalization,
    feature_batch: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let v = proto.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let classes = train.num_classes();
    if classes == 0 || test.num_classes() != classes {
        return Err(Error::Eval(format!(
            "train split has {classes} classes, test split has {}",
            test.num_classes()
        )));
    }
    let device = pair.device().clone();
    let digest = pair.student_params.digest()?;

    let center = FeatureTransform::CenterCrop {
        size: image_size,
        normalization,
    };
    let test_bank = extract_features(pair, test, &center, feature_batch)?;
    let test_labels = test_bank.require_labels(classes)?;
    let train_center = extract_features(pair, train, &center, feature_batch)?;
    let train_labels = train_center.require_labels(classes)?;
    let dim = train_center.dim;

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (weight, bias) = {
        let mut b = ParamBuilder::new(&mut store, &mut rng, &device);
        let w = b.uniform_fan_in("weight", ParamKind::Weight, &[classes, dim], dim)?;
        let bias = b.constant("bias", ParamKind::Bias, &[classes], 0.0)?;
        (w, bias)
    };
    let params: Vec<&Param> = store.trainable().collect();
    let mut opt = Optimizer::new(OptimizerConfig::sgd(proto.momentum, proto.weight_decay), &params);
    let weak = AugmentationPolicy::weak(image_size, normalization);

    for epoch in 0..proto.epochs {
        let bank = if proto.train_augment {
            extract_features(
                pair,
                train,
                &FeatureTransform::Augmented {
                    policy: weak.clone(),
                    seed,
                    epoch,
                },
                feature_batch,
            )?
        } else {
            train_center.clone()
        };
        let mut order: Vec<usize> = (0..bank.len()).collect();
        order.shuffle(&mut rng);
        let lr = proto.lr_at(epoch);
        for chunk in order.chunks(proto.batch_size) {
            let x = rows_tensor(&bank, chunk, &device)?;
            let y: Vec<u32> = chunk.iter().map(|i| train_labels[*i]).collect();
            let y = Tensor::new(y.as_slice(), &device)?.unsqueeze(1)?;
            let logits = x.matmul(&weight.as_tensor().t()?)?.broadcast_add(bias.as_tensor())?;
            let nll = log_softmax(&logits)?.gather(&y, 1)?.neg()?.mean_all()?;
            let grads = nll.backward()?;
            opt.step(&params, &grads, lr)?;
        }
    }

    if pair.student_params.digest()? != digest {
        return Err(Error::Eval("encoder parameters changed during the probe".into()));
    }
    let (w, b) = (weight.as_tensor().to_dtype(DType::F32)?, bias.as_tensor().to_dtype(DType::F32)?);
    Ok(ProbeReport {
        test_top1: accuracy(&w, &b, &test_bank, &test_labels, &device)?,
        train_top1: accuracy(&w, &b, &train_center, &train_labels, &device)?,
        encoder_digest: digest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_protocol_matches_recipe() {
        let p = ProbeProtocol::default();
        assert_eq!((p.epochs, p.lr, p.weight_decay, p.momentum), (100, 10.0, 0.0, 0.9));
        assert_eq!(p.milestones, vec![60, 80]);
        assert!(p.violations().is_empty());
        assert_eq!(p.lr_at(0), 10.0);
        assert!((p.lr_at(60) - 1.0).abs() < 1e-12);
        assert!((p.lr_at(99) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn milestones_must_precede_final_epoch() {
        let p = ProbeProtocol {
            epochs: 50,
            ..Default::default()
        };
        assert_eq!(p.violations().len(), 2);
    }
}

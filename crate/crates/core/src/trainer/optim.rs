use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Param;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Lars,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
    /// LARS trust coefficient.
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_eta() -> f64 {
    0.001
}

impl OptimizerConfig {
    pub fn sgd(momentum: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            momentum,
            weight_decay,
            eta: default_eta(),
        }
    }

    pub fn lars(momentum: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::Lars,
            momentum,
            weight_decay,
            eta: default_eta(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(format!("optimizer momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            out.push(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            out.push(format!("lars eta must be positive, got {}", self.eta));
        }
        out
    }
}

/// Serializable momentum buffers, keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub buffers: Vec<(String, Option<Vec<f32>>)>,
}

/// SGD with heavy-ball momentum (buffer initialized to the first update,
/// weight decay folded into the gradient), optionally with layer-wise
/// trust ratios. Under LARS, biases and normalization parameters get
/// neither decay nor adaptation.
#[derive(Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    names: Vec<String>,
    buffers: Vec<Option<Tensor>>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, params: &[&Param]) -> Self {
        Self {
            cfg,
            names: params.iter().map(|p| p.name.clone()).collect(),
            buffers: vec![None; params.len()],
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn step(&mut self, params: &[&Param], grads: &GradStore, lr: f64) -> Result<()> {
        if params.len() != self.names.len() {
            return Err(Error::Shape(format!(
                "optimizer built for {} parameters, stepped with {}",
                self.names.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.name != self.names[i] {
                return Err(Error::Shape(format!("parameter order changed at {}: {}", i, p.name)));
            }
            let Some(g) = grads.get(p.var.as_tensor()) else {
                continue;
            };
            let theta = p.var.as_tensor().detach();
            let exempt = self.cfg.kind == OptimizerKind::Lars && p.kind.is_bias_or_norm();
            let mut d = g.detach();
            if self.cfg.weight_decay != 0.0 && !exempt {
                d = (d + theta.affine(self.cfg.weight_decay, 0.0)?)?;
            }
            if self.cfg.kind == OptimizerKind::Lars && !exempt {
                let w_norm = norm(&theta)?;
                let d_norm = norm(&d)?;
                if w_norm > 0.0 && d_norm > 0.0 {
                    d = d.affine(self.cfg.eta * w_norm / d_norm, 0.0)?;
                }
            }
            let buf = match self.buffers[i].take() {
                Some(b) if self.cfg.momentum != 0.0 => (b.affine(self.cfg.momentum, 0.0)? + &d)?,
                _ => d,
            };
            let updated = (theta - buf.affine(lr, 0.0)?)?;
            p.var.set(&updated)?;
            self.buffers[i] = Some(buf);
        }
        Ok(())
    }

    pub fn state(&self) -> Result<OptimizerState> {
        let buffers = self
            .names
            .iter()
            .zip(&self.buffers)
            .map(|(n, b)| {
                let v = match b {
                    Some(t) => Some(t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?),
                    None => None,
                };
                Ok((n.clone(), v))
            })
            .collect::<Result<_>>()?;
        Ok(OptimizerState { buffers })
    }

    pub fn load_state(&mut self, state: &OptimizerState, params: &[&Param]) -> Result<()> {
        if state.buffers.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer state has {} buffers, model has {} parameters",
                state.buffers.len(),
                params.len()
            )));
        }
        let mut buffers = Vec::with_capacity(params.len());
        for ((name, values), p) in state.buffers.iter().zip(params) {
            if *name != p.name {
                return Err(Error::Shape(format!("optimizer state entry {name} does not match parameter {}", p.name)));
            }
            buffers.push(match values {
                Some(v) => {
                    let t = p.var.as_tensor();
                    if v.len() != t.elem_count() {
                        return Err(Error::Shape(format!("optimizer buffer {name} has {} values", v.len())));
                    }
                    Some(Tensor::from_vec(v.clone(), t.dims(), t.device())?.to_dtype(t.dtype())?)
                }
                None => None,
            });
        }
        self.names = params.iter().map(|p| p.name.clone()).collect();
        self.buffers = buffers;
        Ok(())
    }
}

fn norm(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?.sqrt())
}

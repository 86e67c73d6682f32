use candle_core::{Tensor, Var, D};
use rand::Rng;

use super::params::{ParamBuilder, ParamKind};
use crate::error::Result;

/// How normalization layers treat statistics during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Batch statistics; running statistics left untouched. Used by the
    /// teacher, whose running statistics come from the EMA instead.
    TrainFrozenStats,
    /// Running statistics.
    Eval,
}

impl Mode {
    fn uses_batch_stats(self) -> bool {
        !matches!(self, Mode::Eval)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(
        b: &mut ParamBuilder<'_, R>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let weight = b.kaiming_normal_fan_out("weight", &[out_ch, in_ch, kernel, kernel])?;
        Ok(Self {
            weight,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?)
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.dims()[2]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Option<Var>,
}

impl Linear {
    pub fn new<R: Rng>(b: &mut ParamBuilder<'_, R>, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let weight = b.uniform_fan_in("weight", ParamKind::Weight, &[out_dim, in_dim], in_dim)?;
        let bias = if bias {
            Some(b.uniform_fan_in("bias", ParamKind::Bias, &[out_dim], in_dim)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight.as_tensor().t()?)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(b.as_tensor())?),
            None => Ok(y),
        }
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Var> {
        self.bias.as_ref()
    }
}

/// Batch normalization over the channel axis (axis 1) of a 2D or 4D input.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    scale: Var,
    shift: Var,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
}

impl BatchNorm {
    pub fn new<R: Rng>(b: &mut ParamBuilder<'_, R>, features: usize) -> Result<Self> {
        Ok(Self {
            scale: b.constant("weight", ParamKind::NormScale, &[features], 1.0)?,
            shift: b.constant("bias", ParamKind::NormShift, &[features], 0.0)?,
            running_mean: b.constant("running_mean", ParamKind::RunningMean, &[features], 0.0)?,
            running_var: b.constant("running_var", ParamKind::RunningVar, &[features], 1.0)?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let rank = x.rank();
        let features = x.dim(1)?;
        // Bring channels last and flatten everything else: (M, C).
        let flat = if rank == 4 {
            x.permute((0, 2, 3, 1))?.reshape(((), features))?
        } else {
            x.clone()
        };
        let (mean, var) = if mode.uses_batch_stats() {
            let mean = flat.mean(0)?;
            let centered = flat.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean(0)?;
            if mode == Mode::Train {
                let count = flat.dim(0)? as f64;
                let unbiased = if count > 1.0 {
                    var.detach().affine(count / (count - 1.0), 0.0)?
                } else {
                    var.detach()
                };
                let m = self.momentum;
                let new_mean = (self.running_mean.as_tensor().affine(1.0 - m, 0.0)?
                    + mean.detach().affine(m, 0.0)?)?;
                let new_var =
                    (self.running_var.as_tensor().affine(1.0 - m, 0.0)? + unbiased.affine(m, 0.0)?)?;
                self.running_mean.set(&new_mean)?;
                self.running_var.set(&new_var)?;
            }
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().clone(),
                self.running_var.as_tensor().clone(),
            )
        };
        let inv_std = (var + self.eps)?.sqrt()?.recip()?;
        let y = flat
            .broadcast_sub(&mean)?
            .broadcast_mul(&inv_std)?
            .broadcast_mul(self.scale.as_tensor())?
            .broadcast_add(self.shift.as_tensor())?;
        if rank == 4 {
            let (n, _, h, w) = x.dims4()?;
            Ok(y.reshape((n, h, w, features))?.permute((0, 3, 1, 2))?.contiguous()?)
        } else {
            Ok(y)
        }
    }
}

/// Mean over the spatial axes of an NCHW tensor.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

/// Row-wise L2 normalization.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let norm = norm.clamp(1e-12, f64::MAX)?;
    Ok(x.broadcast_div(&norm)?)
}

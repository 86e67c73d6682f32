use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Linear, Mode};
use super::params::ParamBuilder;
use crate::error::{Error, Result};

/// Two-layer MLP: linear -> batch norm -> ReLU -> linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
}

impl HeadSpec {
    pub fn new(in_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            hidden_dim,
            out_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(Error::Shape(format!("head dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MlpHead {
    spec: HeadSpec,
    fc1: Linear,
    bn: BatchNorm,
    fc2: Linear,
}

impl MlpHead {
    pub fn new<R: Rng>(b: &mut ParamBuilder<'_, R>, spec: HeadSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            fc1: Linear::new(&mut b.push("0"), spec.in_dim, spec.hidden_dim, false)?,
            bn: BatchNorm::new(&mut b.push("1"), spec.hidden_dim)?,
            fc2: Linear::new(&mut b.push("3"), spec.hidden_dim, spec.out_dim, true)?,
        })
    }

    pub fn spec(&self) -> HeadSpec {
        self.spec
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.bn.forward(&self.fc1.forward(x)?, mode)?.relu()?;
        self.fc2.forward(&h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ParamStore;
    use candle_core::Device;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn head_maps_dimensions() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = ParamBuilder::new(&mut store, &mut rng, &Device::Cpu);
        let head = MlpHead::new(&mut b, HeadSpec::new(8, 16, 4)).unwrap();
        let x = Tensor::rand(-1f32, 1., (5, 8), &Device::Cpu).unwrap();
        assert_eq!(head.forward(&x, Mode::Train).unwrap().dims(), &[5, 4]);
        // fc1 weight, bn (4 tensors), fc2 weight + bias
        assert_eq!(store.len(), 7);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(HeadSpec::new(0, 4, 4).validate().is_err());
    }
}

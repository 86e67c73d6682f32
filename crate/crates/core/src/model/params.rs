use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Role of a stored tensor. Buffers are carried along with the weights
/// (checkpointed, EMA-coupled) but never handed to an optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn is_buffer(self) -> bool {
        matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Biases and normalization affine terms; exempt from LARS adaptation
    /// and weight decay.
    pub fn is_bias_or_norm(self) -> bool {
        matches!(
            self,
            ParamKind::Bias | ParamKind::NormScale | ParamKind::NormShift
        )
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub var: Var,
}

/// Plain-data copy of one stored tensor.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered collection of named parameters. Iteration order is insertion
/// order so that serialization and EMA pairing are deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> Result<Var> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Shape(format!("duplicate parameter name {name}")));
        }
        let var = Var::from_tensor(&value)?;
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            kind,
            var: var.clone(),
        });
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Parameters an optimizer may update (everything except buffers).
    pub fn trainable(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| !p.kind.is_buffer())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.var.elem_count()).sum()
    }

    /// Overwrites every parameter with the same-named one from `other`.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        self.check_compatible(other)?;
        for (dst, src) in self.params.iter().zip(other.params.iter()) {
            dst.var.set(&src.var.as_tensor().copy()?)?;
        }
        Ok(())
    }

    /// Errors unless both stores have identical names, kinds and shapes
    /// in identical order.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Shape(format!(
                "parameter count {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(other.params.iter()) {
            if a.name != b.name || a.kind != b.kind || a.var.shape() != b.var.shape() {
                return Err(Error::Shape(format!(
                    "parameter {} {:?} {:?} vs {} {:?} {:?}",
                    a.name,
                    a.kind,
                    a.var.shape(),
                    b.name,
                    b.kind,
                    b.var.shape()
                )));
            }
        }
        Ok(())
    }

    /// Flat f32 snapshot of every parameter, in store order.
    pub fn to_flat(&self) -> Result<Vec<Vec<f32>>> {
        self.params
            .iter()
            .map(|p| Ok(p.var.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?))
            .collect()
    }

    /// Named copies of every tensor, in store order.
    pub fn export(&self) -> Result<Vec<TensorRecord>> {
        self.params
            .iter()
            .zip(self.to_flat()?)
            .map(|(p, data)| {
                Ok(TensorRecord {
                    name: p.name.clone(),
                    shape: p.var.as_tensor().dims().to_vec(),
                    data,
                })
            })
            .collect()
    }

    /// Overwrites every tensor from `records`, which must match this store
    /// exactly in names, order and shapes.
    pub fn import(&self, records: &[TensorRecord]) -> Result<()> {
        if records.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                self.params.len(),
                records.len()
            )));
        }
        for (p, r) in self.params.iter().zip(records) {
            let t = p.var.as_tensor();
            if p.name != r.name || t.dims() != r.shape.as_slice() || r.data.len() != t.elem_count() {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not match stored {} {:?}",
                    r.name,
                    r.shape,
                    p.name,
                    t.dims()
                )));
            }
            let value = Tensor::from_vec(r.data.clone(), r.shape.as_slice(), t.device())?.to_dtype(t.dtype())?;
            p.var.set(&value)?;
        }
        Ok(())
    }

    /// SHA-256 over names and raw values; used to prove a frozen encoder
    /// was not modified.
    pub fn digest(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (p, values) in self.params.iter().zip(self.to_flat()?) {
            hasher.update(p.name.as_bytes());
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(format!("{:x}", hasher.finalize()))
    }
}

/// Creates parameters under a dotted path prefix.
pub struct ParamBuilder<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
    pub device: Device,
    prefix: String,
}

impl<'a, R: Rng> ParamBuilder<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R, device: &Device) -> Self {
        Self {
            store,
            rng,
            device: device.clone(),
            prefix: String::new(),
        }
    }

    pub fn push(&mut self, name: &str) -> ParamBuilder<'_, R> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            device: self.device.clone(),
            prefix,
        }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn constant(&mut self, name: &str, kind: ParamKind, shape: &[usize], value: f32) -> Result<Var> {
        let t = Tensor::full(value, shape, &self.device)?;
        let full = self.full(name);
        self.store.insert(full, kind, t)
    }

    /// He-normal init with fan-out scaling (convolutions feeding ReLU).
    pub fn kaiming_normal_fan_out(&mut self, name: &str, shape: &[usize]) -> Result<Var> {
        let fan_out = shape[0] * shape[2..].iter().product::<usize>();
        let std = (2.0 / fan_out as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let n: usize = shape.iter().product();
        let values: Vec<f32> = (0..n).map(|_| normal.sample(self.rng) as f32).collect();
        let t = Tensor::from_vec(values, shape, &self.device)?;
        let full = self.full(name);
        self.store.insert(full, ParamKind::Weight, t)
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual dense-layer default.
    pub fn uniform_fan_in(&mut self, name: &str, kind: ParamKind, shape: &[usize], fan_in: usize) -> Result<Var> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let n: usize = shape.iter().product();
        let values: Vec<f32> = (0..n).map(|_| dist.sample(self.rng) as f32).collect();
        let t = Tensor::from_vec(values, shape, &self.device)?;
        let full = self.full(name);
        self.store.insert(full, kind, t)
    }
}

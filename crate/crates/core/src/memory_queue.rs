//! Fixed-capacity FIFO of past teacher embeddings.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EmbeddingBatch;

/// Ring buffer of `capacity` rows of width `dim`. Once full, every enqueue of
/// B rows overwrites the B oldest rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryQueue {
    capacity: usize,
    dim: usize,
    store: Vec<f32>,
    cursor: usize,
    fill: usize,
}

impl MemoryQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "queue capacity and dim must be positive (got {capacity} x {dim})"
            )));
        }
        Ok(Self {
            capacity,
            dim,
            store: vec![0.0; capacity * dim],
            cursor: 0,
            fill: 0,
        })
    }

    /// Rebuilds a queue from its serialized parts.
    pub fn from_parts(capacity: usize, dim: usize, store: Vec<f32>, cursor: usize, fill: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 || store.len() != capacity * dim || cursor >= capacity || fill > capacity {
            return Err(Error::Shape(format!(
                "inconsistent queue state: capacity {capacity}, dim {dim}, store {}, cursor {cursor}, fill {fill}",
                store.len()
            )));
        }
        if fill < capacity && cursor != fill {
            return Err(Error::Shape(format!(
                "partially filled queue must have cursor == fill ({cursor} vs {fill})"
            )));
        }
        Ok(Self {
            capacity,
            dim,
            store,
            cursor,
            fill,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    pub fn is_full(&self) -> bool {
        self.fill == self.capacity
    }

    pub fn raw_store(&self) -> &[f32] {
        &self.store
    }

    /// Appends a unit-norm batch, evicting the oldest rows when full.
    pub fn enqueue(&mut self, batch: &EmbeddingBatch) -> Result<()> {
        let values = batch.values();
        if values.rank() != 2 || values.dim(1)? != self.dim {
            return Err(Error::Shape(format!(
                "expected B x {} embeddings, got {:?}",
                self.dim,
                values.dims()
            )));
        }
        let rows = values.dim(0)?;
        if rows > self.capacity {
            return Err(Error::BatchExceedsCapacity {
                batch: rows,
                capacity: self.capacity,
            });
        }
        if !batch.is_normalized() {
            return Err(Error::NotNormalized { row: 0, norm: f32::NAN });
        }
        batch.check_unit_norm()?;
        let data = values.detach().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        for row in data.chunks_exact(self.dim) {
            let start = self.cursor * self.dim;
            self.store[start..start + self.dim].copy_from_slice(row);
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        self.fill = (self.fill + rows).min(self.capacity);
        Ok(())
    }

    /// Valid rows, oldest first, as an owned copy.
    pub fn snapshot_rows(&self) -> Vec<f32> {
        if self.fill < self.capacity {
            self.store[..self.fill * self.dim].to_vec()
        } else {
            let split = self.cursor * self.dim;
            let mut out = Vec::with_capacity(self.store.len());
            out.extend_from_slice(&self.store[split..]);
            out.extend_from_slice(&self.store[..split]);
            out
        }
    }

    /// Valid rows as a fill x D tensor, oldest first. The tensor owns its
    /// data, so later enqueues do not affect it.
    pub fn snapshot(&self, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.snapshot_rows(), (self.fill, self.dim), device)?)
    }
}

//! Binary checkpoint container.
//!
//! ```text
//! magic "RESSLCKP" | version u32 LE | header length u64 LE | JSON header
//! | f32 LE payload | SHA-256 of everything before it (32 bytes)
//! ```
//!
//! The header lists every tensor (name and shape) in payload order:
//! student, teacher, predictor, present optimizer buffers, queue store.

use std::io::Write;
use std::path::Path;

use candle_core::Device;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::memory_queue::MemoryQueue;
use crate::model::{ModelPair, ModelSpec, TensorRecord};
use crate::trainer::{OptimizerState, Trainer};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"RESSLCKP";
const DIGEST_LEN: usize = 32;

/// Position of the counter-based random streams. Data order and every
/// augmentation draw are pure functions of `(seed, epoch, sample, view)`,
/// so this is the complete random state of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub epoch: u64,
    pub batch_in_epoch: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub step: u64,
    pub epoch: u64,
    pub config_hash: String,
    pub rng: RngState,
    pub student: Vec<TensorRecord>,
    pub teacher: Vec<TensorRecord>,
    pub predictor: Vec<TensorRecord>,
    pub optimizer: OptimizerState,
    pub queue: MemoryQueue,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct QueueMeta {
    capacity: usize,
    dim: usize,
    cursor: usize,
    fill: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    step: u64,
    epoch: u64,
    config_hash: String,
    rng: RngState,
    student: Vec<TensorMeta>,
    teacher: Vec<TensorMeta>,
    predictor: Vec<TensorMeta>,
    optimizer: Vec<(String, Option<usize>)>,
    queue: QueueMeta,
}

fn meta(records: &[TensorRecord]) -> Vec<TensorMeta> {
    records
        .iter()
        .map(|r| TensorMeta {
            name: r.name.clone(),
            shape: r.shape.clone(),
        })
        .collect()
}

impl Checkpoint {
    /// Snapshot of a trainer after `trainer.step()` completed steps.
    pub fn capture(trainer: &Trainer, config_hash: &str) -> Result<Self> {
        let pair = trainer.pair();
        let spe = trainer.steps_per_epoch();
        Ok(Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            step: trainer.step(),
            epoch: trainer.epoch(),
            config_hash: config_hash.to_string(),
            rng: RngState {
                seed: trainer.config().seed,
                epoch: trainer.step() / spe,
                batch_in_epoch: trainer.step() % spe,
            },
            student: pair.student_params.export()?,
            teacher: pair.teacher_params.export()?,
            predictor: pair.predictor_params.export()?,
            optimizer: trainer.optimizer().state()?,
            queue: trainer.queue().clone(),
        })
    }

    /// Loads this state into `trainer`. A differing config hash is refused
    /// unless `force` is set.
    pub fn restore_into(&self, trainer: &mut Trainer, config_hash: &str, force: bool) -> Result<()> {
        if self.config_hash != config_hash {
            if !force {
                return Err(Error::ConfigHashMismatch {
                    found: self.config_hash.clone(),
                    expected: config_hash.to_string(),
                });
            }
            log::warn!(
                "restoring checkpoint with config hash {} into run {} (forced)",
                self.config_hash,
                config_hash
            );
        }
        if self.rng.seed != trainer.config().seed {
            log::warn!("checkpoint seed {} differs from configured seed {}", self.rng.seed, trainer.config().seed);
        }
        let pair = trainer.pair();
        pair.student_params.import(&self.student)?;
        pair.teacher_params.import(&self.teacher)?;
        pair.predictor_params.import(&self.predictor)?;
        trainer.restore_state(self.step, self.queue.clone(), &self.optimizer)
    }

    /// Model pair with the saved weights, for evaluation.
    pub fn model_pair(&self, spec: &ModelSpec, config_hash: &str, force: bool, device: &Device) -> Result<ModelPair> {
        if self.config_hash != config_hash && !force {
            return Err(Error::ConfigHashMismatch {
                found: self.config_hash.clone(),
                expected: config_hash.to_string(),
            });
        }
        let pair = ModelPair::new(spec, 0, device)?;
        pair.student_params.import(&self.student)?;
        pair.teacher_params.import(&self.teacher)?;
        pair.predictor_params.import(&self.predictor)?;
        Ok(pair)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            step: self.step,
            epoch: self.epoch,
            config_hash: self.config_hash.clone(),
            rng: self.rng,
            student: meta(&self.student),
            teacher: meta(&self.teacher),
            predictor: meta(&self.predictor),
            optimizer: self
                .optimizer
                .buffers
                .iter()
                .map(|(n, b)| (n.clone(), b.as_ref().map(|v| v.len())))
                .collect(),
            queue: QueueMeta {
                capacity: self.queue.capacity(),
                dim: self.queue.dim(),
                cursor: self.queue.cursor(),
                fill: self.queue.fill(),
            },
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::CheckpointIntegrity(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.schema_version.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |values: &[f32]| {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for r in self.student.iter().chain(&self.teacher).chain(&self.predictor) {
            put(&r.data);
        }
        for (_, b) in &self.optimizer.buffers {
            if let Some(v) = b {
                put(v);
            }
        }
        put(self.queue.raw_store());
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let integrity = |m: &str| Error::CheckpointIntegrity(m.to_string());
        if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN {
            return Err(integrity("file is too short to be a checkpoint"));
        }
        if &bytes[..8] != MAGIC {
            return Err(integrity("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(integrity("checksum mismatch (truncated or corrupted file)"));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|e| *e <= body.len())
            .ok_or_else(|| integrity("header length exceeds file size"))?;
        let header: Header =
            serde_json::from_slice(&body[20..header_end]).map_err(|e| integrity(&format!("bad header: {e}")))?;

        let mut payload = &body[header_end..];
        let mut take = |n: usize| -> Result<Vec<f32>> {
            let nbytes = n.checked_mul(4).ok_or_else(|| integrity("tensor size overflow"))?;
            if payload.len() < nbytes {
                return Err(integrity("payload shorter than header describes"));
            }
            let (head, rest) = payload.split_at(nbytes);
            payload = rest;
            Ok(head
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect())
        };
        let mut group = |metas: &[TensorMeta]| -> Result<Vec<TensorRecord>> {
            metas
                .iter()
                .map(|m| {
                    Ok(TensorRecord {
                        name: m.name.clone(),
                        shape: m.shape.clone(),
                        data: take(m.shape.iter().product())?,
                    })
                })
                .collect()
        };
        let student = group(&header.student)?;
        let teacher = group(&header.teacher)?;
        let predictor = group(&header.predictor)?;
        let mut buffers = Vec::with_capacity(header.optimizer.len());
        for (name, len) in &header.optimizer {
            buffers.push((name.clone(), len.map(&mut take).transpose()?));
        }
        let q = &header.queue;
        let store = take(q.capacity * q.dim)?;
        if !payload.is_empty() {
            return Err(integrity("trailing bytes after payload"));
        }
        let queue = MemoryQueue::from_parts(q.capacity, q.dim, store, q.cursor, q.fill)
            .map_err(|e| integrity(&format!("queue: {e}")))?;
        Ok(Self {
            schema_version: version,
            step: header.step,
            epoch: header.epoch,
            config_hash: header.config_hash,
            rng: header.rng,
            student,
            teacher,
            predictor,
            optimizer: OptimizerState { buffers },
            queue,
        })
    }
}

/// Writes atomically: a temporary sibling file is renamed into place.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut queue = MemoryQueue::new(3, 2).unwrap();
        let batch = crate::model::EmbeddingBatch::from_unit_rows(
            candle_core::Tensor::new(&[[0.6f32, 0.8]], &candle_core::Device::Cpu).unwrap(),
        )
        .unwrap();
        queue.enqueue(&batch).unwrap();
        let rec = |n: &str, d: Vec<f32>| TensorRecord {
            name: n.into(),
            shape: vec![d.len()],
            data: d,
        };
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            step: 17,
            epoch: 2,
            config_hash: "abc".into(),
            rng: RngState {
                seed: 9,
                epoch: 2,
                batch_in_epoch: 1,
            },
            student: vec![rec("w", vec![1.0, -0.0, f32::MIN_POSITIVE])],
            teacher: vec![rec("w", vec![0.5, 2.0, 3.0])],
            predictor: vec![],
            optimizer: OptimizerState {
                buffers: vec![("w".into(), Some(vec![0.25, 1e-30, -7.0])), ("b".into(), None)],
            },
            queue,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.student[0].data[1].to_bits(), (-0.0f32).to_bits());
        assert_eq!(back.queue.cursor(), 1);
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::CheckpointIntegrity(_))
            ));
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() - 40;
        flipped[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::CheckpointIntegrity(_))));
    }

    #[test]
    fn version_mismatch_is_a_migration_error() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::CheckpointVersion { found: 2, expected: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn save_and_load_via_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("a.ckpt");
        save_checkpoint(&sample(), &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), sample());
        assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}

use candle_core::{DType, Tensor};
use rayon::prelude::*;

use crate::augmentation::{apply_view, derive_seed, eval_view, AugmentationPolicy, Image, Normalization};
use crate::error::{Error, Result};
use crate::harness::dataset::Split;
use crate::model::{Mode, ModelPair};

/// How images are turned into encoder inputs before feature extraction.
#[derive(Debug, Clone)]
pub enum FeatureTransform {
    /// Central square crop resized to `size`, then normalization.
    CenterCrop { size: usize, normalization: Normalization },
    /// A random view per image, seeded by `(seed, epoch, index)`.
    Augmented {
        policy: AugmentationPolicy,
        seed: u64,
        epoch: u64,
    },
}

impl FeatureTransform {
    fn apply(&self, image: &Image, index: usize) -> Result<Image> {
        match self {
            Self::CenterCrop { size, normalization } => eval_view(image, *size, normalization),
            Self::Augmented { policy, seed, epoch } => {
                apply_view(image, policy, derive_seed(*seed, *epoch, index as u64, 0))
            }
        }
    }
}

/// Pooled backbone features for a set of samples (row-major N x D).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub ids: Vec<usize>,
    pub labels: Vec<Option<u32>>,
    pub dim: usize,
    pub features: Vec<f32>,
}

impl FeatureBank {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Labels as plain integers; errors if any sample is unlabeled or out
    /// of range.
    pub fn require_labels(&self, num_classes: usize) -> Result<Vec<u32>> {
        self.labels
            .iter()
            .zip(&self.ids)
            .map(|(l, id)| match l {
                Some(l) if (*l as usize) < num_classes => Ok(*l),
                Some(l) => Err(Error::Eval(format!("sample {id} has label {l} outside 0..{num_classes}"))),
                None => Err(Error::Eval(format!("sample {id} is unlabeled"))),
            })
            .collect()
    }

    /// Copy with every row scaled to unit length.
    pub fn normalized(&self) -> FeatureBank {
        let mut out = self.clone();
        for row in out.features.chunks_mut(self.dim.max(1)) {
            let n = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt().max(1e-12);
            for v in row.iter_mut() {
                *v = (*v as f64 / n) as f32;
            }
        }
        out
    }
}

/// Runs the frozen student backbone (inference mode) over `split`.
pub fn extract_features(
    pair: &ModelPair,
    split: &Split,
    transform: &FeatureTransform,
    batch_size: usize,
) -> Result<FeatureBank> {
    if batch_size == 0 {
        return Err(Error::Eval("batch_size must be positive".into()));
    }
    let n = split.len();
    let mut features = Vec::new();
    let mut dim = 0;
    for start in (0..n).step_by(batch_size) {
        let idx: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let views = idx
            .par_iter()
            .map(|&i| transform.apply(&split.image(i)?, i))
            .collect::<Result<Vec<_>>>()?;
        let x = Image::batch_to_tensor(&views, pair.device())?;
        let f: Tensor = pair.student_features(&x, Mode::Eval)?.detach();
        dim = f.dim(1)?;
        features.extend(f.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?);
    }
    Ok(FeatureBank {
        ids: (0..n).collect(),
        labels: split.labels(),
        dim,
        features,
    })
}

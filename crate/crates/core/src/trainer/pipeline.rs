//! Batches of augmented views, built from a split in a seed-determined
//! order. Output depends only on `(seed, epoch, batch)`, never on the
//! number of workers.

use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augmentation::{apply_view, derive_seed, multi_crop_views, AugmentationPolicy, Image, MultiCropSpec};
use crate::error::{Error, Result};
use crate::harness::dataset::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    /// One weak teacher view, one strong student view.
    OneCrop,
    /// One weak teacher view, two strong student views.
    TwoCrop,
    /// One weak teacher view at the largest resolution, one strong
    /// student view per multi-crop resolution.
    MultiCrop,
}

/// How each image is turned into views.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPlan {
    pub mode: CropMode,
    pub teacher: AugmentationPolicy,
    pub student: AugmentationPolicy,
    pub multi_crop: Option<MultiCropSpec>,
}

impl ViewPlan {
    pub fn student_views(&self) -> usize {
        match self.mode {
            CropMode::OneCrop => 1,
            CropMode::TwoCrop => 2,
            CropMode::MultiCrop => self.multi_crop.as_ref().map_or(0, |m| m.resolutions.len()),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = self.teacher.violations("augment.teacher");
        out.extend(self.student.violations("augment.student"));
        if self.mode == CropMode::MultiCrop {
            match &self.multi_crop {
                None => out.push("crop_mode multi_crop requires an augment.multi_crop section".into()),
                Some(mc) => {
                    out.extend(mc.violations("augment.multi_crop"));
                    let largest = mc.resolutions.iter().copied().max().unwrap_or(0);
                    if self.teacher.output_size != largest {
                        out.push(format!(
                            "augment.teacher.output_size ({}) must equal the largest multi-crop resolution ({largest})",
                            self.teacher.output_size
                        ));
                    }
                }
            }
        }
        out
    }

    /// Every spatial size the model will see.
    pub fn input_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.teacher.output_size];
        match (self.mode, &self.multi_crop) {
            (CropMode::MultiCrop, Some(mc)) => sizes.extend(&mc.resolutions),
            _ => sizes.push(self.student.output_size),
        }
        sizes.sort_unstable();
        sizes.dedup();
        sizes
    }

    /// Teacher view and student views of one image.
    pub fn views(&self, image: &Image, seed: u64, epoch: u64, index: u64) -> Result<(Image, Vec<Image>)> {
        let teacher = apply_view(image, &self.teacher, derive_seed(seed, epoch, index, 0))?;
        let students = match self.mode {
            CropMode::OneCrop | CropMode::TwoCrop => (0..self.student_views())
                .map(|v| apply_view(image, &self.student, derive_seed(seed, epoch, index, 1 + v as u64)))
                .collect::<Result<Vec<_>>>()?,
            CropMode::MultiCrop => {
                let mc = self
                    .multi_crop
                    .as_ref()
                    .ok_or_else(|| Error::InvalidPolicy("multi-crop mode without a multi-crop spec".into()))?;
                multi_crop_views(image, mc, derive_seed(seed, epoch, index, 1))?
            }
        };
        Ok((teacher, students))
    }
}

/// One training batch: teacher views and each student view as N x 3 x S x S.
#[derive(Debug, Clone)]
pub struct ViewBatch {
    pub epoch: u64,
    pub batch_index: usize,
    pub sample_indices: Vec<usize>,
    pub teacher: Tensor,
    pub students: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct DataPipeline {
    split: Split,
    plan: ViewPlan,
    batch_size: usize,
    seed: u64,
    workers: usize,
    prefetch: usize,
    device: Device,
}

impl DataPipeline {
    pub fn new(split: Split, plan: ViewPlan, batch_size: usize, seed: u64, device: Device) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config(vec!["batch_size must be positive".into()]));
        }
        if split.len() < batch_size {
            return Err(Error::Dataset(format!(
                "split {} has {} images, fewer than one batch of {batch_size}",
                split.name(),
                split.len()
            )));
        }
        let v = plan.violations();
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        Ok(Self {
            split,
            plan,
            batch_size,
            seed,
            workers: 1,
            prefetch: 2,
            device,
        })
    }

    /// `workers <= 1` builds batches inline on the calling thread.
    pub fn with_workers(mut self, workers: usize, prefetch: usize) -> Self {
        self.workers = workers.max(1);
        self.prefetch = prefetch.max(1);
        self
    }

    pub fn plan(&self) -> &ViewPlan {
        &self.plan
    }

    /// Incomplete trailing batches are dropped.
    pub fn steps_per_epoch(&self) -> usize {
        self.split.len() / self.batch_size
    }

    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.split.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, epoch, u64::MAX, u64::MAX));
        order.shuffle(&mut rng);
        order
    }

    fn assemble(&self, epoch: u64, batch_index: usize, indices: Vec<usize>, parallel: bool) -> Result<ViewBatch> {
        let make = |&i: &usize| -> Result<(Image, Vec<Image>)> {
            let img = self.split.image(i)?;
            self.plan.views(&img, self.seed, epoch, i as u64)
        };
        let views: Vec<(Image, Vec<Image>)> = if parallel {
            indices.par_iter().map(make).collect::<Result<_>>()?
        } else {
            indices.iter().map(make).collect::<Result<_>>()?
        };
        let n_students = self.plan.student_views();
        let mut teacher = Vec::with_capacity(views.len());
        let mut students: Vec<Vec<Image>> = vec![Vec::with_capacity(views.len()); n_students];
        for (t, s) in views {
            teacher.push(t);
            for (slot, img) in students.iter_mut().zip(s) {
                slot.push(img);
            }
        }
        Ok(ViewBatch {
            epoch,
            batch_index,
            sample_indices: indices,
            teacher: Image::batch_to_tensor(&teacher, &self.device)?,
            students: students
                .iter()
                .map(|s| Image::batch_to_tensor(s, &self.device))
                .collect::<Result<_>>()?,
        })
    }

    pub fn batch(&self, epoch: u64, batch_index: usize) -> Result<ViewBatch> {
        let order = self.epoch_order(epoch);
        let idx = order[batch_index * self.batch_size..(batch_index + 1) * self.batch_size].to_vec();
        self.assemble(epoch, batch_index, idx, false)
    }

    /// Batches `start_batch..` of `epoch`, in order.
    pub fn epoch(&self, epoch: u64, start_batch: usize) -> EpochBatches {
        let order = self.epoch_order(epoch);
        let ranges: Vec<(usize, Vec<usize>)> = (start_batch..self.steps_per_epoch())
            .map(|b| (b, order[b * self.batch_size..(b + 1) * self.batch_size].to_vec()))
            .collect();
        if self.workers <= 1 {
            return EpochBatches {
                inner: Inner::Inline {
                    pipeline: self.clone(),
                    epoch,
                    pending: ranges.into_iter(),
                },
            };
        }
        let (tx, rx) = sync_channel(self.prefetch);
        let this = self.clone();
        let handle = std::thread::spawn(move || {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(this.workers).build() {
                Ok(p) => p,
                Err(e) => {
                    let _ = tx.send(Err(Error::Dataset(format!("cannot start data workers: {e}"))));
                    return;
                }
            };
            for (b, idx) in ranges {
                let batch = pool.install(|| this.assemble(epoch, b, idx, true));
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    return;
                }
            }
        });
        EpochBatches {
            inner: Inner::Prefetch { rx, handle: Some(handle) },
        }
    }
}

enum Inner {
    Inline {
        pipeline: DataPipeline,
        epoch: u64,
        pending: std::vec::IntoIter<(usize, Vec<usize>)>,
    },
    Prefetch {
        rx: Receiver<Result<ViewBatch>>,
        handle: Option<JoinHandle<()>>,
    },
}

pub struct EpochBatches {
    inner: Inner,
}

impl Iterator for EpochBatches {
    type Item = Result<ViewBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.inner {
            Inner::Inline { pipeline, epoch, pending } => {
                let (b, idx) = pending.next()?;
                Some(pipeline.assemble(*epoch, b, idx, false))
            }
            Inner::Prefetch { rx, handle } => match rx.recv() {
                Ok(item) => Some(item),
                Err(_) => {
                    if let Some(h) = handle.take() {
                        let _ = h.join();
                    }
                    None
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmentation::Normalization;
    use crate::harness::dataset::{ingest_dataset_with, DatasetId, SyntheticSpec};
    use std::path::Path;

    fn pipeline(mode: CropMode) -> DataPipeline {
        let ds = ingest_dataset_with(
            DatasetId::Synthetic,
            Path::new("."),
            Some(SyntheticSpec {
                train_samples: 20,
                image_size: 12,
                ..Default::default()
            }),
        )
        .unwrap();
        let plan = ViewPlan {
            mode,
            teacher: AugmentationPolicy::weak(8, Normalization::CIFAR10),
            student: AugmentationPolicy::contrastive(8, Normalization::CIFAR10),
            multi_crop: None,
        };
        DataPipeline::new(ds.train, plan, 6, 3, Device::Cpu).unwrap()
    }

    fn flat(t: &Tensor) -> Vec<f32> {
        t.flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn drops_last_partial_batch_and_shuffles_per_epoch() {
        let p = pipeline(CropMode::OneCrop);
        assert_eq!(p.steps_per_epoch(), 3);
        let e0 = p.epoch_order(0);
        let mut sorted = e0.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
        assert_ne!(e0, p.epoch_order(1));
        assert_eq!(e0, p.epoch_order(0));
    }

    #[test]
    fn worker_count_does_not_change_batches() {
        let inline: Vec<ViewBatch> = pipeline(CropMode::TwoCrop).epoch(2, 1).map(|b| b.unwrap()).collect();
        let threaded: Vec<ViewBatch> = pipeline(CropMode::TwoCrop)
            .with_workers(3, 1)
            .epoch(2, 1)
            .map(|b| b.unwrap())
            .collect();
        assert_eq!(inline.len(), 2);
        assert_eq!(threaded.len(), 2);
        for (a, b) in inline.iter().zip(&threaded) {
            assert_eq!(a.sample_indices, b.sample_indices);
            assert_eq!(flat(&a.teacher), flat(&b.teacher));
            assert_eq!(a.students.len(), 2);
            for (x, y) in a.students.iter().zip(&b.students) {
                assert_eq!(flat(x), flat(y));
            }
        }
        let direct = pipeline(CropMode::TwoCrop).batch(2, 2).unwrap();
        assert_eq!(flat(&direct.teacher), flat(&inline[1].teacher));
    }

    #[test]
    fn teacher_and_student_views_differ() {
        let b = pipeline(CropMode::TwoCrop).batch(0, 0).unwrap();
        assert_eq!(b.teacher.dims(), &[6, 3, 8, 8]);
        assert_ne!(flat(&b.students[0]), flat(&b.students[1]));
        assert_ne!(flat(&b.teacher), flat(&b.students[0]));
    }

    #[test]
    fn multi_crop_plan_requires_matching_teacher_size() {
        let mut plan = pipeline(CropMode::OneCrop).plan().clone();
        plan.mode = CropMode::MultiCrop;
        assert!(!plan.violations().is_empty());
        let mut mc = MultiCropSpec::imagenet_five_view();
        mc.resolutions = vec![8, 6];
        mc.scale_min.truncate(2);
        mc.scale_max.truncate(2);
        mc.transforms = AugmentationPolicy::contrastive(8, Normalization::CIFAR10);
        plan.multi_crop = Some(mc);
        assert!(plan.violations().is_empty(), "{:?}", plan.violations());
        assert_eq!(plan.input_sizes(), vec![6, 8]);
        assert_eq!(plan.student_views(), 2);
    }
}

//! Dataset ingestion from the canonical published on-disk layouts.
//!
//! | id            | layout under `root`                                   |
//! |---------------|-------------------------------------------------------|
//! | cifar10       | `cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin` |
//! | cifar100      | `cifar-100-binary/{train,test}.bin`                   |
//! | stl10         | `stl10_binary/{train,test}_{X,y}.bin`, `unlabeled_X.bin` |
//! | tiny_imagenet | `tiny-imagenet-200/{wnids.txt,train/,val/}`           |
//! | imagenet      | `train/<class>/*`, `val/<class>/*`                    |
//!
//! Binary layouts are verified by exact file size before any record is read.

use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{Image, Normalization};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetId {
    Cifar10,
    Cifar100,
    Stl10,
    TinyImagenet,
    Imagenet,
    /// Procedurally generated class-conditional images, for smoke runs.
    Synthetic,
}

impl DatasetId {
    pub fn num_classes(self) -> usize {
        match self {
            Self::Cifar10 | Self::Stl10 => 10,
            Self::Cifar100 => 100,
            Self::TinyImagenet => 200,
            Self::Imagenet => 1000,
            Self::Synthetic => 0,
        }
    }

    /// Training resolution: 32 px for small datasets, 64 px for medium ones.
    pub fn default_image_size(self) -> usize {
        match self {
            Self::Cifar10 | Self::Cifar100 => 32,
            Self::Stl10 | Self::TinyImagenet => 64,
            Self::Imagenet => 224,
            Self::Synthetic => 16,
        }
    }

    pub fn default_queue_capacity(self) -> usize {
        match self {
            Self::Cifar10 | Self::Cifar100 => 4096,
            Self::Stl10 | Self::TinyImagenet => 16384,
            Self::Imagenet => 65536,
            Self::Synthetic => 256,
        }
    }

    pub fn normalization(self) -> Normalization {
        match self {
            Self::Cifar10 | Self::Synthetic => Normalization::CIFAR10,
            Self::Cifar100 => Normalization::CIFAR100,
            Self::Stl10 => Normalization {
                mean: [0.4408, 0.4279, 0.3868],
                std: [0.2683, 0.2610, 0.2687],
            },
            Self::TinyImagenet => Normalization {
                mean: [0.4802, 0.4481, 0.3975],
                std: [0.2770, 0.2691, 0.2821],
            },
            Self::Imagenet => Normalization::IMAGENET,
        }
    }

    /// Expected (train, test, unlabeled) cardinalities.
    pub fn expected_sizes(self) -> Option<(usize, usize, usize)> {
        match self {
            Self::Cifar10 | Self::Cifar100 => Some((50_000, 10_000, 0)),
            Self::Stl10 => Some((5_000, 8_000, 100_000)),
            Self::TinyImagenet => Some((100_000, 10_000, 0)),
            Self::Imagenet => Some((1_281_167, 50_000, 0)),
            Self::Synthetic => None,
        }
    }
}

/// Parameters of the procedural dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub image_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            train_samples: 256,
            test_samples: 128,
            image_size: 16,
            seed: 0,
        }
    }
}

trait Reader: Send + Sync + std::fmt::Debug {
    fn len(&self) -> usize;
    fn image(&self, index: usize) -> Result<Image>;
    fn label(&self, index: usize) -> Option<u32>;
}

/// Random-access view over one split. Cheap to clone and safe to read
/// from many threads.
#[derive(Debug, Clone)]
pub struct Split {
    name: String,
    parts: Vec<Arc<dyn Reader>>,
    num_classes: usize,
}

impl Split {
    fn new(name: &str, reader: Arc<dyn Reader>, num_classes: usize) -> Self {
        Self {
            name: name.to_string(),
            parts: vec![reader],
            num_classes,
        }
    }

    /// Concatenation of two splits (e.g. labeled + unlabeled pretraining data).
    pub fn concat(&self, other: &Split, name: &str) -> Split {
        let mut parts = self.parts.clone();
        parts.extend(other.parts.iter().cloned());
        Split {
            name: name.to_string(),
            parts,
            num_classes: self.num_classes.max(other.num_classes),
        }
    }

    /// First `n` samples.
    pub fn truncated(&self, n: usize) -> Split {
        if n >= self.len() {
            return self.clone();
        }
        let inner = self.clone();
        Split {
            name: format!("{}[..{n}]", self.name),
            parts: vec![Arc::new(Truncated { inner, len: n })],
            num_classes: self.num_classes,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.parts.iter().map(|p| p.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn locate(&self, mut index: usize) -> Result<(&Arc<dyn Reader>, usize)> {
        for p in &self.parts {
            if index < p.len() {
                return Ok((p, index));
            }
            index -= p.len();
        }
        Err(Error::Dataset(format!("index out of range for split {}", self.name)))
    }

    pub fn image(&self, index: usize) -> Result<Image> {
        let (p, i) = self.locate(index)?;
        p.image(i)
    }

    pub fn label(&self, index: usize) -> Option<u32> {
        self.locate(index).ok().and_then(|(p, i)| p.label(i))
    }

    pub fn labels(&self) -> Vec<Option<u32>> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

#[derive(Debug)]
struct Truncated {
    inner: Split,
    len: usize,
}

impl Reader for Truncated {
    fn len(&self) -> usize {
        self.len
    }
    fn image(&self, index: usize) -> Result<Image> {
        self.inner.image(index)
    }
    fn label(&self, index: usize) -> Option<u32> {
        self.inner.label(index)
    }
}

/// The splits of one dataset.
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub id: DatasetId,
    pub train: Split,
    pub test: Split,
    pub unlabeled: Option<Split>,
}

impl DatasetSplits {
    /// Images used for self-supervised pretraining. STL-10 pretrains on
    /// the labeled and unlabeled images together.
    pub fn pretrain(&self) -> Split {
        match &self.unlabeled {
            Some(u) => self.train.concat(u, "train+unlabeled"),
            None => self.train.clone(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }
}

/// Pixel ordering inside a binary record.
#[derive(Debug, Clone, Copy)]
enum PixelOrder {
    /// Channel planes, row-major (CIFAR).
    PlanarRowMajor,
    /// Channel planes, column-major (STL-10).
    PlanarColumnMajor,
}

#[derive(Debug)]
struct BinaryFile {
    file: File,
    count: usize,
}

#[derive(Debug)]
struct BinaryRecords {
    files: Vec<BinaryFile>,
    label_bytes: usize,
    label_offset: usize,
    side: usize,
    order: PixelOrder,
    /// Labels stored out-of-line (STL-10), zero-based.
    labels: Option<Vec<u32>>,
}

impl BinaryRecords {
    fn record_len(&self) -> usize {
        self.label_bytes + self.side * self.side * 3
    }

    fn locate(&self, mut index: usize) -> (&BinaryFile, usize) {
        for f in &self.files {
            if index < f.count {
                return (f, index);
            }
            index -= f.count;
        }
        panic!("record index out of range");
    }
}

impl Reader for BinaryRecords {
    fn len(&self) -> usize {
        self.files.iter().map(|f| f.count).sum()
    }

    fn image(&self, index: usize) -> Result<Image> {
        if index >= self.len() {
            return Err(Error::Dataset(format!("record {index} out of range")));
        }
        let (f, i) = self.locate(index);
        let mut buf = vec![0u8; self.record_len()];
        f.file
            .read_exact_at(&mut buf, (i * self.record_len()) as u64)
            .map_err(|e| Error::Dataset(format!("reading record {index}: {e}")))?;
        let px = &buf[self.label_bytes..];
        let s = self.side;
        match self.order {
            PixelOrder::PlanarRowMajor => Image::from_planar_u8(3, s, s, px),
            PixelOrder::PlanarColumnMajor => {
                let mut out = vec![0u8; px.len()];
                for c in 0..3 {
                    for x in 0..s {
                        for y in 0..s {
                            out[c * s * s + y * s + x] = px[c * s * s + x * s + y];
                        }
                    }
                }
                Image::from_planar_u8(3, s, s, &out)
            }
        }
    }

    fn label(&self, index: usize) -> Option<u32> {
        if let Some(labels) = &self.labels {
            return labels.get(index).copied();
        }
        if self.label_bytes == 0 || index >= self.len() {
            return None;
        }
        let (f, i) = self.locate(index);
        let mut b = [0u8; 1];
        f.file
            .read_exact_at(&mut b, (i * self.record_len() + self.label_offset) as u64)
            .ok()?;
        Some(b[0] as u32)
    }
}

#[derive(Debug)]
struct FileList {
    entries: Vec<(PathBuf, u32)>,
}

impl Reader for FileList {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn image(&self, index: usize) -> Result<Image> {
        let (path, _) = self
            .entries
            .get(index)
            .ok_or_else(|| Error::Dataset(format!("image {index} out of range")))?;
        let decoded = image::open(path)
            .map_err(|e| Error::Dataset(format!("decoding {}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = decoded.dimensions();
        Image::from_rgb8(w as usize, h as usize, decoded.as_raw())
    }

    fn label(&self, index: usize) -> Option<u32> {
        self.entries.get(index).map(|(_, l)| *l)
    }
}

#[derive(Debug)]
struct SyntheticReader {
    spec: SyntheticSpec,
    split_salt: u64,
    len: usize,
}

impl SyntheticReader {
    fn class_of(&self, index: usize) -> u32 {
        (index % self.spec.classes) as u32
    }
}

impl Reader for SyntheticReader {
    fn len(&self) -> usize {
        self.len
    }

    /// Class `c` is an oriented stripe pattern with a class-specific tint;
    /// phase, contrast, brightness and pixel noise vary per sample.
    fn image(&self, index: usize) -> Result<Image> {
        let s = self.spec.image_size;
        let classes = self.spec.classes.max(1) as f32;
        let c = self.class_of(index) as f32;
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.spec.seed ^ self.split_salt.wrapping_mul(0x9E37_79B9) ^ (index as u64).wrapping_mul(0x2545_F491_4F6C_DD1D),
        );
        let angle = std::f32::consts::PI * c / classes;
        let (dx, dy) = (angle.cos(), angle.sin());
        let freq = 2.0 * std::f32::consts::PI / (s as f32 / 3.0);
        let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
        let contrast: f32 = rng.gen_range(0.25..0.45);
        let brightness: f32 = rng.gen_range(0.4..0.6);
        let hue = c / classes;
        let tint = [
            0.5 + 0.5 * (std::f32::consts::TAU * hue).cos(),
            0.5 + 0.5 * (std::f32::consts::TAU * (hue + 1.0 / 3.0)).cos(),
            0.5 + 0.5 * (std::f32::consts::TAU * (hue + 2.0 / 3.0)).cos(),
        ];
        let mut data = vec![0f32; 3 * s * s];
        for y in 0..s {
            for x in 0..s {
                let t = ((x as f32 * dx + y as f32 * dy) * freq + phase).sin();
                for ch in 0..3 {
                    let noise: f32 = rng.gen_range(-0.05..0.05);
                    let v = brightness + contrast * t * (0.5 + tint[ch]) + noise;
                    data[ch * s * s + y * s + x] = v.clamp(0.0, 1.0);
                }
            }
        }
        Image::new(3, s, s, data)
    }

    fn label(&self, index: usize) -> Option<u32> {
        (index < self.len).then(|| self.class_of(index))
    }
}

fn open_sized(path: &Path, record_len: usize, expected: usize) -> Result<BinaryFile> {
    let file = File::open(path).map_err(|e| Error::Dataset(format!("cannot open {}: {e}", path.display())))?;
    let size = file
        .metadata()
        .map_err(|e| Error::Dataset(format!("cannot stat {}: {e}", path.display())))?
        .len() as usize;
    if size != record_len * expected {
        return Err(Error::Dataset(format!(
            "{}: expected {expected} records ({} bytes), found {} bytes ({} records)",
            path.display(),
            record_len * expected,
            size,
            size / record_len
        )));
    }
    Ok(BinaryFile { file, count: expected })
}

fn check_count(split: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dataset(format!(
            "{split} split: expected {expected} images, found {found}"
        )));
    }
    Ok(())
}

fn read_stl_labels(path: &Path, expected: usize) -> Result<Vec<u32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    check_count(&path.display().to_string(), expected, bytes.len())?;
    bytes
        .iter()
        .map(|&b| {
            if (1..=10).contains(&b) {
                Ok(b as u32 - 1)
            } else {
                Err(Error::Dataset(format!("{}: label {b} outside 1..=10", path.display())))
            }
        })
        .collect()
}

fn list_class_dirs(dir: &Path) -> Result<Vec<String>> {
    let mut classes: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    classes.sort();
    Ok(classes)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .map(|x| {
                    let x = x.to_string_lossy().to_ascii_lowercase();
                    x == "jpeg" || x == "jpg" || x == "png"
                })
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

fn image_folder(dir: &Path, classes: &[String], nested_images_dir: bool) -> Result<Vec<(PathBuf, u32)>> {
    let mut entries = Vec::new();
    for (label, class) in classes.iter().enumerate() {
        let mut d = dir.join(class);
        if nested_images_dir {
            d = d.join("images");
        }
        for f in list_images(&d)? {
            entries.push((f, label as u32));
        }
    }
    Ok(entries)
}

/// Opens every split of `id` under `root`, verifying cardinalities.
pub fn ingest_dataset(id: DatasetId, root: &Path) -> Result<DatasetSplits> {
    ingest_dataset_with(id, root, None)
}

/// As [`ingest_dataset`]; `synthetic` parameterizes the procedural dataset.
pub fn ingest_dataset_with(id: DatasetId, root: &Path, synthetic: Option<SyntheticSpec>) -> Result<DatasetSplits> {
    if id != DatasetId::Synthetic && !root.is_dir() {
        return Err(Error::Dataset(format!(
            "dataset root {} does not exist or is not a directory",
            root.display()
        )));
    }
    match id {
        DatasetId::Cifar10 => {
            let dir = root.join("cifar-10-batches-bin");
            let rec = 1 + 3072;
            let train_files = (1..=5)
                .map(|i| open_sized(&dir.join(format!("data_batch_{i}.bin")), rec, 10_000))
                .collect::<Result<Vec<_>>>()?;
            let test_files = vec![open_sized(&dir.join("test_batch.bin"), rec, 10_000)?];
            let mk = |files| BinaryRecords {
                files,
                label_bytes: 1,
                label_offset: 0,
                side: 32,
                order: PixelOrder::PlanarRowMajor,
                labels: None,
            };
            Ok(DatasetSplits {
                id,
                train: Split::new("train", Arc::new(mk(train_files)), 10),
                test: Split::new("test", Arc::new(mk(test_files)), 10),
                unlabeled: None,
            })
        }
        DatasetId::Cifar100 => {
            let dir = root.join("cifar-100-binary");
            let rec = 2 + 3072;
            let mk = |file| BinaryRecords {
                files: vec![file],
                label_bytes: 2,
                label_offset: 1,
                side: 32,
                order: PixelOrder::PlanarRowMajor,
                labels: None,
            };
            Ok(DatasetSplits {
                id,
                train: Split::new("train", Arc::new(mk(open_sized(&dir.join("train.bin"), rec, 50_000)?)), 100),
                test: Split::new("test", Arc::new(mk(open_sized(&dir.join("test.bin"), rec, 10_000)?)), 100),
                unlabeled: None,
            })
        }
        DatasetId::Stl10 => {
            let dir = root.join("stl10_binary");
            let rec = 96 * 96 * 3;
            let mk = |file, labels| BinaryRecords {
                files: vec![file],
                label_bytes: 0,
                label_offset: 0,
                side: 96,
                order: PixelOrder::PlanarColumnMajor,
                labels,
            };
            let train = mk(
                open_sized(&dir.join("train_X.bin"), rec, 5_000)?,
                Some(read_stl_labels(&dir.join("train_y.bin"), 5_000)?),
            );
            let test = mk(
                open_sized(&dir.join("test_X.bin"), rec, 8_000)?,
                Some(read_stl_labels(&dir.join("test_y.bin"), 8_000)?),
            );
            let unlabeled = mk(open_sized(&dir.join("unlabeled_X.bin"), rec, 100_000)?, None);
            Ok(DatasetSplits {
                id,
                train: Split::new("train", Arc::new(train), 10),
                test: Split::new("test", Arc::new(test), 10),
                unlabeled: Some(Split::new("unlabeled", Arc::new(unlabeled), 10)),
            })
        }
        DatasetId::TinyImagenet => {
            let dir = root.join("tiny-imagenet-200");
            let wnids_text = std::fs::read_to_string(dir.join("wnids.txt"))
                .map_err(|e| Error::Dataset(format!("cannot read wnids.txt: {e}")))?;
            let wnids: Vec<String> = wnids_text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect();
            check_count("wnids", 200, wnids.len())?;
            let train = image_folder(&dir.join("train"), &wnids, true)?;
            check_count("train", 100_000, train.len())?;
            let annotations = std::fs::read_to_string(dir.join("val").join("val_annotations.txt"))
                .map_err(|e| Error::Dataset(format!("cannot read val_annotations.txt: {e}")))?;
            let mut test = Vec::new();
            for line in annotations.lines().filter(|l| !l.trim().is_empty()) {
                let mut cols = line.split('\t');
                let (file, wnid) = (cols.next().unwrap_or(""), cols.next().unwrap_or(""));
                let label = wnids
                    .iter()
                    .position(|w| w == wnid)
                    .ok_or_else(|| Error::Dataset(format!("unknown wnid {wnid} in val annotations")))?;
                test.push((dir.join("val").join("images").join(file), label as u32));
            }
            check_count("val", 10_000, test.len())?;
            Ok(DatasetSplits {
                id,
                train: Split::new("train", Arc::new(FileList { entries: train }), 200),
                test: Split::new("test", Arc::new(FileList { entries: test }), 200),
                unlabeled: None,
            })
        }
        DatasetId::Imagenet => {
            let classes = list_class_dirs(&root.join("train"))?;
            check_count("classes", 1000, classes.len())?;
            let train = image_folder(&root.join("train"), &classes, false)?;
            check_count("train", 1_281_167, train.len())?;
            let test = image_folder(&root.join("val"), &classes, false)?;
            check_count("val", 50_000, test.len())?;
            Ok(DatasetSplits {
                id,
                train: Split::new("train", Arc::new(FileList { entries: train }), 1000),
                test: Split::new("test", Arc::new(FileList { entries: test }), 1000),
                unlabeled: None,
            })
        }
        DatasetId::Synthetic => {
            let spec = synthetic.unwrap_or_default();
            if spec.classes == 0 || spec.image_size == 0 || spec.train_samples == 0 || spec.test_samples == 0 {
                return Err(Error::Dataset(format!("invalid synthetic dataset parameters {spec:?}")));
            }
            let mk = |salt, len| SyntheticReader {
                spec,
                split_salt: salt,
                len,
            };
            Ok(DatasetSplits {
                id,
                train: Split::new("train", Arc::new(mk(1, spec.train_samples)), spec.classes),
                test: Split::new("test", Arc::new(mk(2, spec.test_samples)), spec.classes),
                unlabeled: None,
            })
        }
    }
}

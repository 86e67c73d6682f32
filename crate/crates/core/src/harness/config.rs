//! TOML experiment configuration.
//!
//! Every key is optional except `run.dataset`; missing values resolve to
//! the dataset's published defaults and the fully resolved document is
//! written next to the run output. Unknown keys and every constraint
//! violation are reported together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augmentation::{AugmentationPolicy, MultiCropSpec};
use crate::ema::{EmaConfig, MomentumSchedule};
use crate::error::{Error, Result};
use crate::evaluation::ProbeProtocol;
use crate::harness::dataset::{DatasetId, SyntheticSpec};
use crate::loss::{TemperaturePair, WarmupSchedule};
use crate::model::{BackboneFamily, BackboneSpec, HeadSpec, ModelSpec};
use crate::trainer::{CropMode, OptimizerConfig, OptimizerKind, TrainConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    pub deterministic: bool,
    /// Data-loading workers; 1 builds batches on the training thread.
    pub workers: usize,
    pub prefetch: usize,
    pub log_every: u64,
    /// 0 disables periodic checkpoints (the final one is always written).
    pub checkpoint_every_epochs: u64,
    /// Train on the first `n` pretraining images only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_subset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub probe: ProbeProtocol,
    pub knn_k: usize,
    pub knn_temperature: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn dataset(&self) -> DatasetId {
        self.train.dataset
    }

    pub fn image_size(&self) -> usize {
        self.train.teacher_aug.output_size
    }

    /// Every constraint violation, including cross-field ones.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            out.push(format!(
                "schema_version {} is not recognized (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        out.extend(self.train.violations());
        out.extend(self.eval.probe.violations());
        if self.eval.knn_k == 0 {
            out.push("eval.knn_k must be positive".into());
        }
        if !(self.eval.knn_temperature > 0.0) {
            out.push(format!("eval.knn_temperature must be positive, got {}", self.eval.knn_temperature));
        }
        if self.eval.batch_size == 0 {
            out.push("eval.batch_size must be positive".into());
        }
        if self.run.log_every == 0 {
            out.push("run.log_every must be positive".into());
        }
        if self.run.workers == 0 {
            out.push("run.workers must be positive".into());
        }
        if self.run.train_subset == Some(0) {
            out.push("run.train_subset must be positive".into());
        }
        if self.train.dataset == DatasetId::Synthetic && self.synthetic.is_none() {
            out.push("the synthetic dataset requires a [synthetic] section".into());
        }
        out
    }

    /// SHA-256 over everything that shapes the optimization trajectory.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            train: &'a TrainConfig,
            synthetic: &'a Option<SyntheticSpec>,
            train_subset: Option<usize>,
        }
        let json = serde_json::to_vec(&Hashed {
            train: &self.train,
            synthetic: &self.synthetic,
            train_subset: self.run.train_subset,
        })
        .expect("config serializes");
        format!("{:x}", Sha256::digest(json))
    }

    /// The configuration in input form with every default filled in;
    /// parsing the result yields an identical config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(&self.to_raw())
            .map_err(|e| Error::Config(vec![format!("cannot serialize config: {e}")]))
    }

    fn to_raw(&self) -> RawConfig {
        let t = &self.train;
        let b = &t.model.backbone;
        let p = &self.eval.probe;
        RawConfig {
            schema_version: Some(self.schema_version),
            run: RawRun {
                dataset: Some(t.dataset),
                data_root: Some(self.run.data_root.clone()),
                out_dir: Some(self.run.out_dir.clone()),
                seed: Some(t.seed),
                deterministic: Some(self.run.deterministic),
                workers: Some(self.run.workers),
                prefetch: Some(self.run.prefetch),
                log_every: Some(self.run.log_every),
                checkpoint_every_epochs: Some(self.run.checkpoint_every_epochs),
                train_subset: self.run.train_subset,
            },
            synthetic: self.synthetic,
            model: RawModel {
                backbone: Some(b.family),
                small_input_stem: Some(b.small_input_stem),
                base_width: Some(b.base_width),
                input_size: Some(self.image_size()),
                projector_hidden_dim: Some(t.model.projector.hidden_dim),
                projector_out_dim: Some(t.model.projector.out_dim),
                predictor: Some(t.model.predictor.is_some()),
                predictor_hidden_dim: t.model.predictor.map(|h| h.hidden_dim),
            },
            train: RawTrain {
                epochs: Some(t.epochs),
                batch_size: Some(t.batch_size),
                base_lr: Some(t.base_lr),
                optimizer: Some(t.optimizer.kind),
                momentum: Some(t.optimizer.momentum),
                weight_decay: Some(t.optimizer.weight_decay),
                lars_eta: Some(t.optimizer.eta),
                lr_warmup_epochs: Some(t.lr_warmup_epochs),
                crop_mode: Some(t.crop_mode),
                queue_capacity: Some(t.queue_capacity),
                queue_min_fill: Some(t.queue_min_fill),
            },
            loss: RawLoss {
                tau_s: Some(t.temps.tau_s),
                tau_t: Some(t.temps.tau_t),
                allow_unsharpened_teacher: Some(t.allow_unsharpened_teacher),
                infonce_warmup: Some(t.infonce_warmup.is_some()),
                warmup_steps: t.infonce_warmup.map(|w| w.warmup_steps),
            },
            ema: RawEma {
                m0: Some(t.ema.m0),
                schedule: Some(t.ema.schedule),
            },
            augment: RawAugment {
                teacher: Some(t.teacher_aug.clone()),
                student: Some(t.student_aug.clone()),
                multi_crop: t.multi_crop.clone(),
            },
            eval: RawEval {
                probe_epochs: Some(p.epochs),
                probe_lr: Some(p.lr),
                probe_weight_decay: Some(p.weight_decay),
                probe_momentum: Some(p.momentum),
                probe_milestones: Some(p.milestones.clone()),
                probe_decay: Some(p.decay),
                probe_batch_size: Some(p.batch_size),
                probe_train_augment: Some(p.train_augment),
                knn_k: Some(self.eval.knn_k),
                knn_temperature: Some(self.eval.knn_temperature),
                batch_size: Some(self.eval.batch_size),
            },
        }
    }

    /// Writes the resolved configuration to `out_dir/config.resolved.toml`.
    pub fn write_resolved(&self, out_dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let path = out_dir.join("config.resolved.toml");
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RawRun {
    dataset: Option<DatasetId>,
    data_root: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    deterministic: Option<bool>,
    workers: Option<usize>,
    prefetch: Option<usize>,
    log_every: Option<u64>,
    checkpoint_every_epochs: Option<u64>,
    train_subset: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RawModel {
    backbone: Option<BackboneFamily>,
    small_input_stem: Option<bool>,
    base_width: Option<usize>,
    input_size: Option<usize>,
    projector_hidden_dim: Option<usize>,
    projector_out_dim: Option<usize>,
    predictor: Option<bool>,
    predictor_hidden_dim: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RawTrain {
    epochs: Option<u64>,
    batch_size: Option<usize>,
    base_lr: Option<f64>,
    optimizer: Option<OptimizerKind>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    lars_eta: Option<f64>,
    lr_warmup_epochs: Option<u64>,
    crop_mode: Option<CropMode>,
    queue_capacity: Option<usize>,
    queue_min_fill: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RawLoss {
    tau_s: Option<f64>,
    tau_t: Option<f64>,
    allow_unsharpened_teacher: Option<bool>,
    infonce_warmup: Option<bool>,
    warmup_steps: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RawEma {
    m0: Option<f64>,
    schedule: Option<MomentumSchedule>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RawAugment {
    teacher: Option<AugmentationPolicy>,
    student: Option<AugmentationPolicy>,
    multi_crop: Option<MultiCropSpec>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RawEval {
    probe_epochs: Option<u64>,
    probe_lr: Option<f64>,
    probe_weight_decay: Option<f64>,
    probe_momentum: Option<f64>,
    probe_milestones: Option<Vec<u64>>,
    probe_decay: Option<f64>,
    probe_batch_size: Option<usize>,
    probe_train_augment: Option<bool>,
    knn_k: Option<usize>,
    knn_temperature: Option<f64>,
    batch_size: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RawConfig {
    schema_version: Option<u32>,
    run: RawRun,
    synthetic: Option<SyntheticSpec>,
    model: RawModel,
    train: RawTrain,
    loss: RawLoss,
    ema: RawEma,
    augment: RawAugment,
    eval: RawEval,
}

/// Overrides applied after parsing (command-line flags).
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub out_dir: Option<PathBuf>,
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config_with(path, &Overrides::default())
}

pub fn parse_config_with(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, overrides)
}

pub fn parse_config_str(text: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut unknown = Vec::new();
    let de = toml::Deserializer::new(text);
    let parsed: std::result::Result<RawConfig, _> =
        serde_ignored::deserialize(de, |p| unknown.push(format!("unknown key `{p}`")));
    let raw = match parsed {
        Ok(r) => r,
        Err(e) => {
            unknown.push(e.to_string().trim().to_string());
            return Err(Error::Config(unknown));
        }
    };
    let mut violations = unknown;
    let cfg = resolve(raw, overrides, &mut violations);
    if let Some(cfg) = &cfg {
        violations.extend(cfg.violations());
    }
    match cfg {
        Some(cfg) if violations.is_empty() => Ok(cfg),
        _ => Err(Error::Config(violations)),
    }
}

fn resolve(raw: RawConfig, ov: &Overrides, violations: &mut Vec<String>) -> Option<ExperimentConfig> {
    let Some(dataset) = raw.run.dataset else {
        violations.push("run.dataset is required".into());
        return None;
    };
    let large = dataset == DatasetId::Imagenet;
    let synthetic = raw.synthetic.or((dataset == DatasetId::Synthetic).then(SyntheticSpec::default));
    let size = raw.model.input_size.unwrap_or(match (dataset, &synthetic) {
        (DatasetId::Synthetic, Some(s)) => s.image_size,
        _ => dataset.default_image_size(),
    });
    let norm = dataset.normalization();

    let family = raw.model.backbone.unwrap_or(if large {
        BackboneFamily::Resnet50
    } else {
        BackboneFamily::Resnet18
    });
    let width = raw.model.base_width.unwrap_or(64);
    let backbone = BackboneSpec::with_width(family, raw.model.small_input_stem.unwrap_or(size <= 64), width);
    let d = backbone.feature_dim;
    let proj_out = raw.model.projector_out_dim.unwrap_or(if large { 256 } else { 128 });
    let proj_hidden = raw.model.projector_hidden_dim.unwrap_or(if large { 4096 } else { d });
    let projector = HeadSpec::new(d, proj_hidden, proj_out);
    let predictor = raw.model.predictor.unwrap_or(true).then(|| {
        HeadSpec::new(
            proj_out,
            raw.model.predictor_hidden_dim.unwrap_or(if large { 4096 } else { d }),
            proj_out,
        )
    });

    let crop_mode = raw.train.crop_mode.unwrap_or(CropMode::OneCrop);
    let multi_crop = match (raw.augment.multi_crop, crop_mode) {
        (Some(mc), _) => Some(mc),
        (None, CropMode::MultiCrop) if large => Some(MultiCropSpec::imagenet_five_view()),
        _ => None,
    };
    let teacher_aug = raw.augment.teacher.unwrap_or_else(|| AugmentationPolicy::weak(size, norm));
    let student_aug = raw.augment.student.unwrap_or_else(|| {
        if large {
            AugmentationPolicy::contrastive_imagenet(size)
        } else {
            AugmentationPolicy::contrastive(size, norm)
        }
    });
    let mut input_sizes = vec![teacher_aug.output_size, student_aug.output_size];
    if let Some(mc) = &multi_crop {
        input_sizes.extend(&mc.resolutions);
    }
    input_sizes.sort_unstable();
    input_sizes.dedup();

    let batch_size = raw.train.batch_size.unwrap_or(if large { 1024 } else { 256 });
    let optimizer_kind = raw.train.optimizer.unwrap_or(if large {
        OptimizerKind::Lars
    } else {
        OptimizerKind::SgdMomentum
    });
    let mut optimizer = match optimizer_kind {
        OptimizerKind::SgdMomentum => OptimizerConfig::sgd(0.9, 5e-4),
        OptimizerKind::Lars => OptimizerConfig::lars(0.9, 1e-6),
    };
    if let Some(m) = raw.train.momentum {
        optimizer.momentum = m;
    }
    if let Some(wd) = raw.train.weight_decay {
        optimizer.weight_decay = wd;
    }
    if let Some(eta) = raw.train.lars_eta {
        optimizer.eta = eta;
    }
    let base_lr = raw.train.base_lr.unwrap_or(match optimizer_kind {
        OptimizerKind::SgdMomentum => 0.06,
        OptimizerKind::Lars => 0.6,
    });

    let temps = TemperaturePair {
        tau_s: raw.loss.tau_s.unwrap_or(0.1),
        tau_t: raw.loss.tau_t.unwrap_or(if large { 0.03 } else { 0.04 }),
    };
    let infonce_warmup = raw
        .loss
        .infonce_warmup
        .unwrap_or(false)
        .then(|| WarmupSchedule::linear(raw.loss.warmup_steps.unwrap_or(0)));
    if raw.loss.warmup_steps.is_some() && infonce_warmup.is_none() {
        violations.push("loss.warmup_steps is set but loss.infonce_warmup is false".into());
    }
    let ema = EmaConfig {
        m0: raw.ema.m0.unwrap_or(if large { 0.996 } else { 0.99 }),
        schedule: raw.ema.schedule.unwrap_or(if large {
            MomentumSchedule::CosineToOne
        } else {
            MomentumSchedule::Constant
        }),
        // filled from the run length when training starts
        total_steps: 0,
    };

    let train = TrainConfig {
        dataset,
        model: ModelSpec {
            backbone,
            projector,
            predictor,
            input_sizes,
        },
        temps,
        allow_unsharpened_teacher: raw.loss.allow_unsharpened_teacher.unwrap_or(false),
        queue_capacity: raw.train.queue_capacity.unwrap_or(dataset.default_queue_capacity()),
        queue_min_fill: raw.train.queue_min_fill.unwrap_or(batch_size),
        ema,
        epochs: raw.train.epochs.unwrap_or(200),
        batch_size,
        base_lr,
        optimizer,
        lr_warmup_epochs: raw.train.lr_warmup_epochs.unwrap_or(10),
        crop_mode,
        infonce_warmup,
        seed: ov.seed.or(raw.run.seed).unwrap_or(0),
        teacher_aug,
        student_aug,
        multi_crop,
    };

    let default_probe = ProbeProtocol::default();
    let eval = EvalConfig {
        probe: ProbeProtocol {
            epochs: raw.eval.probe_epochs.unwrap_or(default_probe.epochs),
            lr: raw.eval.probe_lr.unwrap_or(default_probe.lr),
            weight_decay: raw.eval.probe_weight_decay.unwrap_or(default_probe.weight_decay),
            momentum: raw.eval.probe_momentum.unwrap_or(default_probe.momentum),
            milestones: raw.eval.probe_milestones.unwrap_or(default_probe.milestones),
            decay: raw.eval.probe_decay.unwrap_or(default_probe.decay),
            batch_size: raw.eval.probe_batch_size.unwrap_or(default_probe.batch_size),
            train_augment: raw.eval.probe_train_augment.unwrap_or(default_probe.train_augment),
        },
        knn_k: raw.eval.knn_k.unwrap_or(20),
        knn_temperature: raw.eval.knn_temperature.unwrap_or(0.1),
        batch_size: raw.eval.batch_size.unwrap_or(256),
    };

    let deterministic = ov.deterministic || raw.run.deterministic.unwrap_or(false);
    let workers = if deterministic {
        1
    } else {
        raw.run
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    };
    let run = RunConfig {
        data_root: raw.run.data_root.unwrap_or_else(|| PathBuf::from("data")),
        out_dir: ov
            .out_dir
            .clone()
            .or(raw.run.out_dir)
            .unwrap_or_else(|| PathBuf::from("runs").join(format!("{dataset:?}").to_lowercase())),
        deterministic,
        workers,
        prefetch: raw.run.prefetch.unwrap_or(4),
        log_every: raw.run.log_every.unwrap_or(50),
        checkpoint_every_epochs: raw.run.checkpoint_every_epochs.unwrap_or(10),
        train_subset: raw.run.train_subset,
    };

    Some(ExperimentConfig {
        schema_version: raw.schema_version.unwrap_or(CONFIG_SCHEMA_VERSION),
        run,
        synthetic: if dataset == DatasetId::Synthetic { synthetic } else { None },
        train,
        eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config_str(text, &Overrides::default())
    }

    fn messages(r: Result<ExperimentConfig>) -> Vec<String> {
        match r {
            Err(Error::Config(v)) => v,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_cifar10_resolves_published_defaults() {
        let cfg = parse("[run]\ndataset = \"cifar10\"\n").unwrap();
        let t = &cfg.train;
        assert_eq!(t.epochs, 200);
        assert_eq!(t.queue_capacity, 4096);
        assert_eq!(t.ema.m0, 0.99);
        assert_eq!((t.temps.tau_s, t.temps.tau_t), (0.1, 0.04));
        assert!(t.model.predictor.is_some());
        assert!(t.infonce_warmup.is_none());
        assert!(t.model.backbone.small_input_stem);
        assert_eq!(t.model.backbone.feature_dim, 512);
        assert_eq!(t.model.projector, HeadSpec::new(512, 512, 128));
        assert_eq!(t.optimizer, OptimizerConfig::sgd(0.9, 5e-4));
        assert_eq!(t.base_lr, 0.06);
        assert_eq!(t.lr_warmup_epochs, 10);
        assert_eq!(t.teacher_aug.output_size, 32);
        assert_eq!(cfg.eval.probe, ProbeProtocol::default());
        assert_eq!(cfg.run.log_every, 50);
        // resolved document round-trips
        let echoed = cfg.to_toml().unwrap();
        assert_eq!(parse(&echoed).unwrap(), cfg);
    }

    #[test]
    fn medium_and_large_defaults() {
        let stl = parse("[run]\ndataset = \"stl10\"\n").unwrap();
        assert_eq!(stl.train.queue_capacity, 16384);
        assert_eq!(stl.image_size(), 64);
        let inet = parse("[run]\ndataset = \"imagenet\"\n[train]\ncrop_mode = \"multi_crop\"\n").unwrap();
        assert_eq!(inet.train.optimizer, OptimizerConfig::lars(0.9, 1e-6));
        assert_eq!(inet.train.batch_size, 1024);
        assert_eq!(inet.train.base_lr, 0.6);
        assert_eq!(inet.train.queue_capacity, 65536);
        assert_eq!(inet.train.temps.tau_t, 0.03);
        assert_eq!(inet.train.ema.schedule, MomentumSchedule::CosineToOne);
        assert_eq!(inet.train.model.projector, HeadSpec::new(2048, 4096, 256));
        assert_eq!(inet.train.model.predictor, Some(HeadSpec::new(256, 4096, 256)));
        assert!(!inet.train.model.backbone.small_input_stem);
        assert_eq!(inet.train.model.input_sizes, vec![96, 128, 160, 192, 224]);
    }

    #[test]
    fn unsharpened_teacher_is_rejected() {
        let v = messages(parse("[run]\ndataset = \"cifar10\"\n[loss]\ntau_s = 0.1\ntau_t = 0.2\n"));
        assert!(v.iter().any(|m| m.contains("sharper")), "{v:?}");
    }

    #[test]
    fn every_violation_is_listed() {
        let text = r#"
typo_top = 1
[run]
dataset = "cifar10"
[train]
batch_size = 512
queue_capacity = 256
epochs = 100
lr_warmup_epochs = 5
bacth = 3
[loss]
tau_t = 0.5
[eval]
probe_epochs = 50
"#;
        let v = messages(parse(text));
        assert!(v.iter().any(|m| m.contains("typo_top")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("train.bacth")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("queue_capacity")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("sharper")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("milestone")), "{v:?}");
        assert_eq!(v.len(), 6, "{v:?}");
    }

    #[test]
    fn duplicate_key_is_named() {
        let v = messages(parse("[run]\ndataset = \"cifar10\"\nseed = 1\nseed = 2\n"));
        assert!(v.iter().any(|m| m.contains("seed") && m.to_lowercase().contains("duplicate")), "{v:?}");
    }

    #[test]
    fn missing_dataset_and_bad_version() {
        let v = messages(parse("schema_version = 9\n"));
        assert_eq!(v, vec!["run.dataset is required".to_string()]);
        let v = messages(parse("schema_version = 9\n[run]\ndataset = \"cifar10\"\n"));
        assert!(v[0].contains("schema_version 9"));
    }

    #[test]
    fn overrides_and_hash() {
        let text = "[run]\ndataset = \"cifar10\"\nseed = 3\nworkers = 8\n";
        let a = parse(text).unwrap();
        let b = parse_config_str(
            text,
            &Overrides {
                seed: Some(4),
                deterministic: true,
                out_dir: Some("elsewhere".into()),
            },
        )
        .unwrap();
        assert_eq!(a.train.seed, 3);
        assert_eq!(b.train.seed, 4);
        assert_eq!(b.run.workers, 1);
        assert_eq!(b.run.out_dir, PathBuf::from("elsewhere"));
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.run.out_dir = "x".into();
        c.run.workers = 2;
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn synthetic_dataset_and_collapse_ablation() {
        let cfg = parse(
            r#"
[run]
dataset = "synthetic"
[synthetic]
classes = 3
train_samples = 30
test_samples = 9
image_size = 12
[model]
predictor = false
base_width = 4
[train]
batch_size = 6
queue_capacity = 12
epochs = 3
lr_warmup_epochs = 1
[loss]
tau_t = 0.1
allow_unsharpened_teacher = true
"#,
        )
        .unwrap();
        assert_eq!(cfg.image_size(), 12);
        assert!(cfg.train.model.predictor.is_none());
        assert_eq!(cfg.train.temps.tau_t, 0.1);
        assert_eq!(cfg.synthetic.unwrap().classes, 3);
    }

    #[test]
    fn written_next_to_output() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse("[run]\ndataset = \"cifar100\"\n").unwrap();
        let p = cfg.write_resolved(dir.path()).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.contains("queue_capacity = 4096"));
        assert_eq!(parse(&text).unwrap(), cfg);
    }

    #[test]
    fn resolved_multi_crop_and_warmup_reparse() {
        let cfg = parse(
            "[run]\ndataset = \"imagenet\"\n[train]\ncrop_mode = \"multi_crop\"\n[loss]\ninfonce_warmup = true\nwarmup_steps = 100\n",
        )
        .unwrap();
        assert_eq!(parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use candle_core::Device;
use clap::{Args, Parser, Subcommand, ValueEnum};

use ressl_core::augmentation::AugmentationPolicy;
use ressl_core::evaluation::{
    export_embeddings, extract_features, knn_eval, linear_probe, query_neighbors, FeatureTransform, KnnWeighting,
};
use ressl_core::harness::{
    ingest_dataset_with, load_checkpoint, parse_config_with, DatasetSplits, ExperimentConfig, Overrides, Split,
};
use ressl_core::model::ModelPair;
use ressl_core::trainer::{fit, FitOptions};

#[derive(Parser)]
#[command(name = "ressl", version, about = "Relational self-supervised pretraining and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Single-worker data loading for reproducible runs.
    #[arg(long)]
    deterministic: bool,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Accept a checkpoint produced under a different config.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum QueryAug {
    Weak,
    Contrastive,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain an encoder.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Accept a resume checkpoint produced under a different config.
        #[arg(long)]
        force: bool,
    },
    /// Train a linear classifier on frozen features and report top-1.
    LinearProbe(EvalArgs),
    /// Weighted k-nearest-neighbor accuracy on frozen features.
    Knn {
        #[command(flatten)]
        eval: EvalArgs,
        /// Neighbors per vote (defaults to the configured value).
        #[arg(long)]
        k: Option<usize>,
        /// Equal votes instead of similarity-weighted ones.
        #[arg(long)]
        uniform: bool,
    },
    /// Nearest training images to one augmented query image.
    Neighbors {
        #[command(flatten)]
        eval: EvalArgs,
        /// Index of the query image in the query split.
        #[arg(long)]
        query: usize,
        #[arg(long, value_enum, default_value = "test")]
        query_split: SplitName,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, value_enum, default_value = "weak")]
        aug: QueryAug,
    },
    /// Write pooled features of a split as delimited text.
    ExportEmbeddings {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Output file (defaults to `<out_dir>/embeddings_<split>.csv`).
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Parse and validate a configuration, printing it with defaults resolved.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let overrides = Overrides {
        seed: c.seed,
        deterministic: c.deterministic,
        out_dir: c.out.clone(),
    };
    parse_config_with(&c.config, &overrides).with_context(|| format!("loading {}", c.config.display()))
}

fn load_data(cfg: &ExperimentConfig) -> Result<DatasetSplits> {
    ingest_dataset_with(cfg.dataset(), &cfg.run.data_root, cfg.synthetic)
        .with_context(|| format!("opening dataset under {}", cfg.run.data_root.display()))
}

fn load_pair(cfg: &ExperimentConfig, checkpoint: &Path, force: bool) -> Result<ModelPair> {
    let ckpt = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    Ok(ckpt.model_pair(&cfg.train.model, &cfg.hash(), force, &Device::Cpu)?)
}

fn pick(data: &DatasetSplits, s: SplitName) -> &Split {
    match s {
        SplitName::Train => &data.train,
        SplitName::Test => &data.test,
    }
}

fn center(cfg: &ExperimentConfig) -> FeatureTransform {
    FeatureTransform::CenterCrop {
        size: cfg.image_size(),
        normalization: cfg.dataset().normalization(),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ValidateConfig { common } => {
            let cfg = load_config(&common)?;
            println!("# config hash {}", cfg.hash());
            print!("{}", cfg.to_toml()?);
        }
        Command::Train { common, resume, force } => {
            let cfg = load_config(&common)?;
            let data = load_data(&cfg)?;
            let resume = match resume {
                Some(p) => Some(load_checkpoint(&p).with_context(|| format!("loading {}", p.display()))?),
                None => None,
            };
            let opts = FitOptions {
                resume,
                force,
                ..Default::default()
            };
            let outcome = fit(&cfg, &data, opts, |m| {
                if m.step % cfg.run.log_every == 0 {
                    log::info!(
                        "step {} epoch {} loss {:.4} (rel {:.4}, nce {:.4}) lr {:.5} m {:.4} std {:.4}",
                        m.step,
                        m.epoch,
                        m.loss_total,
                        m.loss_rel,
                        m.loss_nce,
                        m.lr,
                        m.m,
                        m.embedding_std
                    );
                }
            })?;
            println!("{}", outcome.final_checkpoint.display());
        }
        Command::LinearProbe(a) => {
            let cfg = load_config(&a.common)?;
            let data = load_data(&cfg)?;
            let pair = load_pair(&cfg, &a.checkpoint, a.force)?;
            let report = linear_probe(
                &pair,
                &data.train,
                &data.test,
                &cfg.eval.probe,
                cfg.image_size(),
                cfg.dataset().normalization(),
                cfg.eval.batch_size,
                cfg.train.seed,
            )?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Knn { eval: a, k, uniform } => {
            let cfg = load_config(&a.common)?;
            let data = load_data(&cfg)?;
            let pair = load_pair(&cfg, &a.checkpoint, a.force)?;
            let t = center(&cfg);
            let train = extract_features(&pair, &data.train, &t, cfg.eval.batch_size)?;
            let test = extract_features(&pair, &data.test, &t, cfg.eval.batch_size)?;
            let weighting = if uniform {
                KnnWeighting::Uniform
            } else {
                KnnWeighting::Exponential {
                    temperature: cfg.eval.knn_temperature,
                }
            };
            let k = k.unwrap_or(cfg.eval.knn_k);
            let acc = knn_eval(&train, &test, data.num_classes(), k, weighting)?;
            println!("{}", serde_json::json!({ "knn_top1": acc, "k": k }));
        }
        Command::Neighbors {
            eval: a,
            query,
            query_split,
            n,
            aug,
        } => {
            let cfg = load_config(&a.common)?;
            let data = load_data(&cfg)?;
            let pair = load_pair(&cfg, &a.checkpoint, a.force)?;
            let split = pick(&data, query_split);
            if query >= split.len() {
                bail!("query index {query} outside split of {} images", split.len());
            }
            let bank = extract_features(&pair, &data.train, &center(&cfg), cfg.eval.batch_size)?;
            let policy = match aug {
                QueryAug::Weak => cfg.train.teacher_aug.clone(),
                QueryAug::Contrastive => AugmentationPolicy {
                    output_size: cfg.image_size(),
                    ..cfg.train.student_aug.clone()
                },
            };
            let image = split.image(query)?;
            let nn = query_neighbors(&pair, &image, &policy, cfg.train.seed, &bank, n)?;
            let labels: Vec<Option<u32>> = nn.iter().map(|i| bank.labels[*i]).collect();
            println!(
                "{}",
                serde_json::json!({ "query": query, "query_label": split.label(query), "neighbors": nn, "labels": labels })
            );
        }
        Command::ExportEmbeddings { eval: a, split, file } => {
            let cfg = load_config(&a.common)?;
            let data = load_data(&cfg)?;
            let pair = load_pair(&cfg, &a.checkpoint, a.force)?;
            let name = match split {
                SplitName::Train => "train",
                SplitName::Test => "test",
            };
            let path = file.unwrap_or_else(|| cfg.run.out_dir.join(format!("embeddings_{name}.csv")));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let bank = extract_features(&pair, pick(&data, split), &center(&cfg), cfg.eval.batch_size)?;
            export_embeddings(&bank, &path)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

//! Experiment plumbing: configuration, datasets, checkpoints and metrics.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod metrics;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_SCHEMA_VERSION};
pub use config::{parse_config, parse_config_str, parse_config_with, ExperimentConfig, Overrides, CONFIG_SCHEMA_VERSION};
pub use dataset::{ingest_dataset, ingest_dataset_with, DatasetId, DatasetSplits, Split, SyntheticSpec};
pub use metrics::{log_metrics, read_metrics, MetricsWriter};

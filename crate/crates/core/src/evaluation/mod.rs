//! Frozen-encoder evaluation: linear probe, kNN monitor, nearest-neighbor
//! retrieval and raw feature export.

mod export;
mod features;
mod knn;
mod probe;

pub use export::{export_embeddings, read_embeddings};
pub use features::{extract_features, FeatureBank, FeatureTransform};
pub use knn::{knn_eval, knn_predict, nearest_neighbors, query_neighbors, rank_by_cosine, KnnWeighting};
pub use probe::{linear_probe, ProbeProtocol, ProbeReport};

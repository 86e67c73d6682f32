//! Backbones, projection/prediction heads and the student/teacher pair.

mod heads;
mod layers;
mod pair;
mod params;
mod resnet;

pub use heads::{HeadSpec, MlpHead};
pub use layers::{global_avg_pool, l2_normalize, BatchNorm, Conv2d, Linear, Mode};
pub use pair::{EmbeddingBatch, Encoder, ModelPair, ModelSpec, UNIT_NORM_TOL};
pub use params::{Param, ParamBuilder, ParamKind, ParamStore, TensorRecord};
pub use resnet::{adapt_backbone_small_input, BackboneFamily, BackboneSpec, ResNet};

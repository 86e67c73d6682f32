use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{global_avg_pool, BatchNorm, Conv2d, Mode};
use super::params::ParamBuilder;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneFamily {
    Resnet18,
    Resnet34,
    Resnet50,
    /// Recognized plug-in names with no residual stem; not buildable here.
    MobilenetV2,
    EfficientnetB0,
}

impl BackboneFamily {
    pub fn is_residual(self) -> bool {
        matches!(self, Self::Resnet18 | Self::Resnet34 | Self::Resnet50)
    }

    fn blocks(self) -> Option<([usize; 4], bool)> {
        match self {
            Self::Resnet18 => Some(([2, 2, 2, 2], false)),
            Self::Resnet34 => Some(([3, 4, 6, 3], false)),
            Self::Resnet50 => Some(([3, 4, 6, 3], true)),
            _ => None,
        }
    }

    fn expansion(self) -> usize {
        if self == Self::Resnet50 {
            4
        } else {
            1
        }
    }

    /// Pooled feature width for a given stage-1 channel count.
    pub fn feature_dim(self, base_width: usize) -> usize {
        match self {
            Self::MobilenetV2 | Self::EfficientnetB0 => 1280,
            _ => base_width * 8 * self.expansion(),
        }
    }
}

/// Backbone architecture description. `base_width` is the stage-1 channel
/// count (64 for the standard networks); smaller values give narrow
/// variants with the same topology.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub family: BackboneFamily,
    pub small_input_stem: bool,
    pub feature_dim: usize,
    #[serde(default = "default_base_width")]
    pub base_width: usize,
}

fn default_base_width() -> usize {
    64
}

impl BackboneSpec {
    pub fn new(family: BackboneFamily, small_input_stem: bool) -> Self {
        Self::with_width(family, small_input_stem, 64)
    }

    pub fn with_width(family: BackboneFamily, small_input_stem: bool, base_width: usize) -> Self {
        Self {
            family,
            small_input_stem,
            feature_dim: family.feature_dim(base_width),
            base_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.family.feature_dim(self.base_width);
        if self.base_width == 0 {
            return Err(Error::UnsupportedBackbone("base_width must be positive".into()));
        }
        if self.feature_dim != expected {
            return Err(Error::UnsupportedBackbone(format!(
                "feature_dim {} does not match {:?} with base width {} (expected {expected})",
                self.feature_dim, self.family, self.base_width
            )));
        }
        Ok(())
    }

    /// Total downsampling applied by the stem (conv stride times pooling stride).
    pub fn stem_stride(&self) -> usize {
        if self.small_input_stem {
            1
        } else {
            4
        }
    }

    /// Side length of the final feature map before global pooling.
    pub fn pre_pool_side(&self, input_side: usize) -> usize {
        let mut side = input_side;
        if !self.small_input_stem {
            side = conv_out(side, 7, 2, 3);
            side = conv_out(side, 3, 2, 1);
        }
        for _ in 0..3 {
            side = conv_out(side, 3, 2, 1);
        }
        side
    }
}

fn conv_out(side: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (side + 2 * pad - kernel) / stride + 1
}

/// Swaps the 7x7/stride-2 stem and its max pool for a single 3x3/stride-1
/// convolution. Idempotent; feature width is unchanged.
pub fn adapt_backbone_small_input(spec: &BackboneSpec) -> Result<BackboneSpec> {
    if !spec.family.is_residual() {
        return Err(Error::UnsupportedBackbone(format!(
            "{:?} has no residual stem to adapt",
            spec.family
        )));
    }
    Ok(BackboneSpec {
        small_input_stem: true,
        ..spec.clone()
    })
}

#[derive(Debug, Clone)]
struct Downsample {
    conv: Conv2d,
    bn: BatchNorm,
}

#[derive(Debug, Clone)]
enum Block {
    Basic {
        conv1: Conv2d,
        bn1: BatchNorm,
        conv2: Conv2d,
        bn2: BatchNorm,
        down: Option<Downsample>,
    },
    Bottleneck {
        conv1: Conv2d,
        bn1: BatchNorm,
        conv2: Conv2d,
        bn2: BatchNorm,
        conv3: Conv2d,
        bn3: BatchNorm,
        down: Option<Downsample>,
    },
}

impl Block {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (out, down) = match self {
            Block::Basic {
                conv1,
                bn1,
                conv2,
                bn2,
                down,
            } => {
                let y = bn1.forward(&conv1.forward(x)?, mode)?.relu()?;
                (bn2.forward(&conv2.forward(&y)?, mode)?, down)
            }
            Block::Bottleneck {
                conv1,
                bn1,
                conv2,
                bn2,
                conv3,
                bn3,
                down,
            } => {
                let y = bn1.forward(&conv1.forward(x)?, mode)?.relu()?;
                let y = bn2.forward(&conv2.forward(&y)?, mode)?.relu()?;
                (bn3.forward(&conv3.forward(&y)?, mode)?, down)
            }
        };
        let identity = match down {
            Some(d) => d.bn.forward(&d.conv.forward(x)?, mode)?,
            None => x.clone(),
        };
        Ok((out + identity)?.relu()?)
    }
}

/// Residual convolutional encoder producing globally pooled features.
#[derive(Debug, Clone)]
pub struct ResNet {
    spec: BackboneSpec,
    stem: Conv2d,
    stem_bn: BatchNorm,
    stages: Vec<Vec<Block>>,
}

impl ResNet {
    pub fn new<R: Rng>(b: &mut ParamBuilder<'_, R>, spec: &BackboneSpec) -> Result<Self> {
        spec.validate()?;
        let (layout, bottleneck) = spec.family.blocks().ok_or_else(|| {
            Error::UnsupportedBackbone(format!("{:?} is not a residual network", spec.family))
        })?;
        let expansion = spec.family.expansion();
        let w = spec.base_width;
        let stem = if spec.small_input_stem {
            Conv2d::new(&mut b.push("conv1"), 3, w, 3, 1, 1)?
        } else {
            Conv2d::new(&mut b.push("conv1"), 3, w, 7, 2, 3)?
        };
        let stem_bn = BatchNorm::new(&mut b.push("bn1"), w)?;

        let mut in_ch = w;
        let mut stages = Vec::with_capacity(4);
        for (stage, &count) in layout.iter().enumerate() {
            let width = w << stage;
            let out_ch = width * expansion;
            let mut blocks = Vec::with_capacity(count);
            for i in 0..count {
                let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                let mut bb = b.push(&format!("layer{}.{i}", stage + 1));
                let down = if stride != 1 || in_ch != out_ch {
                    let mut db = bb.push("downsample");
                    Some(Downsample {
                        conv: Conv2d::new(&mut db.push("0"), in_ch, out_ch, 1, stride, 0)?,
                        bn: BatchNorm::new(&mut db.push("1"), out_ch)?,
                    })
                } else {
                    None
                };
                let block = if bottleneck {
                    Block::Bottleneck {
                        conv1: Conv2d::new(&mut bb.push("conv1"), in_ch, width, 1, 1, 0)?,
                        bn1: BatchNorm::new(&mut bb.push("bn1"), width)?,
                        conv2: Conv2d::new(&mut bb.push("conv2"), width, width, 3, stride, 1)?,
                        bn2: BatchNorm::new(&mut bb.push("bn2"), width)?,
                        conv3: Conv2d::new(&mut bb.push("conv3"), width, out_ch, 1, 1, 0)?,
                        bn3: BatchNorm::new(&mut bb.push("bn3"), out_ch)?,
                        down,
                    }
                } else {
                    Block::Basic {
                        conv1: Conv2d::new(&mut bb.push("conv1"), in_ch, width, 3, stride, 1)?,
                        bn1: BatchNorm::new(&mut bb.push("bn1"), width)?,
                        conv2: Conv2d::new(&mut bb.push("conv2"), width, width, 3, 1, 1)?,
                        bn2: BatchNorm::new(&mut bb.push("bn2"), width)?,
                        down,
                    }
                };
                blocks.push(block);
                in_ch = out_ch;
            }
            stages.push(blocks);
        }
        Ok(Self {
            spec: spec.clone(),
            stem,
            stem_bn,
            stages,
        })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    /// Final feature map before pooling, NCHW.
    pub fn forward_map(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut y = self.stem_bn.forward(&self.stem.forward(x)?, mode)?.relu()?;
        if !self.spec.small_input_stem {
            // Post-ReLU activations are non-negative, so zero padding acts as
            // -inf padding for the max.
            let padded = y.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
            y = padded.max_pool2d_with_stride(3, 2)?;
        }
        for stage in &self.stages {
            for block in stage {
                y = block.forward(&y, mode)?;
            }
        }
        Ok(y)
    }

    /// Globally average-pooled features, (B, feature_dim).
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        global_avg_pool(&self.forward_map(x, mode)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ParamStore;
    use candle_core::{DType, Device};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(spec: &BackboneSpec) -> (ParamStore, ResNet) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut b = ParamBuilder::new(&mut store, &mut rng, &Device::Cpu);
        let net = ResNet::new(&mut b, spec).unwrap();
        (store, net)
    }

    /// Independent trace of the standard resnet18 layout: stem stride 2,
    /// max pool stride 2 (both ceil-less with padding), then three
    /// stride-2 stages.
    fn traced_side(input: usize, adapted: bool) -> usize {
        let stride_product: usize = if adapted { 8 } else { 32 };
        (input / stride_product).max(1)
    }

    #[test]
    fn adapted_resnet18_keeps_512_features() {
        let spec = adapt_backbone_small_input(&BackboneSpec::new(BackboneFamily::Resnet18, false)).unwrap();
        assert_eq!(spec.feature_dim, 512);
        assert!(spec.small_input_stem);
        assert_eq!(spec.stem_stride(), 1);
        assert_eq!(BackboneSpec::new(BackboneFamily::Resnet18, false).stem_stride(), 4);
        assert_eq!(BackboneSpec::new(BackboneFamily::Resnet50, true).feature_dim, 2048);
    }

    #[test]
    fn pre_pool_map_is_4x4_adapted_and_1x1_standard() {
        let adapted = BackboneSpec::new(BackboneFamily::Resnet18, true);
        let standard = BackboneSpec::new(BackboneFamily::Resnet18, false);
        assert_eq!(adapted.pre_pool_side(32), traced_side(32, true));
        assert_eq!(adapted.pre_pool_side(32), 4);
        assert_eq!(standard.pre_pool_side(32), traced_side(32, false));
        assert_eq!(standard.pre_pool_side(32), 1);
    }

    #[test]
    fn forward_shapes_follow_the_trace() {
        for adapted in [true, false] {
            let spec = BackboneSpec::with_width(BackboneFamily::Resnet18, adapted, 4);
            let (_s, net) = build(&spec);
            let x = Tensor::rand(0f32, 1., (2, 3, 32, 32), &Device::Cpu).unwrap();
            let map = net.forward_map(&x, Mode::Train).unwrap();
            let side = spec.pre_pool_side(32);
            assert_eq!(map.dims(), &[2, 32, side, side]);
            let pooled = net.forward(&x, Mode::Eval).unwrap();
            assert_eq!(pooled.dims(), &[2, spec.feature_dim]);
        }
    }

    #[test]
    fn bottleneck_variant_builds() {
        let spec = BackboneSpec::with_width(BackboneFamily::Resnet50, true, 2);
        let (_s, net) = build(&spec);
        let x = Tensor::zeros((1, 3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(net.forward(&x, Mode::Eval).unwrap().dims(), &[1, 64]);
    }

    #[test]
    fn adaptation_is_idempotent_and_rejects_non_residual() {
        let spec = BackboneSpec::new(BackboneFamily::Resnet34, false);
        let once = adapt_backbone_small_input(&spec).unwrap();
        assert_eq!(adapt_backbone_small_input(&once).unwrap(), once);
        let mobile = BackboneSpec::new(BackboneFamily::MobilenetV2, false);
        assert!(matches!(
            adapt_backbone_small_input(&mobile),
            Err(Error::UnsupportedBackbone(_))
        ));
    }

    #[test]
    fn mismatched_feature_dim_rejected() {
        let mut spec = BackboneSpec::new(BackboneFamily::Resnet18, true);
        spec.feature_dim = 2048;
        assert!(spec.validate().is_err());
    }
}

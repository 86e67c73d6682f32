use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::heads::{HeadSpec, MlpHead};
use super::layers::{l2_normalize, Mode};
use super::params::{ParamBuilder, ParamStore};
use super::resnet::{BackboneSpec, ResNet};
use crate::error::{Error, Result};

/// Tolerance for the unit-norm contract on embeddings.
pub const UNIT_NORM_TOL: f32 = 1e-5;

/// A batch of B embeddings of width D.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    values: Tensor,
    normalized: bool,
}

impl EmbeddingBatch {
    /// L2-normalizes each row.
    pub fn normalize(values: &Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::Shape(format!("embeddings must be B x D, got {:?}", values.dims())));
        }
        Ok(Self {
            values: l2_normalize(values)?,
            normalized: true,
        })
    }

    /// Wraps rows that are claimed to be unit norm, verifying the claim.
    pub fn from_unit_rows(values: Tensor) -> Result<Self> {
        let batch = Self {
            values,
            normalized: true,
        };
        batch.check_unit_norm()?;
        Ok(batch)
    }

    pub fn raw(values: Tensor) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.values.dims().first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.dims().get(1).copied().unwrap_or(0)
    }

    pub fn detach(&self) -> Self {
        Self {
            values: self.values.detach(),
            normalized: self.normalized,
        }
    }

    pub fn check_unit_norm(&self) -> Result<()> {
        if self.values.rank() != 2 {
            return Err(Error::Shape(format!(
                "embeddings must be B x D, got {:?}",
                self.values.dims()
            )));
        }
        let norms = self
            .values
            .to_dtype(DType::F64)?
            .sqr()?
            .sum(1)?
            .sqrt()?
            .to_vec1::<f64>()?;
        for (row, n) in norms.into_iter().enumerate() {
            if !((n - 1.0).abs() <= UNIT_NORM_TOL as f64) {
                return Err(Error::NotNormalized { row, norm: n as f32 });
            }
        }
        Ok(())
    }
}

/// Backbone followed by a projection head.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub backbone: ResNet,
    pub projector: MlpHead,
}

impl Encoder {
    fn new(b: &mut ParamBuilder<'_, ChaCha8Rng>, backbone: &BackboneSpec, projector: HeadSpec) -> Result<Self> {
        if projector.in_dim != backbone.feature_dim {
            return Err(Error::Shape(format!(
                "projector in_dim {} != backbone feature_dim {}",
                projector.in_dim, backbone.feature_dim
            )));
        }
        Ok(Self {
            backbone: ResNet::new(&mut b.push("backbone"), backbone)?,
            projector: MlpHead::new(&mut b.push("projector"), projector)?,
        })
    }

    /// Unnormalized projector output.
    pub fn project(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.backbone.forward(x, mode)?;
        self.projector.forward(&h, mode)
    }
}

/// Architecture of a student/teacher pair.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    pub projector: HeadSpec,
    /// Student-only predictor; `None` trains without one.
    pub predictor: Option<HeadSpec>,
    /// Spatial input sizes the pair accepts (e.g. every multi-crop resolution).
    pub input_sizes: Vec<usize>,
}

impl ModelSpec {
    /// Default small-dataset heads: projector hidden = feature dim, output
    /// 128; predictor mirrors the projector with input = projector output.
    pub fn small_dataset(backbone: BackboneSpec, input_size: usize, with_predictor: bool) -> Self {
        let d = backbone.feature_dim;
        let projector = HeadSpec::new(d, d, 128);
        let predictor = with_predictor.then(|| HeadSpec::new(128, d, 128));
        Self {
            backbone,
            projector,
            predictor,
            input_sizes: vec![input_size],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.projector.validate()?;
        if self.projector.in_dim != self.backbone.feature_dim {
            return Err(Error::Shape(format!(
                "projector in_dim {} != backbone feature_dim {}",
                self.projector.in_dim, self.backbone.feature_dim
            )));
        }
        if let Some(p) = &self.predictor {
            p.validate()?;
            if p.in_dim != self.projector.out_dim || p.out_dim != self.projector.out_dim {
                return Err(Error::Shape(format!(
                    "predictor {p:?} must map projector output {} to itself",
                    self.projector.out_dim
                )));
            }
        }
        if self.input_sizes.is_empty() {
            return Err(Error::Shape("at least one input size is required".into()));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.projector.out_dim
    }
}

/// Student (backbone, projector, predictor) and EMA teacher (backbone,
/// projector). Parameter storage is disjoint; only EMA couples the two.
#[derive(Debug, Clone)]
pub struct ModelPair {
    spec: ModelSpec,
    pub student: Encoder,
    pub predictor: Option<MlpHead>,
    pub teacher: Encoder,
    /// Student backbone + projector.
    pub student_params: ParamStore,
    pub predictor_params: ParamStore,
    pub teacher_params: ParamStore,
    device: Device,
}

impl ModelPair {
    /// Builds a pair with seeded initialization; the teacher starts as an
    /// exact copy of the student.
    pub fn new(spec: &ModelSpec, seed: u64, device: &Device) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut student_params = ParamStore::new();
        let student = Encoder::new(
            &mut ParamBuilder::new(&mut student_params, &mut rng, device),
            &spec.backbone,
            spec.projector,
        )?;
        let mut predictor_params = ParamStore::new();
        let predictor = match spec.predictor {
            Some(p) => Some(MlpHead::new(
                &mut ParamBuilder::new(&mut predictor_params, &mut rng, device).push("predictor"),
                p,
            )?),
            None => None,
        };
        let mut teacher_params = ParamStore::new();
        let mut teacher_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let teacher = Encoder::new(
            &mut ParamBuilder::new(&mut teacher_params, &mut teacher_rng, device),
            &spec.backbone,
            spec.projector,
        )?;
        teacher_params.copy_from(&student_params)?;
        Ok(Self {
            spec: spec.clone(),
            student,
            predictor,
            teacher,
            student_params,
            predictor_params,
            teacher_params,
            device: device.clone(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn has_predictor(&self) -> bool {
        self.predictor.is_some()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let dims = x.dims();
        if dims.len() != 4 || dims[1] != 3 {
            return Err(Error::Shape(format!("expected B x 3 x H x W images, got {dims:?}")));
        }
        if dims[2] != dims[3] || !self.spec.input_sizes.contains(&dims[2]) {
            return Err(Error::Shape(format!(
                "input size {}x{} not among configured sizes {:?}",
                dims[2], dims[3], self.spec.input_sizes
            )));
        }
        Ok(())
    }

    /// Normalized predictor(projector(backbone(x))); participates in autograd.
    pub fn forward_student(&self, x: &Tensor, mode: Mode) -> Result<EmbeddingBatch> {
        self.check_input(x)?;
        let z = self.student.project(x, mode)?;
        let z = match &self.predictor {
            Some(q) => q.forward(&z, mode)?,
            None => z,
        };
        EmbeddingBatch::normalize(&z)
    }

    /// Normalized student projector output without the predictor.
    pub fn forward_student_projector(&self, x: &Tensor, mode: Mode) -> Result<EmbeddingBatch> {
        self.check_input(x)?;
        EmbeddingBatch::normalize(&self.student.project(x, mode)?)
    }

    /// Normalized teacher projector output, detached from the graph.
    /// In training the teacher uses batch statistics but never updates its
    /// own running statistics; those follow the student through the EMA.
    pub fn forward_teacher(&self, x: &Tensor, train: bool) -> Result<EmbeddingBatch> {
        self.check_input(x)?;
        let mode = if train { Mode::TrainFrozenStats } else { Mode::Eval };
        let z = self.teacher.project(&x.detach(), mode)?.detach();
        Ok(EmbeddingBatch::normalize(&z)?.detach())
    }

    /// Pooled backbone features of the student (used by the probes).
    pub fn student_features(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.student.backbone.forward(x, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::resnet::BackboneFamily;

    pub(crate) fn tiny_spec(predictor: bool) -> ModelSpec {
        let backbone = BackboneSpec::with_width(BackboneFamily::Resnet18, true, 4);
        let d = backbone.feature_dim;
        ModelSpec {
            backbone,
            projector: HeadSpec::new(d, d, 8),
            predictor: predictor.then(|| HeadSpec::new(8, 16, 8)),
            input_sizes: vec![16],
        }
    }

    fn images(b: usize) -> Tensor {
        Tensor::rand(0f32, 1., (b, 3, 16, 16), &Device::Cpu).unwrap()
    }

    #[test]
    fn student_rows_are_unit_norm() {
        let pair = ModelPair::new(&tiny_spec(true), 0, &Device::Cpu).unwrap();
        let z = pair.forward_student(&images(4), Mode::Train).unwrap();
        assert_eq!(z.values().dims(), &[4, 8]);
        z.check_unit_norm().unwrap();
    }

    #[test]
    fn identical_inputs_give_identical_rows_in_eval() {
        let pair = ModelPair::new(&tiny_spec(true), 0, &Device::Cpu).unwrap();
        let one = images(1);
        let x = Tensor::cat(&[&one, &one], 0).unwrap();
        let z = pair.forward_student(&x, Mode::Eval).unwrap().values().to_vec2::<f32>().unwrap();
        assert_eq!(z[0], z[1]);
    }

    #[test]
    fn teacher_is_a_copy_at_init() {
        let pair = ModelPair::new(&tiny_spec(false), 1, &Device::Cpu).unwrap();
        assert_eq!(
            pair.student_params.digest().unwrap(),
            pair.teacher_params.digest().unwrap()
        );
        let x = images(3);
        let t = pair.forward_teacher(&x, false).unwrap().values().to_vec2::<f32>().unwrap();
        let s = pair
            .forward_student_projector(&x, Mode::Eval)
            .unwrap()
            .values()
            .to_vec2::<f32>()
            .unwrap();
        assert_eq!(t, s);
        assert_eq!(t[0].len(), 8);
    }

    #[test]
    fn teacher_gets_no_gradient() {
        let pair = ModelPair::new(&tiny_spec(true), 2, &Device::Cpu).unwrap();
        let x = images(4);
        let zs = pair.forward_student(&x, Mode::Train).unwrap();
        let zt = pair.forward_teacher(&x, true).unwrap();
        let loss = (zs.values() * zt.values()).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        for p in pair.teacher_params.iter() {
            assert!(grads.get(p.var.as_tensor()).is_none(), "{} has a gradient", p.name);
        }
        let with_grad = pair
            .student_params
            .trainable()
            .filter(|p| grads.get(p.var.as_tensor()).is_some())
            .count();
        assert!(with_grad > 0);
        assert!(pair
            .predictor_params
            .trainable()
            .all(|p| grads.get(p.var.as_tensor()).is_some()));
    }

    #[test]
    fn wrong_input_size_rejected() {
        let pair = ModelPair::new(&tiny_spec(true), 0, &Device::Cpu).unwrap();
        let x = Tensor::zeros((2, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(pair.forward_student(&x, Mode::Eval), Err(Error::Shape(_))));
        let gray = Tensor::zeros((2, 1, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert!(pair.forward_teacher(&gray, false).is_err());
    }

    #[test]
    fn predictor_shape_validated() {
        let mut spec = tiny_spec(true);
        spec.predictor = Some(HeadSpec::new(4, 16, 8));
        assert!(ModelPair::new(&spec, 0, &Device::Cpu).is_err());
    }

    #[test]
    fn unit_norm_check_rejects_raw_rows() {
        let t = Tensor::new(&[[1f32, 1.]], &Device::Cpu).unwrap();
        assert!(EmbeddingBatch::from_unit_rows(t.clone()).is_err());
        assert!(EmbeddingBatch::normalize(&t).unwrap().check_unit_norm().is_ok());
    }
}

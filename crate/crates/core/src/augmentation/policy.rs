use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    Weak,
    Contrastive,
    MultiCrop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorJitterSpec {
    pub strength: f64,
    pub prob: f64,
}

/// Per-channel normalization applied as the last step of every view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub const CIFAR10: Self = Self {
        mean: [0.4914, 0.4822, 0.4465],
        std: [0.2470, 0.2435, 0.2616],
    };
    pub const CIFAR100: Self = Self {
        mean: [0.5071, 0.4865, 0.4409],
        std: [0.2673, 0.2564, 0.2762],
    };
    pub const IMAGENET: Self = Self {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };
}

/// Complete description of a random view transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub kind: AugmentationKind,
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
    pub output_size: usize,
    pub flip_prob: f64,
    #[serde(default)]
    pub color_jitter: Option<ColorJitterSpec>,
    #[serde(default)]
    pub grayscale_prob: Option<f64>,
    #[serde(default)]
    pub blur_prob: Option<f64>,
    #[serde(default)]
    pub solarize_prob: Option<f64>,
    pub normalization: Normalization,
}

impl AugmentationPolicy {
    /// Random resized crop (scale 0.2..1) and horizontal flip only.
    pub fn weak(output_size: usize, normalization: Normalization) -> Self {
        Self {
            kind: AugmentationKind::Weak,
            crop_scale_min: 0.2,
            crop_scale_max: 1.0,
            output_size,
            flip_prob: 0.5,
            color_jitter: None,
            grayscale_prob: None,
            blur_prob: None,
            solarize_prob: None,
            normalization,
        }
    }

    /// Small/medium-dataset student views: crop 0.2..1, flip, color
    /// distortion of strength 0.5 at p=0.8, grayscale p=0.2, blur p=0.5.
    pub fn contrastive(output_size: usize, normalization: Normalization) -> Self {
        Self {
            kind: AugmentationKind::Contrastive,
            crop_scale_min: 0.2,
            crop_scale_max: 1.0,
            output_size,
            flip_prob: 0.5,
            color_jitter: Some(ColorJitterSpec {
                strength: 0.5,
                prob: 0.8,
            }),
            grayscale_prob: Some(0.2),
            blur_prob: Some(0.5),
            solarize_prob: None,
            normalization,
        }
    }

    /// Large-scale student views: minimum crop area 14%, full-strength color
    /// distortion, blur 50%, solarization 10%.
    pub fn contrastive_imagenet(output_size: usize) -> Self {
        Self {
            kind: AugmentationKind::Contrastive,
            crop_scale_min: 0.14,
            crop_scale_max: 1.0,
            output_size,
            flip_prob: 0.5,
            color_jitter: Some(ColorJitterSpec {
                strength: 1.0,
                prob: 0.8,
            }),
            grayscale_prob: Some(0.2),
            blur_prob: Some(0.5),
            solarize_prob: Some(0.1),
            normalization: Normalization::IMAGENET,
        }
    }

    /// Full-image resize and normalization; every seed gives the same output.
    pub fn identity(output_size: usize, normalization: Normalization) -> Self {
        Self {
            kind: AugmentationKind::Weak,
            crop_scale_min: 1.0,
            crop_scale_max: 1.0,
            output_size,
            flip_prob: 0.0,
            color_jitter: None,
            grayscale_prob: None,
            blur_prob: None,
            solarize_prob: None,
            normalization,
        }
    }

    /// Every violated invariant, prefixed with `path`.
    pub fn violations(&self, path: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.crop_scale_min > 0.0 && self.crop_scale_min <= self.crop_scale_max && self.crop_scale_max <= 1.0) {
            out.push(format!(
                "{path}: crop scale must satisfy 0 < min <= max <= 1, got ({}, {})",
                self.crop_scale_min, self.crop_scale_max
            ));
        }
        if self.output_size == 0 {
            out.push(format!("{path}: output_size must be positive"));
        }
        let mut probs = vec![("flip_prob", Some(self.flip_prob))];
        probs.push(("color_jitter.prob", self.color_jitter.map(|c| c.prob)));
        probs.push(("grayscale_prob", self.grayscale_prob));
        probs.push(("blur_prob", self.blur_prob));
        probs.push(("solarize_prob", self.solarize_prob));
        for (name, p) in probs {
            if let Some(p) = p {
                if !(0.0..=1.0).contains(&p) {
                    out.push(format!("{path}.{name} must lie in [0, 1], got {p}"));
                }
            }
        }
        if let Some(c) = self.color_jitter {
            if !(c.strength >= 0.0 && c.strength.is_finite()) {
                out.push(format!("{path}.color_jitter.strength must be non-negative, got {}", c.strength));
            }
        }
        if self.kind == AugmentationKind::Weak
            && (self.color_jitter.is_some()
                || self.grayscale_prob.is_some()
                || self.blur_prob.is_some()
                || self.solarize_prob.is_some())
        {
            out.push(format!(
                "{path}: a weak policy may only crop and flip (color jitter, grayscale, blur and solarize must be absent)"
            ));
        }
        if self.normalization.std.iter().any(|s| !(*s > 0.0)) {
            out.push(format!("{path}.normalization.std must be positive"));
        }
        out
    }

    /// Names of the transforms this policy can apply.
    pub fn transform_set(&self) -> Vec<&'static str> {
        let mut set = Vec::new();
        if !(self.crop_scale_min == 1.0 && self.crop_scale_max == 1.0) {
            set.push("random_resized_crop");
        }
        if self.flip_prob > 0.0 {
            set.push("horizontal_flip");
        }
        if self.color_jitter.is_some_and(|c| c.prob > 0.0) {
            set.push("color_jitter");
        }
        if self.grayscale_prob.is_some_and(|p| p > 0.0) {
            set.push("grayscale");
        }
        if self.blur_prob.is_some_and(|p| p > 0.0) {
            set.push("gaussian_blur");
        }
        if self.solarize_prob.is_some_and(|p| p > 0.0) {
            set.push("solarize");
        }
        set
    }
}

/// Mixed-resolution crops sharing one set of photometric transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiCropSpec {
    pub resolutions: Vec<usize>,
    pub scale_min: Vec<f64>,
    pub scale_max: Vec<f64>,
    /// Photometric transforms for every crop; its crop scale and output
    /// size are replaced per view.
    pub transforms: AugmentationPolicy,
}

impl MultiCropSpec {
    /// Five views at 224/192/160/128/96 pixels.
    pub fn imagenet_five_view() -> Self {
        Self {
            resolutions: vec![224, 192, 160, 128, 96],
            scale_min: vec![0.14, 0.117, 0.095, 0.073, 0.05],
            scale_max: vec![1.0, 0.86, 0.715, 0.571, 0.429],
            transforms: AugmentationPolicy::contrastive_imagenet(224),
        }
    }

    pub fn violations(&self, path: &str) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.resolutions.len();
        if n < 2 || self.scale_min.len() != n || self.scale_max.len() != n {
            out.push(format!(
                "{path}: resolutions, scale_min and scale_max must be parallel lists of length >= 2 (got {}, {}, {})",
                n,
                self.scale_min.len(),
                self.scale_max.len()
            ));
        }
        for (i, (lo, hi)) in self.scale_min.iter().zip(&self.scale_max).enumerate() {
            if !(*lo > 0.0 && lo <= hi && *hi <= 1.0) {
                out.push(format!("{path}: view {i} scale must satisfy 0 < min <= max <= 1, got ({lo}, {hi})"));
            }
        }
        if self.resolutions.contains(&0) {
            out.push(format!("{path}: resolutions must be positive"));
        }
        out.extend(self.transforms.violations(&format!("{path}.transforms")));
        out
    }

    pub fn view_policy(&self, i: usize) -> AugmentationPolicy {
        AugmentationPolicy {
            kind: AugmentationKind::MultiCrop,
            crop_scale_min: self.scale_min[i],
            crop_scale_max: self.scale_max[i],
            output_size: self.resolutions[i],
            ..self.transforms.clone()
        }
    }
}

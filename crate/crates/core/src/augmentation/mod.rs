//! Seeded image augmentation: weak (teacher), contrastive (student) and
//! multi-crop views.
//!
//! Every view is a pure function of `(image, policy, seed)`.

mod image;
pub mod ops;
mod policy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use image::Image;
pub use policy::{AugmentationKind, AugmentationPolicy, ColorJitterSpec, MultiCropSpec, Normalization};

use crate::error::{Error, Result};

/// Mixes run-level identifiers into one per-view seed (SplitMix64 chain).
pub fn derive_seed(global_seed: u64, epoch: u64, sample_index: u64, view_index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    [epoch, sample_index, view_index]
        .into_iter()
        .fold(mix(global_seed), |acc, v| mix(acc ^ mix(v)))
}

/// Applies every random transform of `policy` but not the final
/// normalization. Output values stay in [0, 1].
pub fn apply_view_unnormalized(image: &Image, policy: &AugmentationPolicy, seed: u64) -> Result<Image> {
    image.require_rgb()?;
    let violations = policy.violations("policy");
    if !violations.is_empty() {
        return Err(Error::InvalidPolicy(violations.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = policy.output_size;

    let crop = if policy.crop_scale_min == 1.0 && policy.crop_scale_max == 1.0 {
        ops::CropBox::full(image)
    } else {
        ops::sample_resized_crop(
            &mut rng,
            image.height(),
            image.width(),
            (policy.crop_scale_min, policy.crop_scale_max),
        )
    };
    let mut view = ops::crop_resize(image, crop, size, size);

    if policy.flip_prob > 0.0 && rng.gen_bool(policy.flip_prob) {
        ops::hflip(&mut view);
    }
    if let Some(jitter) = policy.color_jitter {
        if jitter.prob > 0.0 && rng.gen_bool(jitter.prob) {
            ops::color_jitter(&mut view, jitter.strength, &mut rng);
        }
    }
    if let Some(p) = policy.grayscale_prob {
        if p > 0.0 && rng.gen_bool(p) {
            ops::grayscale(&mut view);
        }
    }
    if let Some(p) = policy.blur_prob {
        if p > 0.0 && rng.gen_bool(p) {
            let sigma = rng.gen_range(0.1..=2.0);
            ops::gaussian_blur(&mut view, sigma, ops::blur_kernel_size(size));
        }
    }
    if let Some(p) = policy.solarize_prob {
        if p > 0.0 && rng.gen_bool(p) {
            ops::solarize(&mut view);
        }
    }
    Ok(view)
}

/// One augmented, normalized view (C x H x W with H = W = output_size).
pub fn apply_view(image: &Image, policy: &AugmentationPolicy, seed: u64) -> Result<Image> {
    let mut view = apply_view_unnormalized(image, policy, seed)?;
    ops::normalize(&mut view, policy.normalization.mean, policy.normalization.std);
    Ok(view)
}

/// One view per configured resolution; view `i` uses its own derived seed.
pub fn multi_crop_views(image: &Image, spec: &MultiCropSpec, seed: u64) -> Result<Vec<Image>> {
    let violations = spec.violations("multi_crop");
    if !violations.is_empty() {
        return Err(Error::InvalidPolicy(violations.join("; ")));
    }
    (0..spec.resolutions.len())
        .map(|i| apply_view(image, &spec.view_policy(i), derive_seed(seed, 0, 0, i as u64)))
        .collect()
}

/// Deterministic evaluation transform: central square crop resized to
/// `size`, then normalization.
pub fn eval_view(image: &Image, size: usize, normalization: &Normalization) -> Result<Image> {
    image.require_rgb()?;
    let mut view = ops::crop_resize(image, ops::center_square(image), size, size);
    ops::normalize(&mut view, normalization.mean, normalization.std);
    Ok(view)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_image(h: usize, w: usize, salt: u32) -> Image {
        let data = (0..3 * h * w)
            .map(|i| (((i as u32).wrapping_mul(2654435761) ^ salt) % 1000) as f32 / 999.0)
            .collect();
        Image::new(3, h, w, data).unwrap()
    }

    #[test]
    fn weak_policy_matches_reported_recipe() {
        let p = AugmentationPolicy::weak(32, Normalization::CIFAR10);
        assert_eq!((p.crop_scale_min, p.crop_scale_max), (0.2, 1.0));
        assert_eq!(p.transform_set(), vec!["random_resized_crop", "horizontal_flip"]);
        assert!(p.violations("weak").is_empty());
    }

    #[test]
    fn contrastive_policy_matches_reported_recipe() {
        let p = AugmentationPolicy::contrastive(32, Normalization::CIFAR10);
        assert_eq!(p.crop_scale_min, 0.2);
        assert_eq!(p.color_jitter, Some(ColorJitterSpec { strength: 0.5, prob: 0.8 }));
        assert_eq!(p.blur_prob, Some(0.5));
        assert!(p.violations("contrastive").is_empty());
    }

    #[test]
    fn weak_transforms_are_a_strict_subset_of_contrastive() {
        let weak = AugmentationPolicy::weak(32, Normalization::CIFAR10).transform_set();
        let strong = AugmentationPolicy::contrastive(32, Normalization::CIFAR10).transform_set();
        assert!(weak.iter().all(|t| strong.contains(t)));
        assert!(strong.len() > weak.len());
    }

    #[test]
    fn identity_policy_ignores_seed() {
        let img = test_image(32, 32, 1);
        let p = AugmentationPolicy::identity(32, Normalization::CIFAR10);
        let a = apply_view(&img, &p, 1).unwrap();
        let b = apply_view(&img, &p, 987654).unwrap();
        assert_eq!(a, b);
        let mut expected = img.clone();
        ops::normalize(&mut expected, Normalization::CIFAR10.mean, Normalization::CIFAR10.std);
        assert_eq!(a, expected);
    }

    #[test]
    fn output_size_and_determinism() {
        let img = test_image(40, 30, 2);
        let p = AugmentationPolicy::contrastive(24, Normalization::CIFAR10);
        let a = apply_view(&img, &p, 42).unwrap();
        let b = apply_view(&img, &p, 42).unwrap();
        assert_eq!((a.channels(), a.height(), a.width()), (3, 24, 24));
        assert_eq!(a.data(), b.data());
        let c = apply_view(&img, &p, 43).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn rejects_non_rgb_and_invalid_policy() {
        let gray = Image::new(1, 4, 4, vec![0.5; 16]).unwrap();
        let p = AugmentationPolicy::weak(4, Normalization::CIFAR10);
        assert!(matches!(apply_view(&gray, &p, 0), Err(Error::InvalidImage(_))));
        let mut bad = AugmentationPolicy::weak(4, Normalization::CIFAR10);
        bad.blur_prob = Some(0.5);
        let img = test_image(4, 4, 0);
        assert!(matches!(apply_view(&img, &bad, 0), Err(Error::InvalidPolicy(_))));
        bad = AugmentationPolicy::contrastive(4, Normalization::CIFAR10);
        bad.crop_scale_min = 0.0;
        assert!(apply_view(&img, &bad, 0).is_err());
    }

    #[test]
    fn one_pixel_image_is_accepted() {
        let img = Image::new(3, 1, 1, vec![0.2, 0.4, 0.6]).unwrap();
        let p = AugmentationPolicy::contrastive(8, Normalization::CIFAR10);
        let v = apply_view(&img, &p, 5).unwrap();
        assert_eq!(v.height(), 8);
        assert!(v.data().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn multi_crop_imagenet_spec() {
        let spec = MultiCropSpec::imagenet_five_view();
        assert!(spec.violations("mc").is_empty());
        let img = test_image(64, 64, 3);
        let mut small = spec.clone();
        small.resolutions = vec![32, 28, 24, 20, 16];
        let views = multi_crop_views(&img, &small, 11).unwrap();
        assert_eq!(views.len(), 5);
        for (v, r) in views.iter().zip(&small.resolutions) {
            assert_eq!((v.height(), v.width()), (*r, *r));
        }
        assert_eq!(views, multi_crop_views(&img, &small, 11).unwrap());
    }

    #[test]
    fn two_same_size_crops_differ_by_seed() {
        let spec = MultiCropSpec {
            resolutions: vec![16, 16],
            scale_min: vec![0.2, 0.2],
            scale_max: vec![1.0, 1.0],
            transforms: AugmentationPolicy::contrastive(16, Normalization::CIFAR10),
        };
        let img = test_image(32, 32, 4);
        let views = multi_crop_views(&img, &spec, 1).unwrap();
        assert_eq!(views[0].height(), views[1].height());
        assert_ne!(views[0], views[1]);
        assert_ne!(views, multi_crop_views(&img, &spec, 2).unwrap());
    }

    #[test]
    fn multi_crop_spec_validation() {
        let mut spec = MultiCropSpec::imagenet_five_view();
        spec.scale_min.pop();
        assert!(!spec.violations("mc").is_empty());
        spec = MultiCropSpec::imagenet_five_view();
        spec.resolutions = vec![224];
        spec.scale_min = vec![0.5];
        spec.scale_max = vec![0.4];
        assert_eq!(spec.violations("mc").len(), 2);
    }

    #[test]
    fn seeds_are_distinct_across_views() {
        let a = derive_seed(1, 0, 5, 0);
        assert_ne!(a, derive_seed(1, 0, 5, 1));
        assert_ne!(a, derive_seed(1, 1, 5, 0));
        assert_ne!(a, derive_seed(2, 0, 5, 0));
        assert_eq!(a, derive_seed(1, 0, 5, 0));
    }

    #[test]
    fn eval_view_center_crops() {
        let img = test_image(8, 12, 5);
        let v = eval_view(&img, 8, &Normalization::CIFAR10).unwrap();
        assert_eq!((v.height(), v.width()), (8, 8));
    }

    proptest! {
        #[test]
        fn views_are_pure_and_bounded(seed in any::<u64>(), h in 1usize..20, w in 1usize..20, salt in any::<u32>()) {
            let img = test_image(h, w, salt);
            let p = AugmentationPolicy::contrastive_imagenet(12);
            let raw = apply_view_unnormalized(&img, &p, seed).unwrap();
            prop_assert!(raw.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let a = apply_view(&img, &p, seed).unwrap();
            prop_assert!(a.data().iter().all(|v| v.is_finite()));
            prop_assert_eq!(a, apply_view(&img, &p, seed).unwrap());
        }
    }
}

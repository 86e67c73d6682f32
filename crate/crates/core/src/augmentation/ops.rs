//! Individual image transforms on planar RGB images in [0, 1].

use rand::seq::SliceRandom;
use rand::Rng;

use super::image::Image;

/// Crop window in source pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropBox {
    pub fn full(img: &Image) -> Self {
        Self {
            top: 0,
            left: 0,
            height: img.height(),
            width: img.width(),
        }
    }
}

/// Samples a crop covering a random fraction of the area in `scale` with a
/// log-uniform aspect ratio in [3/4, 4/3]; falls back to a central crop
/// after ten rejected attempts.
pub fn sample_resized_crop<R: Rng>(rng: &mut R, height: usize, width: usize, scale: (f64, f64)) -> CropBox {
    let area = (height * width) as f64;
    let (log_lo, log_hi) = ((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
    for _ in 0..10 {
        let target = area * rng.gen_range(scale.0..=scale.1);
        let aspect = rng.gen_range(log_lo..=log_hi).exp();
        let w = (target * aspect).sqrt().round() as usize;
        let h = (target / aspect).sqrt().round() as usize;
        if w > 0 && h > 0 && w <= width && h <= height {
            let top = rng.gen_range(0..=height - h);
            let left = rng.gen_range(0..=width - w);
            return CropBox {
                top,
                left,
                height: h,
                width: w,
            };
        }
    }
    let ratio = width as f64 / height as f64;
    let (w, h) = if ratio < 3.0 / 4.0 {
        (width, ((width as f64) / (3.0 / 4.0)).round() as usize)
    } else if ratio > 4.0 / 3.0 {
        (((height as f64) * (4.0 / 3.0)).round() as usize, height)
    } else {
        (width, height)
    };
    let (w, h) = (w.clamp(1, width), h.clamp(1, height));
    CropBox {
        top: (height - h) / 2,
        left: (width - w) / 2,
        height: h,
        width: w,
    }
}

/// Largest centered square crop.
pub fn center_square(img: &Image) -> CropBox {
    let side = img.height().min(img.width());
    CropBox {
        top: (img.height() - side) / 2,
        left: (img.width() - side) / 2,
        height: side,
        width: side,
    }
}

/// Bilinear resampling of `crop` to `out_h` x `out_w` (half-pixel centers,
/// edge clamped).
pub fn crop_resize(img: &Image, crop: CropBox, out_h: usize, out_w: usize) -> Image {
    let (src_w, channels) = (img.width(), img.channels());
    let sy = crop.height as f64 / out_h as f64;
    let sx = crop.width as f64 / out_w as f64;
    let y_taps: Vec<(usize, usize, f32)> = (0..out_h)
        .map(|oy| tap(crop.top, crop.height, (oy as f64 + 0.5) * sy - 0.5))
        .collect();
    let x_taps: Vec<(usize, usize, f32)> = (0..out_w)
        .map(|ox| tap(crop.left, crop.width, (ox as f64 + 0.5) * sx - 0.5))
        .collect();
    let mut out = vec![0f32; channels * out_h * out_w];
    for c in 0..channels {
        let plane = img.plane(c);
        let dst = &mut out[c * out_h * out_w..(c + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in y_taps.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in x_taps.iter().enumerate() {
                let p00 = plane[y0 * src_w + x0];
                let p01 = plane[y0 * src_w + x1];
                let p10 = plane[y1 * src_w + x0];
                let p11 = plane[y1 * src_w + x1];
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                dst[oy * out_w + ox] = top + (bottom - top) * fy;
            }
        }
    }
    Image::new(channels, out_h, out_w, out).expect("sizes are consistent")
}

fn tap(offset: usize, extent: usize, pos: f64) -> (usize, usize, f32) {
    let pos = pos.clamp(0.0, (extent - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(extent - 1);
    (offset + lo, offset + hi, (pos - lo as f64) as f32)
}

pub fn hflip(img: &mut Image) {
    let w = img.width();
    for row in img.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn for_each_pixel(img: &mut Image, mut f: impl FnMut(&mut f32, &mut f32, &mut f32)) {
    let n = img.height() * img.width();
    let data = img.data_mut();
    let (r, rest) = data.split_at_mut(n);
    let (g, b) = rest.split_at_mut(n);
    for i in 0..n {
        f(&mut r[i], &mut g[i], &mut b[i]);
    }
}

pub fn grayscale(img: &mut Image) {
    for_each_pixel(img, |r, g, b| {
        let l = luma(*r, *g, *b);
        (*r, *g, *b) = (l, l, l);
    });
}

pub fn adjust_brightness(img: &mut Image, factor: f32) {
    img.data_mut().iter_mut().for_each(|v| *v = (*v * factor).clamp(0.0, 1.0));
}

pub fn adjust_contrast(img: &mut Image, factor: f32) {
    let n = (img.height() * img.width()) as f32;
    let mut sum = 0.0f32;
    for_each_pixel(img, |r, g, b| sum += luma(*r, *g, *b));
    let mean = sum / n;
    img.data_mut()
        .iter_mut()
        .for_each(|v| *v = ((*v - mean) * factor + mean).clamp(0.0, 1.0));
}

pub fn adjust_saturation(img: &mut Image, factor: f32) {
    for_each_pixel(img, |r, g, b| {
        let l = luma(*r, *g, *b);
        *r = ((*r - l) * factor + l).clamp(0.0, 1.0);
        *g = ((*g - l) * factor + l).clamp(0.0, 1.0);
        *b = ((*b - l) * factor + l).clamp(0.0, 1.0);
    });
}

/// Rotates hue by `shift` turns (shift in [-0.5, 0.5]).
pub fn adjust_hue(img: &mut Image, shift: f32) {
    for_each_pixel(img, |r, g, b| {
        let (h, s, v) = rgb_to_hsv(*r, *g, *b);
        let h = (h + shift).rem_euclid(1.0);
        (*r, *g, *b) = hsv_to_rgb(h, s, v);
    });
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i32).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Brightness, contrast, saturation and hue jitter with ranges
/// (0.4s, 0.4s, 0.4s, 0.1s), applied in random order.
pub fn color_jitter<R: Rng>(img: &mut Image, strength: f64, rng: &mut R) {
    let bcs = 0.4 * strength;
    let hue = (0.1 * strength).min(0.5);
    let mut order = [0u8, 1, 2, 3];
    order.shuffle(rng);
    for op in order {
        match op {
            0 if bcs > 0.0 => adjust_brightness(img, rng.gen_range((1.0 - bcs).max(0.0)..=1.0 + bcs) as f32),
            1 if bcs > 0.0 => adjust_contrast(img, rng.gen_range((1.0 - bcs).max(0.0)..=1.0 + bcs) as f32),
            2 if bcs > 0.0 => adjust_saturation(img, rng.gen_range((1.0 - bcs).max(0.0)..=1.0 + bcs) as f32),
            3 if hue > 0.0 => adjust_hue(img, rng.gen_range(-hue..=hue) as f32),
            _ => {}
        }
    }
}

/// Kernel size for blurring an image of the given side: 10% of the side,
/// rounded, bumped to the next odd number.
pub fn blur_kernel_size(side: usize) -> usize {
    let k = ((side as f64) * 0.1).round() as usize;
    let k = k.max(1);
    if k.is_multiple_of(2) {
        k + 1
    } else {
        k
    }
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(img: &mut Image, sigma: f64, kernel: usize) {
    if kernel <= 1 {
        return;
    }
    let half = (kernel / 2) as isize;
    let mut weights: Vec<f32> = (-half..=half)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let total: f32 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let (h, w, channels) = (img.height(), img.width(), img.channels());
    let mut tmp = vec![0f32; h * w];
    let data = img.data_mut();
    for c in 0..channels {
        let plane = &mut data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let sx = reflect(x as isize + k as isize - half, w);
                    acc += plane[y * w + sx] * wt;
                }
                tmp[y * w + x] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let sy = reflect(y as isize + k as isize - half, h);
                    acc += tmp[sy * w + x] * wt;
                }
                plane[y * w + x] = acc;
            }
        }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Inverts values at or above 0.5.
pub fn solarize(img: &mut Image) {
    img.data_mut().iter_mut().for_each(|v| {
        if *v >= 0.5 {
            *v = 1.0 - *v
        }
    });
}

pub fn normalize(img: &mut Image, mean: [f32; 3], std: [f32; 3]) {
    let n = img.height() * img.width();
    for (c, plane) in img.data_mut().chunks_exact_mut(n).enumerate() {
        plane.iter_mut().for_each(|v| *v = (*v - mean[c]) / std[c]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Image {
        let data = (0..3 * h * w).map(|i| (i % (h * w)) as f32 / (h * w) as f32).collect();
        Image::new(3, h, w, data).unwrap()
    }

    #[test]
    fn full_crop_resize_to_same_size_is_identity() {
        let img = ramp(5, 7);
        let out = crop_resize(&img, CropBox::full(&img), 5, 7);
        assert_eq!(out, img);
    }

    #[test]
    fn crop_resize_of_constant_is_constant() {
        let img = Image::new(3, 9, 9, vec![0.25; 243]).unwrap();
        let out = crop_resize(&img, CropBox { top: 2, left: 1, height: 5, width: 6 }, 4, 4);
        assert!(out.data().iter().all(|v| (*v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn sampled_crops_stay_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let c = sample_resized_crop(&mut rng, 32, 20, (0.08, 1.0));
            assert!(c.height >= 1 && c.width >= 1);
            assert!(c.top + c.height <= 32 && c.left + c.width <= 20);
        }
    }

    #[test]
    fn hflip_twice_is_identity() {
        let img = ramp(3, 4);
        let mut f = img.clone();
        hflip(&mut f);
        assert_ne!(f, img);
        hflip(&mut f);
        assert_eq!(f, img);
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2f32, 0.4, 0.9), (1.0, 0.0, 0.0), (0.5, 0.5, 0.5), (0.1, 0.9, 0.3)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-5 && (g - g2).abs() < 1e-5 && (b - b2).abs() < 1e-5);
        }
    }

    #[test]
    fn blur_kernel_sizes() {
        assert_eq!(blur_kernel_size(32), 3);
        assert_eq!(blur_kernel_size(64), 7);
        assert_eq!(blur_kernel_size(96), 11);
        assert_eq!(blur_kernel_size(224), 23);
        assert_eq!(blur_kernel_size(4), 1);
    }

    #[test]
    fn blur_preserves_constant_and_mass() {
        let mut img = Image::new(3, 6, 6, vec![0.7; 108]).unwrap();
        gaussian_blur(&mut img, 1.5, 5);
        assert!(img.data().iter().all(|v| (*v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }

    #[test]
    fn jitter_and_friends_stay_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut img = ramp(8, 8);
            color_jitter(&mut img, 1.0, &mut rng);
            solarize(&mut img);
            grayscale(&mut img);
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

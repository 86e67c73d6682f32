use candle_core::{Device, Tensor};

use crate::error::{Error, Result};

/// Planar (CHW) float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!("image must be at least 1x1, got {height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::InvalidImage(format!(
                "buffer of {} values does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Interleaved 8-bit RGB (row-major HWC) to planar floats in [0, 1].
    pub fn from_rgb8(width: usize, height: usize, pixels: &[u8]) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "expected {} RGB bytes for {width}x{height}, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        let plane = width * height;
        let mut data = vec![0f32; plane * 3];
        for (i, px) in pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        Self::new(3, height, width, data)
    }

    /// Planar 8-bit channels (CHW) to floats in [0, 1].
    pub fn from_planar_u8(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub(crate) fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn require_rgb(&self) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::InvalidImage(format!(
                "expected an RGB image (3 channels), got {} channels",
                self.channels
            )));
        }
        Ok(())
    }

    /// Stacks equally sized images into an N x C x H x W tensor.
    pub fn batch_to_tensor(images: &[Image], device: &Device) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidImage("cannot batch zero images".into()))?;
        let (c, h, w) = (first.channels, first.height, first.width);
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if (img.channels, img.height, img.width) != (c, h, w) {
                return Err(Error::InvalidImage(format!(
                    "cannot batch {}x{}x{} with {c}x{h}x{w}",
                    img.channels, img.height, img.width
                )));
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Tensor::from_vec(data, (images.len(), c, h, w), device)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb8_is_converted_to_planar() {
        let img = Image::from_rgb8(2, 1, &[255, 0, 0, 0, 255, 51]).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.2]);
    }

    #[test]
    fn degenerate_images_rejected() {
        assert!(Image::new(3, 0, 4, vec![]).is_err());
        assert!(Image::new(3, 2, 2, vec![0.0; 11]).is_err());
        assert!(Image::from_rgb8(2, 2, &[0; 5]).is_err());
    }

    #[test]
    fn batching_checks_sizes() {
        let a = Image::new(3, 2, 2, vec![0.5; 12]).unwrap();
        let b = Image::new(3, 3, 2, vec![0.5; 18]).unwrap();
        assert_eq!(
            Image::batch_to_tensor(&[a.clone(), a.clone()], &Device::Cpu).unwrap().dims(),
            &[2, 3, 2, 2]
        );
        assert!(Image::batch_to_tensor(&[a, b], &Device::Cpu).is_err());
    }
}

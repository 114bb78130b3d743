//! Pixel and feature containers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// One RGB frame, row-major and channel-interleaved, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidFrame(alloc::format!("{height}x{width} frame")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidFrame(alloc::format!(
                "{} samples for a {height}x{width}x3 frame",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidFrame(alloc::format!("sample {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds a frame, clamping every sample into `[0, 1]` (non-finite values become 0).
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in data.iter_mut() {
            *v = clamp_unit(*v);
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * 3])
    }

    /// Builds a frame from a per-pixel function returning `[r, g, b]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::from_clamped(height, width, data)
    }

    /// Converts 8-bit RGB samples.
    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(height, width, data)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| libm::roundf(clamp_unit(v) * 255.0) as u8)
            .collect()
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

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// Copies the `h`×`w` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || top + h > self.height || left + w > self.width {
            return Err(Error::InvalidFrame(alloc::format!(
                "crop {h}x{w}@({top},{left}) outside {}x{}",
                self.height,
                self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * 3);
        for y in top..top + h {
            let start = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(Self { height: h, width: w, data })
    }

    /// Planar `3×H×W` copy for the networks.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.height * self.width;
        let mut data = vec![0.0; plane * 3];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            data[i] = px[0];
            data[plane + i] = px[1];
            data[2 * plane + i] = px[2];
        }
        Tensor { channels: 3, height: self.height, width: self.width, data }
    }

    /// Inverse of [`Frame::to_tensor`]; samples are clamped into `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.channels != 3 {
            return Err(Error::Shape(alloc::format!("expected 3 channels, got {}", t.channels)));
        }
        let plane = t.height * t.width;
        let mut data = Vec::with_capacity(plane * 3);
        for i in 0..plane {
            data.push(clamp_unit(t.data[i]));
            data.push(clamp_unit(t.data[plane + i]));
            data.push(clamp_unit(t.data[2 * plane + i]));
        }
        Self::new(t.height, t.width, data)
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Planar `C×H×W` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(alloc::format!(
                "{} values for a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }
}

/// Activations of one layer of one model, `f_{i,j,k}` with channel `j` on axis 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub model_index: usize,
    pub layer_index: usize,
    pub tensor: Tensor,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_samples() {
        assert!(Frame::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(Frame::new(1, 1, vec![0.0, f32::NAN, 0.0]).is_err());
        assert!(Frame::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let f = Frame::from_fn(3, 5, |y, x| [y as f32 / 4.0, x as f32 / 8.0, 0.25]).unwrap();
        let t = f.to_tensor();
        assert_eq!(t.channel(2), &[0.25; 15][..]);
        assert_eq!(Frame::from_tensor(&t).unwrap(), f);
    }

    #[test]
    fn crop_window() {
        let f = Frame::from_fn(4, 4, |y, x| [(y * 4 + x) as f32 / 16.0, 0.0, 0.0]).unwrap();
        let c = f.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.get(0, 0, 0), 6.0 / 16.0);
        assert_eq!(c.get(1, 1, 0), 11.0 / 16.0);
        assert!(f.crop(3, 3, 2, 2).is_err());
    }
}

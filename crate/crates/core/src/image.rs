//! Single-channel intensity grids.

use std::ops::{Index, IndexMut};

/// A row-major single-channel intensity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width] }
    }

    /// Wraps existing row-major data. Panics if the length does not match.
    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width, "frame data length mismatch");
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Mean of absolute values.
    pub fn mean_abs(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| f64::from(v.abs())).sum::<f64>() / self.data.len() as f64
    }

    /// Plain mean.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Frame) -> Frame {
        assert_eq!(self.shape(), other.shape(), "frame shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Frame { height: self.height, width: self.width, data }
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Frame) -> Frame {
        assert_eq!(self.shape(), other.shape(), "frame shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Frame { height: self.height, width: self.width, data }
    }

    /// Bilinear sample at a sub-pixel position, clamping to the border.
    pub fn sample(&self, y: f64, x: f64) -> f64 {
        let ymax = (self.height - 1) as f64;
        let xmax = (self.width - 1) as f64;
        let y = y.clamp(0.0, ymax);
        let x = x.clamp(0.0, xmax);
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let fy = y - y0 as f64;
        let fx = x - x0 as f64;
        let p00 = f64::from(self.get(y0, x0));
        let p01 = f64::from(self.get(y0, x1));
        let p10 = f64::from(self.get(y1, x0));
        let p11 = f64::from(self.get(y1, x1));
        (1.0 - fy) * ((1.0 - fx) * p00 + fx * p01) + fy * ((1.0 - fx) * p10 + fx * p11)
    }
}

impl Index<(usize, usize)> for Frame {
    type Output = f32;

    fn index(&self, (y, x): (usize, usize)) -> &f32 {
        &self.data[y * self.width + x]
    }
}

impl IndexMut<(usize, usize)> for Frame {
    fn index_mut(&mut self, (y, x): (usize, usize)) -> &mut f32 {
        &mut self.data[y * self.width + x]
    }
}

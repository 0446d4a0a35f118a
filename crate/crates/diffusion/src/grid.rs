//! Channel-major sample grids (images / latents).

use svdiff_linalg::error::{Error, Result};

use crate::rng::Stream;

/// A `channels x height x width` field of real scalars, row-major with
/// the width index fastest. Pixel values target [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SampleGrid {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels * height * width != data.len() {
            return Err(Error::Shape(format!(
                "grid {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric("non-finite grid entry".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Standard-normal field drawn from `stream`.
    pub fn normal(channels: usize, height: usize, width: usize, stream: &mut Stream) -> Self {
        let data = (0..channels * height * width).map(|_| stream.next_normal()).collect();
        Self {
            channels,
            height,
            width,
            data,
        }
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

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &SampleGrid) -> bool {
        self.shape() == other.shape()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SampleGrid {
        SampleGrid {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &SampleGrid, f: impl Fn(f64, f64) -> f64) -> Result<SampleGrid> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "grid shapes {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(SampleGrid {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scaled_add(&self, own: f64, other: &SampleGrid, theirs: f64) -> Result<SampleGrid> {
        self.zip_map(other, |a, b| own * a + theirs * b)
    }

    pub fn dot(&self, other: &SampleGrid) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::Shape("dot of differently shaped grids".into()));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Mean squared error against `other`.
    pub fn mse(&self, other: &SampleGrid) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::Shape("mse of differently shaped grids".into()));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.data.len() as f64)
    }
}

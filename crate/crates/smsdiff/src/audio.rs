//! Lightweight audio containers.

use crate::error::{Error, Result};

/// A mono audio buffer with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: f64,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: f64) -> Result<Self> {
        if sample_rate <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(AudioBuffer { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// A time series of per-frame vectors at a fixed frame rate, row-major
/// [frames x dim].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    pub data: Vec<f32>,
    pub dim: usize,
    pub frame_rate: f64,
}

impl FrameSeries {
    pub fn new(data: Vec<f32>, dim: usize, frame_rate: f64) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "{} values with dim {dim}", data.len());
        FrameSeries { data, dim, frame_rate }
    }

    /// Dimension-1 series from a plain value-per-frame vector.
    pub fn scalar_series(data: Vec<f32>, frame_rate: f64) -> Self {
        FrameSeries { data, dim: 1, frame_rate }
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Keep only the first `frames` frames.
    pub fn truncate(&mut self, frames: usize) {
        self.data.truncate(frames * self.dim);
    }

    /// The underlying values of a dim-1 series.
    pub fn values(&self) -> &[f32] {
        debug_assert_eq!(self.dim, 1);
        &self.data
    }
}

/// A magnitude spectrogram: `frames` rows of `bins` columns, row-major.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub mag: Vec<f32>,
    pub frames: usize,
    pub bins: usize,
}

impl Spectrogram {
    pub fn row(&self, t: usize) -> &[f32] {
        &self.mag[t * self.bins..(t + 1) * self.bins]
    }
}

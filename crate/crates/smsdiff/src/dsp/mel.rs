//! Mel filterbank and MFCCs.
//!
//! 30 coefficients at 125 Hz: fft 1024, hop 128, 128 triangular mel bands
//! over 20 Hz - 8 kHz on the magnitude spectrum, natural log floored at 1e-5,
//! orthonormal DCT-II.

use crate::audio::{AudioBuffer, FrameSeries};
use crate::dsp::stft::stft;
use crate::error::{Error, Result};

pub const MFCC_DIM: usize = 30;
pub const MFCC_FRAME_RATE: f64 = 125.0;
const FFT_SIZE: usize = 1024;
const HOP: usize = 128;
const N_MELS: usize = 128;
const FMIN: f64 = 20.0;
const FMAX: f64 = 8000.0;
const LOG_FLOOR: f64 = 1e-5;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank [n_mels x bins], peak 1 per band, band edges equally
/// spaced on the mel scale.
fn mel_filterbank(bins: usize, sample_rate: f64) -> Vec<f64> {
    let lo = hz_to_mel(FMIN);
    let hi = hz_to_mel(FMAX);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let mut bank = vec![0.0f64; N_MELS * bins];
    for b in 0..N_MELS {
        let (f_lo, f_mid, f_hi) = (edges[b], edges[b + 1], edges[b + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate / FFT_SIZE as f64;
            let w = if f <= f_lo || f >= f_hi {
                0.0
            } else if f <= f_mid {
                (f - f_lo) / (f_mid - f_lo)
            } else {
                (f_hi - f) / (f_hi - f_mid)
            };
            bank[b * bins + k] = w;
        }
    }
    bank
}

pub fn mfcc(audio: &AudioBuffer) -> Result<FrameSeries> {
    if audio.len() < FFT_SIZE {
        return Err(Error::InvalidArgument(format!(
            "mfcc needs at least {FFT_SIZE} samples, got {}",
            audio.len()
        )));
    }
    let spec = stft(audio, FFT_SIZE, HOP)?;
    let bank = mel_filterbank(spec.bins, audio.sample_rate);
    let norm0 = (1.0 / N_MELS as f64).sqrt();
    let norm = (2.0 / N_MELS as f64).sqrt();
    let mut out = Vec::with_capacity(spec.frames * MFCC_DIM);
    let mut logmel = vec![0.0f64; N_MELS];
    for t in 0..spec.frames {
        let row = spec.row(t);
        for (b, lm) in logmel.iter_mut().enumerate() {
            let mut e = 0.0f64;
            for (k, &m) in row.iter().enumerate() {
                e += bank[b * spec.bins + k] * m as f64;
            }
            *lm = e.max(LOG_FLOOR).ln();
        }
        for j in 0..MFCC_DIM {
            let mut c = 0.0f64;
            for (n, &v) in logmel.iter().enumerate() {
                c += v * (std::f64::consts::PI * j as f64 * (2 * n + 1) as f64 / (2 * N_MELS) as f64).cos();
            }
            out.push((c * if j == 0 { norm0 } else { norm }) as f32);
        }
    }
    Ok(FrameSeries::new(out, MFCC_DIM, MFCC_FRAME_RATE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SAMPLE_RATE;

    fn buffer(samples: Vec<f32>) -> AudioBuffer {
        AudioBuffer::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn silence_is_dct_of_constant_floor() {
        let m = mfcc(&buffer(vec![0.0; 16000])).unwrap();
        // Constant log-floor vector: only the DC coefficient survives, at
        // sqrt(128) * ln(1e-5) under the orthonormal scaling.
        let want0 = (N_MELS as f64).sqrt() * LOG_FLOOR.ln();
        for t in 0..m.num_frames() {
            let f = m.frame(t);
            assert!((f[0] as f64 - want0).abs() < 1e-3, "frame {t}: {}", f[0]);
            for (j, &c) in f.iter().enumerate().skip(1) {
                assert!(c.abs() < 1e-4, "frame {t} coeff {j}: {c}");
            }
        }
    }

    #[test]
    fn two_seconds_gives_250_frames() {
        let x: Vec<f32> = (0..32000).map(|n| (n as f32 * 0.2).sin() * 0.5).collect();
        let m = mfcc(&buffer(x)).unwrap();
        assert_eq!(m.num_frames(), 250);
        assert_eq!(m.dim, 30);
        assert_eq!(m.frame_rate, 125.0);
    }

    #[test]
    fn short_audio_errors() {
        assert!(mfcc(&buffer(vec![0.1; 1023])).is_err());
        assert!(mfcc(&buffer(vec![0.1; 1024])).is_ok());
    }

    #[test]
    fn noise_and_sine_separate_in_coefficient_one() {
        // Spectral tilt differs sharply between a tone and white noise; the
        // first non-DC coefficient captures it far outside the silence spread.
        let sine: Vec<f32> = (0..16000)
            .map(|n| (2.0 * std::f32::consts::PI * 440.0 * n as f32 / 16000.0).sin())
            .collect();
        let mut state = 0x12345678u32;
        let noise: Vec<f32> = (0..16000)
            .map(|_| {
                state = state.wrapping_mul(1664525).wrapping_add(1013904223);
                (state >> 8) as f32 / (1 << 24) as f32 * 2.0 - 1.0
            })
            .collect();
        let c1 = |a: &FrameSeries| -> f64 {
            let n = a.num_frames();
            (0..n).map(|t| a.frame(t)[1] as f64).sum::<f64>() / n as f64
        };
        let silence_frames = mfcc(&buffer(vec![0.0; 16000])).unwrap();
        let spread: f64 = (0..silence_frames.num_frames())
            .map(|t| (silence_frames.frame(t)[1] as f64).abs())
            .fold(0.0, f64::max)
            .max(1e-6);
        let gap = (c1(&mfcc(&buffer(sine)).unwrap()) - c1(&mfcc(&buffer(noise)).unwrap())).abs();
        assert!(gap > 10.0 * spread, "gap {gap} vs spread {spread}");
    }

    #[test]
    fn filterbank_covers_band_without_gaps() {
        let bank = mel_filterbank(513, SAMPLE_RATE);
        // Every bin strictly inside (edge_0, fmax) gets nonzero total weight.
        let lo_hz = mel_to_hz(hz_to_mel(FMIN));
        for k in 0..513 {
            let f = k as f64 * SAMPLE_RATE / FFT_SIZE as f64;
            if f > lo_hz + 40.0 && f < FMAX - 80.0 {
                let total: f64 = (0..N_MELS).map(|b| bank[b * 513 + k]).sum();
                assert!(total > 0.0, "uncovered bin {k} at {f} Hz");
            }
        }
    }
}

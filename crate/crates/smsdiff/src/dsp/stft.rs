//! Short-time Fourier transform with centered frames and reflection padding.
//!
//! Frame t covers samples [t*hop - fft/2, t*hop + fft/2); indices outside the
//! signal fold back by reflection, so the frame count is always ceil(len/hop)
//! regardless of content.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::audio::{AudioBuffer, Spectrogram};
use crate::autodiff::Scalar;
use crate::dsp::fft::rfft;
use crate::dsp::window::hann_periodic;
use crate::error::{Error, Result};

/// Reflect an out-of-range position back into [0, len), mirror at the
/// endpoints without repeating them (period 2*len - 2).
pub fn reflect_index(pos: isize, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut p = pos.rem_euclid(period);
    if p >= len as isize {
        p = period - p;
    }
    p as usize
}

pub fn num_frames(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

/// Flat [num_frames * fft] map from frame cell to source sample index.
/// Shared between the plain STFT and the differentiable framing op so both
/// see bit-identical frames.
pub fn frame_index_map(len: usize, fft_size: usize, hop: usize) -> Arc<Vec<u32>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize, usize), Arc<Vec<u32>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(m) = cache.lock().unwrap().get(&(len, fft_size, hop)) {
        return m.clone();
    }
    let frames = num_frames(len, hop);
    let half = fft_size as isize / 2;
    let mut map = Vec::with_capacity(frames * fft_size);
    for t in 0..frames {
        let start = t as isize * hop as isize - half;
        for i in 0..fft_size as isize {
            map.push(reflect_index(start + i, len) as u32);
        }
    }
    let arc = Arc::new(map);
    cache.lock().unwrap().insert((len, fft_size, hop), arc.clone());
    arc
}

fn check_fft_size(fft_size: usize) -> Result<()> {
    if !fft_size.is_power_of_two() || !(64..=2048).contains(&fft_size) {
        return Err(Error::InvalidArgument(format!(
            "fft size must be a power of two in [64, 2048], got {fft_size}"
        )));
    }
    Ok(())
}

/// Hann-windowed magnitude STFT.
pub fn stft(audio: &AudioBuffer, fft_size: usize, hop: usize) -> Result<Spectrogram> {
    check_fft_size(fft_size)?;
    if audio.is_empty() {
        return Err(Error::InvalidArgument("stft of empty audio".into()));
    }
    if hop == 0 || hop > fft_size {
        return Err(Error::InvalidArgument(format!(
            "hop must be in (0, fft_size], got {hop} for fft {fft_size}"
        )));
    }
    let window: Vec<f32> = hann_periodic(fft_size);
    let map = frame_index_map(audio.len(), fft_size, hop);
    let frames = num_frames(audio.len(), hop);
    let bins = fft_size / 2 + 1;
    let mut mags = Vec::with_capacity(frames * bins);
    let mut frame = vec![0.0f32; fft_size];
    for t in 0..frames {
        let idx = &map[t * fft_size..(t + 1) * fft_size];
        for (i, (&src, w)) in idx.iter().zip(&window).enumerate() {
            frame[i] = audio.samples[src as usize] * w;
        }
        for c in rfft(&frame) {
            mags.push(c.norm());
        }
    }
    Ok(Spectrogram { mag: mags, frames, bins })
}

/// Windowed frames of a signal as a [frames x fft] matrix, generic over the
/// sample type. The framing grid is identical to [`stft`].
pub fn windowed_frames<F: Scalar>(
    signal: &[F],
    fft_size: usize,
    hop: usize,
    window: &[F],
) -> crate::autodiff::Tensor<F> {
    let map = frame_index_map(signal.len(), fft_size, hop);
    let frames = num_frames(signal.len(), hop);
    let mut out = crate::autodiff::Tensor::zeros(frames, fft_size);
    for t in 0..frames {
        let idx = &map[t * fft_size..(t + 1) * fft_size];
        let row = out.row_mut(t);
        for (i, &src) in idx.iter().enumerate() {
            row[i] = signal[src as usize] * window[i];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SAMPLE_RATE;

    fn buffer(samples: Vec<f32>) -> AudioBuffer {
        AudioBuffer::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn reflect_index_mirrors_without_repeating_edges() {
        // len 5: ... 3 2 1 | 0 1 2 3 4 | 3 2 1 0 1 ...
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-4, 5), 4);
        assert_eq!(reflect_index(0, 5), 0);
        assert_eq!(reflect_index(4, 5), 4);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(8, 5), 0);
        assert_eq!(reflect_index(9, 5), 1);
        assert_eq!(reflect_index(-3, 1), 0);
    }

    #[test]
    fn silence_gives_zero_magnitudes() {
        let s = stft(&buffer(vec![0.0; 16000]), 2048, 512).unwrap();
        assert_eq!(s.frames, num_frames(16000, 512));
        assert_eq!(s.bins, 1025);
        assert!(s.mag.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn impulse_at_frame_center_has_flat_spectrum() {
        // Impulse at sample 3*hop lands on the center tap of frame 3, where
        // the periodic Hann window is exactly 1, so every bin reads 1.0.
        let fft = 64;
        let hop = 32;
        let mut x = vec![0.0f32; 512];
        x[3 * hop] = 1.0;
        let s = stft(&buffer(x), fft, hop).unwrap();
        let w: Vec<f32> = hann_periodic(fft);
        assert_eq!(w[fft / 2], 1.0);
        for b in 0..s.bins {
            let m = s.row(3)[b];
            assert!((m - w[fft / 2]).abs() < 1e-6, "bin {b}: {m}");
        }
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let f = 440.0;
        let x: Vec<f32> = (0..16000)
            .map(|n| (2.0 * std::f32::consts::PI * f * n as f32 / 16000.0).sin())
            .collect();
        let s = stft(&buffer(x), 2048, 512).unwrap();
        let expect = (f * 2048.0 / 16000.0).round() as usize;
        assert_eq!(expect, 56);
        // Interior frames only; edge frames see reflected content.
        for t in 5..s.frames - 5 {
            let row = s.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, expect, "frame {t}");
        }
    }

    #[test]
    fn parseval_energy_identity_per_frame() {
        // sum w^2 x^2 over a frame == (2/N) * (interior |X|^2 sum, DC and
        // Nyquist at half weight).
        let fft = 256;
        let hop = 64;
        let x: Vec<f32> = (0..4096)
            .map(|n| ((n as f32 * 0.11).sin() + 0.3 * (n as f32 * 0.037).cos()) * 0.5)
            .collect();
        let audio = buffer(x.clone());
        let s = stft(&audio, fft, hop).unwrap();
        let w: Vec<f64> = hann_periodic(fft);
        let map = frame_index_map(x.len(), fft, hop);
        for t in 0..s.frames {
            let mut time_energy = 0.0f64;
            for i in 0..fft {
                let v = x[map[t * fft + i] as usize] as f64 * w[i];
                time_energy += v * v;
            }
            let row = s.row(t);
            let mut spec = 0.5 * (row[0] as f64).powi(2) + 0.5 * (row[s.bins - 1] as f64).powi(2);
            for &m in &row[1..s.bins - 1] {
                spec += (m as f64).powi(2);
            }
            spec *= 2.0 / fft as f64;
            let rel = (time_energy - spec).abs() / time_energy.max(1e-12);
            assert!(rel < 1e-4, "frame {t}: {time_energy} vs {spec}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(stft(&buffer(vec![]), 256, 64).is_err());
        assert!(stft(&buffer(vec![0.0; 100]), 100, 25).is_err());
        assert!(stft(&buffer(vec![0.0; 100]), 32, 8).is_err());
        assert!(stft(&buffer(vec![0.0; 100]), 4096, 1024).is_err());
        assert!(stft(&buffer(vec![0.0; 100]), 256, 0).is_err());
        assert!(stft(&buffer(vec![0.0; 100]), 256, 512).is_err());
    }

    #[test]
    fn frame_count_is_ceil_len_over_hop() {
        for len in [63, 64, 65, 1000, 16000] {
            let s = stft(&buffer(vec![0.1; len]), 64, 64).unwrap();
            assert_eq!(s.frames, len.div_ceil(64));
        }
    }
}

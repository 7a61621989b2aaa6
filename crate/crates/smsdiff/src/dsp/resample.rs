//! Sample-rate conversion and frame-rate upsampling.

use crate::audio::{AudioBuffer, FrameSeries};
use crate::autodiff::Tensor;
use crate::dsp::window::hamming_at;
use crate::error::{Error, Result};
use crate::SAMPLE_RATE;

/// Windowed-sinc resampler (64 taps, Hann-windowed, kernel normalized per
/// output sample so constants map to constants). Ingest-only path.
pub fn resample_to_16k(audio: &AudioBuffer) -> AudioBuffer {
    if audio.sample_rate == SAMPLE_RATE {
        return audio.clone();
    }
    let ratio = audio.sample_rate / SAMPLE_RATE;
    let out_len = (audio.len() as f64 / ratio).floor() as usize;
    // Anti-alias cutoff as a fraction of the source Nyquist, pulled in
    // slightly so the transition band stays inside the narrower of the two.
    let cutoff = 0.92 * (1.0 / ratio).min(1.0);
    let mut out = Vec::with_capacity(out_len);
    let n = audio.len() as isize;
    for i in 0..out_len {
        let center = i as f64 * ratio;
        let base = center.floor() as isize;
        let mut acc = 0.0f64;
        let mut wsum = 0.0f64;
        for j in (base - 31)..=(base + 32) {
            let x = center - j as f64;
            let u = x / 32.0;
            if u.abs() >= 1.0 {
                continue;
            }
            let win = 0.5 + 0.5 * (std::f64::consts::PI * u).cos();
            let arg = std::f64::consts::PI * cutoff * x;
            let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
            let w = cutoff * sinc * win;
            let idx = j.clamp(0, n - 1) as usize;
            acc += w * audio.samples[idx] as f64;
            wsum += w;
        }
        out.push((acc / wsum) as f32);
    }
    AudioBuffer { samples: out, sample_rate: SAMPLE_RATE }
}

/// Interpolation support for one output position: (left frame, right frame,
/// blend toward the right). When the target length is a whole multiple of the
/// frame count, frame j lands exactly on output sample j*hop and the tail
/// holds the last value; otherwise endpoints align and the ramp is uniform.
pub(crate) fn linear_support(i: usize, frames: usize, target_len: usize) -> (usize, usize, f64) {
    debug_assert!(frames > 0 && target_len > 0);
    if frames == 1 || target_len == 1 {
        return (0, 0, 0.0);
    }
    if target_len % frames == 0 {
        let hop = target_len / frames;
        let j = i / hop;
        if j >= frames - 1 {
            return (frames - 1, frames - 1, 0.0);
        }
        (j, j + 1, (i - j * hop) as f64 / hop as f64)
    } else {
        let p = i as f64 * (frames - 1) as f64 / (target_len - 1) as f64;
        let j = (p.floor() as usize).min(frames - 2);
        (j, j + 1, p - j as f64)
    }
}

/// Piecewise-linear upsampling of a dim-1 series to `target_len` samples.
pub fn upsample_bilinear(frames: &FrameSeries, target_len: usize) -> Result<Vec<f32>> {
    if frames.dim != 1 {
        return Err(Error::InvalidArgument(format!(
            "bilinear upsampling expects dim 1, got {}",
            frames.dim
        )));
    }
    if frames.num_frames() == 0 {
        return Err(Error::InvalidArgument("bilinear upsampling of empty series".into()));
    }
    if target_len == 0 {
        return Err(Error::InvalidArgument("target length must be >= 1".into()));
    }
    let v = frames.values();
    Ok((0..target_len)
        .map(|i| {
            let (a, b, w) = linear_support(i, v.len(), target_len);
            (v[a] as f64 * (1.0 - w) + v[b] as f64 * w) as f32
        })
        .collect())
}

/// Contributions of a smoothing window to output sample `n`: up to two frames
/// whose Hamming windows (span (-hop, hop) around each frame center t*hop)
/// cover the sample, with raw window weights.
pub(crate) fn smooth_support(n: usize, hop: usize, frames: usize) -> ([(usize, f64); 2], usize) {
    let t0 = n / hop;
    let mut out = [(0usize, 0.0f64); 2];
    let mut count = 0;
    if t0 < frames {
        let delta = (n - t0 * hop) as f64;
        if delta < hop as f64 {
            out[count] = (t0, hamming_at(delta, hop as f64));
            count += 1;
        }
    }
    let t1 = t0 + 1;
    if t1 < frames {
        let delta = (t1 * hop - n) as f64;
        if delta < hop as f64 && delta > 0.0 {
            out[count] = (t1, hamming_at(delta, hop as f64));
            count += 1;
        }
    }
    (out, count)
}

/// Spread each frame by a Hamming window of length 2*hop centered on its
/// frame position, overlap-add, and normalize by the total window weight per
/// output sample so constants pass through unchanged. Output [frames*hop x dim].
pub fn smooth_upsample_hamming(frames: &FrameSeries, hop: usize) -> Tensor<f32> {
    assert!(hop >= 1, "hop must be >= 1");
    let t_frames = frames.num_frames();
    let dim = frames.dim;
    let target = t_frames * hop;
    let mut out = Tensor::zeros(target, dim);
    for n in 0..target {
        let (support, count) = smooth_support(n, hop, t_frames);
        let wsum: f64 = support[..count].iter().map(|(_, w)| w).sum();
        let row = out.row_mut(n);
        for &(t, w) in &support[..count] {
            let frame = frames.frame(t);
            let norm = w / wsum;
            for (d, item) in row.iter_mut().enumerate() {
                *item += (frame[d] as f64 * norm) as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: Vec<f32>) -> FrameSeries {
        FrameSeries::scalar_series(v, 250.0)
    }

    #[test]
    fn constant_series_upsamples_to_constant() {
        let out = upsample_bilinear(&series(vec![5.0, 5.0, 5.0]), 100).unwrap();
        assert!(out.iter().all(|&v| (v - 5.0).abs() < 1e-9));
    }

    #[test]
    fn two_point_ramp_to_five() {
        let out = upsample_bilinear(&series(vec![0.0, 1.0]), 5).unwrap();
        let want = [0.0, 0.25, 0.5, 0.75, 1.0];
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-7, "{out:?}");
        }
    }

    #[test]
    fn round_trip_recovers_frames_at_centers() {
        let v: Vec<f32> = (0..250).map(|i| ((i as f32 * 0.71).sin() * 3.0).fract()).collect();
        let out = upsample_bilinear(&series(v.clone()), 16000).unwrap();
        // 16000 = 250 * 64, so frame j sits exactly at sample 64*j.
        for (j, &x) in v.iter().enumerate() {
            assert!((out[j * 64] - x).abs() < 1e-6, "frame {j}");
        }
        // Tail beyond the last center holds the final value.
        assert!((out[15999] - v[249]).abs() < 1e-6);
    }

    #[test]
    fn degenerate_lengths() {
        assert_eq!(upsample_bilinear(&series(vec![2.5]), 4).unwrap(), vec![2.5; 4]);
        assert_eq!(upsample_bilinear(&series(vec![1.0, 3.0]), 1).unwrap(), vec![1.0]);
        assert!(upsample_bilinear(&series(vec![]), 4).is_err());
        assert!(upsample_bilinear(&series(vec![1.0]), 0).is_err());
    }

    #[test]
    fn smooth_upsample_maps_constant_to_constant() {
        let f = FrameSeries::new(vec![1.0; 8 * 3], 3, 250.0);
        let out = smooth_upsample_hamming(&f, 64);
        assert_eq!(out.shape(), (512, 3));
        for v in &out.data {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_frame_is_a_hamming_bump() {
        let mut v = vec![0.0f32; 8];
        v[4] = 1.0;
        let out = smooth_upsample_hamming(&series(v), 64);
        for n in 0..512 {
            // Direct evaluation of the defining formula at sample n.
            let (support, count) = smooth_support(n, 64, 8);
            let wsum: f64 = support[..count].iter().map(|(_, w)| w).sum();
            let want: f64 = support[..count]
                .iter()
                .filter(|(t, _)| *t == 4)
                .map(|(_, w)| w / wsum)
                .sum();
            assert!((out.get(n, 0) as f64 - want).abs() < 1e-6, "sample {n}");
            if n + 64 < 4 * 64 || n > 5 * 64 {
                assert_eq!(out.get(n, 0), 0.0, "outside the window at {n}");
            }
        }
        // Frame centers read back exactly.
        assert!((out.get(256, 0) - 1.0).abs() < 1e-9);
        assert_eq!(out.get(192, 0), 0.0);
    }

    #[test]
    fn alternating_frames_stay_in_unit_interval() {
        let v: Vec<f32> = (0..16).map(|i| (i % 2) as f32).collect();
        let out = smooth_upsample_hamming(&series(v), 64);
        for &x in &out.data {
            assert!((-1e-9..=1.0 + 1e-9).contains(&(x as f64)), "{x}");
        }
    }

    #[test]
    fn resample_identity_at_16k() {
        let a = AudioBuffer::new(vec![0.1, -0.2, 0.3], SAMPLE_RATE).unwrap();
        assert_eq!(resample_to_16k(&a).samples, a.samples);
    }

    #[test]
    fn resample_48k_sine_keeps_frequency() {
        let sr = 48000.0;
        let x: Vec<f32> = (0..48000)
            .map(|n| (2.0 * std::f32::consts::PI * 440.0 * n as f32 / sr as f32).sin())
            .collect();
        let out = resample_to_16k(&AudioBuffer::new(x, sr).unwrap());
        assert_eq!(out.sample_rate, SAMPLE_RATE);
        assert!((out.len() as i64 - 16000).unsigned_abs() < 2);
        // Dominant bin at 440 Hz.
        let spec = crate::dsp::stft::stft(&out, 2048, 512).unwrap();
        let row = spec.row(spec.frames / 2);
        let argmax = row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        assert_eq!(argmax, 56);
    }

    #[test]
    fn resample_preserves_dc() {
        let a = AudioBuffer::new(vec![0.5; 44100], 44100.0).unwrap();
        let out = resample_to_16k(&a);
        for &v in &out.samples[50..out.len() - 50] {
            assert!((v - 0.5).abs() < 1e-6, "{v}");
        }
    }
}

//! Additive bank of phase-locked sinusoids at integer multiples of f0.

use crate::audio::{AudioBuffer, FrameSeries};
use crate::autodiff::Tensor;
use crate::dsp::resample::{smooth_upsample_hamming, upsample_bilinear};
use crate::error::Result;
use crate::CONTROL_HOP;

use super::SynthControls;

/// Highest retained harmonic frequency as a fraction of Nyquist. The control
/// envelopes amplitude-modulate each partial at the frame rate, spreading
/// sidebands a few hundred hertz around it; the guard band keeps those
/// sidebands of the topmost partial well under Nyquist instead of letting
/// them leak into the top of the band.
pub const HARMONIC_BANDWIDTH_FRACTION: f64 = 0.92;

/// Per-frame 0/1 mask over harmonics: entry (t, k) is 1 when harmonic k+1 of
/// f0[t] stays inside the retained band.
pub fn nyquist_mask(f0: &FrameSeries, harmonics: usize, sample_rate: f64) -> Tensor<f32> {
    let limit = HARMONIC_BANDWIDTH_FRACTION * sample_rate / 2.0;
    let frames = f0.num_frames();
    let mut mask = Tensor::zeros(frames, harmonics);
    for t in 0..frames {
        let hz = f0.values()[t] as f64;
        let row = mask.row_mut(t);
        for (k, m) in row.iter_mut().enumerate() {
            if (k + 1) as f64 * hz <= limit {
                *m = 1.0;
            }
        }
    }
    mask
}

/// Mask the distribution against Nyquist, then renormalize each row to sum
/// to 1 (all-masked rows stay zero).
pub fn masked_distribution(
    harm: &FrameSeries,
    f0: &FrameSeries,
    sample_rate: f64,
) -> Tensor<f32> {
    let mask = nyquist_mask(f0, harm.dim, sample_rate);
    let frames = harm.num_frames();
    let mut out = Tensor::zeros(frames, harm.dim);
    for t in 0..frames {
        let c = harm.frame(t);
        let m = mask.row(t);
        let row = out.row_mut(t);
        let mut sum = 0.0f64;
        for k in 0..c.len() {
            let v = c[k] as f64 * m[k] as f64;
            row[k] = v as f32;
            sum += v;
        }
        if sum > 0.0 {
            for item in row.iter_mut() {
                *item = (*item as f64 / sum) as f32;
            }
        }
    }
    out
}

/// Per-sample running phase of the fundamental in [0, 2pi): each sample adds
/// 2pi * f0 / sample_rate, starting from zero. Harmonic k uses k times this
/// phase, which is congruent mod 2pi with accumulating k * f0 directly.
pub fn phase_track(f0_per_sample: &[f32], sample_rate: f64) -> Vec<f64> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut phase = Vec::with_capacity(f0_per_sample.len());
    let mut phi = 0.0f64;
    for (n, &hz) in f0_per_sample.iter().enumerate() {
        if n > 0 {
            phi += two_pi * hz as f64 / sample_rate;
            if phi >= two_pi {
                phi -= two_pi;
            }
        }
        phase.push(phi);
    }
    phase
}

/// Sine of every harmonic at every sample: rows are samples, column k holds
/// sin((k+1) * phi(n)). The heavy constant factor shared by the training
/// graph and the plain renderer.
pub fn sin_matrix(f0: &FrameSeries, harmonics: usize, sample_rate: f64) -> Result<Tensor<f32>> {
    let samples = f0.num_frames() * CONTROL_HOP;
    let f0_up = upsample_bilinear(f0, samples)?;
    let phase = phase_track(&f0_up, sample_rate);
    let mut out = Tensor::zeros(samples, harmonics);
    for (n, &phi) in phase.iter().enumerate() {
        let row = out.row_mut(n);
        for (k, item) in row.iter_mut().enumerate() {
            *item = ((k + 1) as f64 * phi).sin() as f32;
        }
    }
    Ok(out)
}

/// Render the harmonic component: amplitude times the masked, renormalized
/// distribution over phase-locked sinusoids.
pub fn harmonic_synth(controls: &SynthControls, sample_rate: f64) -> Result<AudioBuffer> {
    controls.validate()?;
    let frames = controls.num_frames();
    let harmonics = controls.harm_distribution.dim;
    let samples = frames * CONTROL_HOP;

    let dist = masked_distribution(&controls.harm_distribution, &controls.f0_hz, sample_rate);
    let dist = FrameSeries::new(dist.data, harmonics, controls.harm_distribution.frame_rate);
    let c_up = smooth_upsample_hamming(&dist, CONTROL_HOP);
    let a_up = smooth_upsample_hamming(&controls.amplitude, CONTROL_HOP);

    let f0_up = upsample_bilinear(&controls.f0_hz, samples)?;
    let phase = phase_track(&f0_up, sample_rate);

    let mut out = vec![0.0f32; samples];
    for n in 0..samples {
        let c = c_up.row(n);
        let phi = phase[n];
        let mut acc = 0.0f64;
        for (k, &ck) in c.iter().enumerate() {
            acc += ck as f64 * ((k + 1) as f64 * phi).sin();
        }
        out[n] = (a_up.row(n)[0] as f64 * acc) as f32;
    }
    AudioBuffer::new(out, sample_rate)
}

//! A-weighted loudness at the control frame rate.
//!
//! Per frame: Hann-windowed power spectrum (fft 2048, hop 64), each bin
//! scaled by the analog A-curve gain, summed, and expressed in dB where 0 dB
//! is the power of a full-scale sine. Everything accumulates in f64 so gain
//! scaling shifts readings by exactly 20 log10(g) dB.

use crate::audio::{AudioBuffer, FrameSeries};
use crate::dsp::fft::rfft;
use crate::dsp::stft::{frame_index_map, num_frames};
use crate::dsp::window::hann_periodic;
use crate::error::{Error, Result};
use crate::{CONTROL_HOP, CONTROL_RATE};

pub const LOUDNESS_FLOOR_DB: f32 = -120.0;
const FFT_SIZE: usize = 2048;

/// Squared A-curve response: the power-domain gain 10^(A_dB(f)/10).
/// A_dB(f) = 20 log10(R_A(f)) + 2.0, so the gain is R_A(f)^2 * 10^0.2,
/// which stays well-defined at f = 0 where R_A vanishes.
pub fn a_weight_power_gain(f: f64) -> f64 {
    let f2 = f * f;
    let num = 12194.0f64.powi(2) * f2 * f2;
    let den = (f2 + 20.6f64.powi(2))
        * ((f2 + 107.7f64.powi(2)) * (f2 + 737.9f64.powi(2))).sqrt()
        * (f2 + 12194.0f64.powi(2));
    let ra = num / den;
    ra * ra * 10f64.powf(0.2)
}

/// A-curve in dB, for reporting and tests.
pub fn a_weight_db(f: f64) -> f64 {
    10.0 * a_weight_power_gain(f).log10()
}

/// Per-frame loudness in f64, before the floor clamp. Kept at full precision
/// so gain scaling provably shifts readings by 20 log10(g).
pub(crate) fn loudness_db_f64(audio: &AudioBuffer) -> Result<Vec<f64>> {
    if audio.is_empty() {
        return Err(Error::InvalidArgument("loudness of empty audio".into()));
    }
    let window: Vec<f64> = hann_periodic(FFT_SIZE);
    let gains: Vec<f64> = (0..FFT_SIZE / 2 + 1)
        .map(|k| a_weight_power_gain(k as f64 * audio.sample_rate / FFT_SIZE as f64))
        .collect();
    // Full-scale sine through the Hann window puts 3N^2/32 of squared
    // magnitude at the peak and its two neighbours (one-sided); doubled for
    // the mirrored bins this is the 0 dB reference.
    let reference = 3.0 * (FFT_SIZE as f64).powi(2) / 16.0;

    let frames = num_frames(audio.len(), CONTROL_HOP);
    let map = frame_index_map(audio.len(), FFT_SIZE, CONTROL_HOP);
    let mut out = Vec::with_capacity(frames);
    let mut frame = vec![0.0f64; FFT_SIZE];
    for t in 0..frames {
        let idx = &map[t * FFT_SIZE..(t + 1) * FFT_SIZE];
        for (i, &src) in idx.iter().enumerate() {
            frame[i] = audio.samples[src as usize] as f64 * window[i];
        }
        let spec = rfft(&frame);
        let mut power = 0.0f64;
        for (k, c) in spec.iter().enumerate() {
            let mult = if k == 0 || k == FFT_SIZE / 2 { 1.0 } else { 2.0 };
            power += mult * gains[k] * c.norm_sqr();
        }
        out.push(10.0 * (power / reference).log10());
    }
    Ok(out)
}

pub fn a_weighted_loudness(audio: &AudioBuffer) -> Result<FrameSeries> {
    let db = loudness_db_f64(audio)?;
    let out = db.iter().map(|&v| (v.max(LOUDNESS_FLOOR_DB as f64)) as f32).collect();
    Ok(FrameSeries::scalar_series(out, CONTROL_RATE))
}

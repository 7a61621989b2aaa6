//! Spectrogram distance summed over a pyramid of resolutions.

use std::sync::Arc;

use crate::audio::AudioBuffer;
use crate::autodiff::{Scalar, Tape, Tensor, VarId};
use crate::dsp::stft::stft;
use crate::dsp::window::hann_periodic;
use crate::error::{Error, Result};

/// FFT sizes of the pyramid, hop is a quarter of each.
pub const LOSS_FFT_SIZES: [usize; 6] = [2048, 1024, 512, 256, 128, 64];

/// Added inside every log so silent bins stay finite.
pub const LOG_FLOOR: f32 = 1e-7;

/// Per-scale and total distance. `total` is exactly the sum of the parts.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub total: f64,
    pub per_fft: Vec<(usize, f64)>,
}

impl LossReport {
    pub fn get(&self, fft: usize) -> Option<f64> {
        self.per_fft.iter().find(|(s, _)| *s == fft).map(|(_, v)| *v)
    }
}

fn check_compatible(target: &AudioBuffer, prediction: &AudioBuffer) -> Result<()> {
    if target.len() != prediction.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: target {} vs prediction {}",
            target.len(),
            prediction.len()
        )));
    }
    if target.sample_rate != prediction.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "sample rate mismatch: {} vs {}",
            target.sample_rate, prediction.sample_rate
        )));
    }
    if target.is_empty() {
        return Err(Error::InvalidArgument("empty signals".into()));
    }
    Ok(())
}

/// Mean L1 between magnitude spectrograms plus mean L1 between their logs,
/// at every pyramid scale.
pub fn multiscale_spectral_loss(
    target: &AudioBuffer,
    prediction: &AudioBuffer,
) -> Result<LossReport> {
    check_compatible(target, prediction)?;
    let mut per_fft = Vec::with_capacity(LOSS_FFT_SIZES.len());
    let mut total = 0.0f64;
    for &fft in &LOSS_FFT_SIZES {
        let s = stft(target, fft, fft / 4)?;
        let p = stft(prediction, fft, fft / 4)?;
        debug_assert_eq!((s.frames, s.bins), (p.frames, p.bins));
        let mut lin = 0.0f64;
        let mut log = 0.0f64;
        for (a, b) in s.mag.iter().zip(&p.mag) {
            lin += (a - b).abs() as f64;
            // Matches the graph path: floor and log at f32.
            log += ((a + LOG_FLOOR).ln() - (b + LOG_FLOOR).ln()).abs() as f64;
        }
        let cells = s.mag.len() as f64;
        let li = lin / cells + log / cells;
        per_fft.push((fft, li));
        total += li;
    }
    Ok(LossReport { total, per_fft })
}

/// The pyramid's target-side spectrograms, precomputed once per training
/// item: per scale the magnitudes and their floored logs.
#[derive(Debug, Clone)]
pub struct SpectralTargets<F: Scalar = f32> {
    pub scales: Vec<(usize, Arc<Tensor<F>>, Arc<Tensor<F>>)>,
}

impl SpectralTargets<f32> {
    pub fn from_audio(target: &AudioBuffer) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::InvalidArgument("empty target".into()));
        }
        let mut scales = Vec::with_capacity(LOSS_FFT_SIZES.len());
        for &fft in &LOSS_FFT_SIZES {
            let s = stft(target, fft, fft / 4)?;
            let mag = Tensor::from_vec(s.frames, s.bins, s.mag);
            let log = mag.map(|v| (v + LOG_FLOOR).ln());
            scales.push((fft, Arc::new(mag), Arc::new(log)));
        }
        Ok(SpectralTargets { scales })
    }

    /// Bit-preserving widening for the 64-bit verification graph. The
    /// targets are constants, so keeping their 32-bit values does not
    /// affect gradient accuracy.
    pub fn widen(&self) -> SpectralTargets<f64> {
        SpectralTargets {
            scales: self
                .scales
                .iter()
                .map(|(fft, mag, log)| {
                    (*fft, Arc::new(mag.to_f64()), Arc::new(log.to_f64()))
                })
                .collect(),
        }
    }
}

impl<F: Scalar> SpectralTargets<F> {
    /// Number of samples the prediction must have to match the stored shapes.
    pub fn expects_len(&self, len: usize) -> bool {
        self.scales.iter().all(|(fft, mag, _)| {
            mag.rows == crate::dsp::stft::num_frames(len, fft / 4)
        })
    }
}

/// Build the differentiable distance from a 1xL prediction node to the
/// precomputed targets. Returns the total plus each scale's node.
pub fn spectral_loss_graph<F: Scalar>(
    tape: &mut Tape<F>,
    prediction: VarId,
    targets: &SpectralTargets<F>,
) -> Result<(VarId, Vec<(usize, VarId)>)> {
    let mut per_fft = Vec::with_capacity(targets.scales.len());
    let mut total: Option<VarId> = None;
    for (fft, mag_t, log_t) in &targets.scales {
        let window = Arc::new(hann_periodic::<F>(*fft));
        let frames = tape.frame_window(prediction, *fft, fft / 4, window)?;
        let mag = tape.fft_real_mag(frames)?;
        let lin_diff = tape.sub_const_elem(mag, Arc::clone(mag_t))?;
        let lin_abs = tape.abs(lin_diff);
        let lin = tape.mean_all(lin_abs);
        let log_mag = tape.log_eps(mag, F::from_f64(LOG_FLOOR as f64));
        let log_diff = tape.sub_const_elem(log_mag, Arc::clone(log_t))?;
        let log_abs = tape.abs(log_diff);
        let log = tape.mean_all(log_abs);
        let li = tape.add(lin, log)?;
        per_fft.push((*fft, li));
        total = Some(match total {
            Some(t) => tape.add(t, li)?,
            None => li,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidArgument("no scales".into()))?;
    Ok((total, per_fft))
}

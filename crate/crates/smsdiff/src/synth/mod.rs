//! Spectral-modeling synthesizers and the reconstruction loss.

pub mod harmonic;
pub mod loss;
pub mod noise;
pub mod reverb;

use crate::audio::{AudioBuffer, FrameSeries};
use crate::error::{Error, Result};

pub use harmonic::harmonic_synth;
pub use loss::{multiscale_spectral_loss, LossReport, LOSS_FFT_SIZES};
pub use noise::{filtered_noise, NOISE_FFT, NOISE_HOP};
pub use reverb::{apply_reverb, ReverbParams};

/// Frame-rate control signals driving both synthesizers: global amplitude,
/// per-harmonic distribution, per-band noise filter magnitudes, and pitch.
#[derive(Debug, Clone)]
pub struct SynthControls {
    pub amplitude: FrameSeries,
    pub harm_distribution: FrameSeries,
    pub noise_magnitudes: FrameSeries,
    pub f0_hz: FrameSeries,
}

impl SynthControls {
    /// Number of control frames; valid controls keep all series in step.
    pub fn num_frames(&self) -> usize {
        self.amplitude.num_frames()
    }

    pub fn validate(&self) -> Result<()> {
        let frames = self.amplitude.num_frames();
        for (name, series, dim_one) in [
            ("amplitude", &self.amplitude, true),
            ("harm_distribution", &self.harm_distribution, false),
            ("noise_magnitudes", &self.noise_magnitudes, false),
            ("f0_hz", &self.f0_hz, true),
        ] {
            if series.num_frames() != frames {
                return Err(Error::InvalidArgument(format!(
                    "{name}: {} frames, expected {frames}",
                    series.num_frames()
                )));
            }
            if dim_one && series.dim != 1 {
                return Err(Error::InvalidArgument(format!(
                    "{name}: dim {}, expected 1",
                    series.dim
                )));
            }
            if series.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name}: values must be finite and non-negative"
                )));
            }
        }
        if self.noise_magnitudes.dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "noise_magnitudes: dim {} < 2",
                self.noise_magnitudes.dim
            )));
        }
        Ok(())
    }
}

/// Full render: harmonic plus filtered noise, then the room response when
/// one is given.
pub fn render(
    controls: &SynthControls,
    reverb: Option<&ReverbParams>,
    seed: u64,
) -> Result<AudioBuffer> {
    controls.validate()?;
    let harmonic = harmonic_synth(controls, crate::SAMPLE_RATE)?;
    let noise = filtered_noise(&controls.noise_magnitudes, crate::SAMPLE_RATE, seed)?;
    debug_assert_eq!(harmonic.len(), noise.len());
    let samples = harmonic
        .samples
        .iter()
        .zip(&noise.samples)
        .map(|(a, b)| a + b)
        .collect();
    let dry = AudioBuffer::new(samples, crate::SAMPLE_RATE)?;
    Ok(match reverb {
        Some(params) => apply_reverb(&dry, params),
        None => dry,
    })
}

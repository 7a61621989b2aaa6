//! Room response as a trainable one-second impulse response.

use rustfft::num_complex::Complex;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Impulse response length: one second at the global sample rate.
pub const REVERB_IR_LEN: usize = 16_000;

/// Trainable room response. Tap 0 never reaches the wet path — the dry
/// signal is always passed through unscaled, so the response cannot learn a
/// plain identity bypass.
#[derive(Debug, Clone)]
pub struct ReverbParams {
    pub impulse_response: Vec<f32>,
}

impl ReverbParams {
    pub fn new(impulse_response: Vec<f32>) -> Result<Self> {
        if impulse_response.len() != REVERB_IR_LEN {
            return Err(Error::InvalidArgument(format!(
                "impulse response has {} taps, expected {REVERB_IR_LEN}",
                impulse_response.len()
            )));
        }
        if impulse_response.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("impulse response must be finite".into()));
        }
        Ok(ReverbParams { impulse_response })
    }

    pub fn zeros() -> Self {
        ReverbParams { impulse_response: vec![0.0; REVERB_IR_LEN] }
    }
}

/// dry + (dry convolved with the response, tap 0 removed), truncated to the
/// dry length. The convolution runs in the frequency domain at f64.
pub fn apply_reverb(dry: &AudioBuffer, params: &ReverbParams) -> AudioBuffer {
    let len = dry.len();
    if len == 0 {
        return dry.clone();
    }
    let ir = &params.impulse_response;
    let fft_len = (len + ir.len() - 1).next_power_of_two();
    let zero = Complex::new(0.0f64, 0.0);

    let mut dry_spec = vec![zero; fft_len];
    for (b, &v) in dry_spec.iter_mut().zip(&dry.samples) {
        b.re = v as f64;
    }
    let mut ir_spec = vec![zero; fft_len];
    for (b, &v) in ir_spec.iter_mut().zip(ir) {
        b.re = v as f64;
    }
    ir_spec[0].re = 0.0; // tap 0 excluded from the wet path

    use crate::autodiff::Scalar;
    f64::fft(&mut dry_spec, false);
    f64::fft(&mut ir_spec, false);
    let mut prod: Vec<Complex<f64>> =
        dry_spec.iter().zip(&ir_spec).map(|(a, b)| a * b).collect();
    f64::fft(&mut prod, true);

    let inv_n = 1.0 / fft_len as f64;
    let samples = (0..len)
        .map(|n| (dry.samples[n] as f64 + prod[n].re * inv_n) as f32)
        .collect();
    AudioBuffer { samples, sample_rate: dry.sample_rate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SAMPLE_RATE;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioBuffer::new((0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect(), SAMPLE_RATE)
            .unwrap()
    }

    #[test]
    fn zero_response_is_identity() {
        let dry = noise(5000, 1);
        let out = apply_reverb(&dry, &ReverbParams::zeros());
        assert_eq!(out.samples, dry.samples);
    }

    #[test]
    fn unit_tap_delays_by_its_offset() {
        let dry = noise(8000, 2);
        let mut ir = vec![0.0f32; REVERB_IR_LEN];
        ir[1600] = 1.0;
        let out = apply_reverb(&dry, &ReverbParams::new(ir).unwrap());
        for n in 0..dry.len() {
            let want = dry.samples[n] + if n >= 1600 { dry.samples[n - 1600] } else { 0.0 };
            assert!((out.samples[n] - want).abs() < 1e-5, "sample {n}");
        }
    }

    #[test]
    fn matches_direct_time_domain_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dry = noise(2000, 4);
        let ir: Vec<f32> = (0..REVERB_IR_LEN).map(|_| rng.gen_range(-0.01f32..0.01)).collect();
        let out = apply_reverb(&dry, &ReverbParams::new(ir.clone()).unwrap());
        for n in 0..dry.len() {
            let mut want = dry.samples[n] as f64;
            for tau in 1..=n {
                want += ir[tau] as f64 * dry.samples[n - tau] as f64;
            }
            assert!((out.samples[n] as f64 - want).abs() < 1e-5, "sample {n}");
        }
    }

    #[test]
    fn tap_zero_never_contributes() {
        let dry = noise(3000, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ir: Vec<f32> = (0..REVERB_IR_LEN).map(|_| rng.gen_range(-0.1f32..0.1)).collect();
        let mut bypass = ir.clone();
        bypass[0] = 100.0;
        let a = apply_reverb(&dry, &ReverbParams::new(ir).unwrap());
        let b = apply_reverb(&dry, &ReverbParams::new(bypass).unwrap());
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert!(ReverbParams::new(vec![0.0; 100]).is_err());
        assert!(ReverbParams::new(vec![f32::NAN; REVERB_IR_LEN]).is_err());
    }
}

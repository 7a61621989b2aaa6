//! Decoder network: conditioning features in, synthesizer controls out.

pub mod graph;
pub mod init;

use crate::audio::FrameSeries;
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::features::stats::hz_to_midi;
use crate::features::ConditioningFeatures;
use crate::synth::SynthControls;
use crate::CONTROL_RATE;

use graph::{decode_graph, register_params, DecoderInputs};

/// Network and control dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_harmonics: usize,
    pub n_noise: usize,
    pub mlp_units: usize,
    pub mlp_layers: usize,
    pub gru_units: usize,
    pub use_z: bool,
    pub z_dim: usize,
    pub z_gru_units: usize,
    pub mfcc_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_harmonics: 60,
            n_noise: 65,
            mlp_units: 512,
            mlp_layers: 3,
            gru_units: 512,
            use_z: false,
            z_dim: 16,
            z_gru_units: 512,
            mfcc_count: 30,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_harmonics == 0 || self.n_harmonics > 100 {
            return bad(format!("n_harmonics must be in 1..=100, got {}", self.n_harmonics));
        }
        if self.n_noise < 2 || self.n_noise > 65 {
            return bad(format!("n_noise must be in 2..=65, got {}", self.n_noise));
        }
        if self.mlp_units == 0 || self.mlp_layers == 0 || self.gru_units == 0 {
            return bad("mlp_units, mlp_layers and gru_units must be positive".into());
        }
        if self.use_z && (self.z_dim == 0 || self.z_gru_units == 0 || self.mfcc_count == 0) {
            return bad("latent path needs positive z_dim, z_gru_units and mfcc_count".into());
        }
        Ok(())
    }
}

/// Named decoder tensors in a stable order (the checkpoint order).
#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl DecoderParams {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn series_tensor(s: &FrameSeries) -> Tensor<f32> {
    Tensor::from_vec(s.num_frames(), s.dim, s.data.clone())
}

/// Scale the conditioning for the network: MIDI pitch / 127 and
/// (loudness + 120) / 120.
pub fn decoder_inputs(f: &ConditioningFeatures, config: &ModelConfig) -> Result<DecoderInputs> {
    let t = f.f0_hz.num_frames();
    if t == 0 {
        return Err(Error::InvalidArgument("empty conditioning".into()));
    }
    let midi: Vec<f32> = f
        .f0_hz
        .values()
        .iter()
        .map(|&hz| (hz_to_midi(hz as f64) / 127.0) as f32)
        .collect();
    let loud: Vec<f32> = f.loudness_db.values().iter().map(|&db| (db + 120.0) / 120.0).collect();
    let mfcc = if config.use_z {
        let m = f
            .mfcc
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("latent path needs MFCCs".into()))?;
        if m.dim != config.mfcc_count {
            return Err(Error::InvalidArgument(format!(
                "expected {} MFCCs per frame, got {}",
                config.mfcc_count, m.dim
            )));
        }
        Some(series_tensor(m))
    } else {
        None
    };
    Ok(DecoderInputs {
        midi_scaled: Tensor::from_vec(t, 1, midi),
        loud_scaled: Tensor::from_vec(t, 1, loud),
        mfcc,
    })
}

/// Run the decoder without gradients and package the outputs as control
/// series at the frame rate, reusing the input's f0 track.
pub fn decode(
    features: &ConditioningFeatures,
    params: &DecoderParams,
    config: &ModelConfig,
) -> Result<SynthControls> {
    config.validate()?;
    let inputs = decoder_inputs(features, config)?;
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params, false);
    let g = decode_graph(&mut tape, &vars, config, &inputs)?;
    let series = |t: &Tensor<f32>| FrameSeries::new(t.data.clone(), t.cols, CONTROL_RATE);
    let controls = SynthControls {
        amplitude: series(tape.value(g.amplitude)),
        harm_distribution: series(tape.value(g.harm_distribution)),
        noise_magnitudes: series(tape.value(g.noise_magnitudes)),
        f0_hz: features.f0_hz.clone(),
    };
    controls.validate()?;
    Ok(controls)
}

/// One MLP stack on its own, for probing a trained model.
pub fn mlp_forward(
    x: &Tensor<f32>,
    params: &DecoderParams,
    prefix: &str,
    layers: usize,
) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params, false);
    let input = tape.constant(x.clone());
    let out = graph::mlp_graph(&mut tape, input, &vars, prefix, layers)?;
    Ok(tape.value(out).clone())
}

/// The latent encoder on its own: MFCC frames to a z track at the control
/// rate (twice the MFCC frame rate).
pub fn z_encode(
    mfcc: &FrameSeries,
    params: &DecoderParams,
    config: &ModelConfig,
) -> Result<FrameSeries> {
    if mfcc.dim != config.mfcc_count {
        return Err(Error::InvalidArgument(format!(
            "expected {} MFCCs per frame, got {}",
            config.mfcc_count, mfcc.dim
        )));
    }
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params, false);
    let input = tape.constant(series_tensor(mfcc));
    let z = graph::z_graph(&mut tape, input, &vars, 2 * mfcc.num_frames())?;
    let t = tape.value(z);
    Ok(FrameSeries::new(t.data.clone(), t.cols, CONTROL_RATE))
}

#[cfg(test)]
mod tests {
    use super::graph::{SQUASH_FLOOR, SQUASH_EXPONENT};
    use super::*;

    fn small(use_z: bool) -> ModelConfig {
        ModelConfig {
            n_harmonics: 5,
            n_noise: 9,
            mlp_units: 8,
            mlp_layers: 2,
            gru_units: 6,
            use_z,
            z_dim: 4,
            z_gru_units: 5,
            mfcc_count: 30,
            ..ModelConfig::default()
        }
    }

    fn features(frames: usize, with_mfcc: bool) -> ConditioningFeatures {
        let f0: Vec<f32> = (0..frames).map(|t| 200.0 + (t as f32) * 0.5).collect();
        let loud: Vec<f32> = (0..frames).map(|t| -40.0 + (t as f32 * 0.7).sin() * 5.0).collect();
        let mfcc = with_mfcc.then(|| {
            let m = frames / 2;
            FrameSeries::new(
                (0..m * 30).map(|i| ((i * 37 % 101) as f32 - 50.0) / 25.0).collect(),
                30,
                CONTROL_RATE / 2.0,
            )
        });
        ConditioningFeatures {
            f0_hz: FrameSeries::scalar_series(f0, CONTROL_RATE),
            f0_confidence: FrameSeries::scalar_series(vec![1.0; frames], CONTROL_RATE),
            loudness_db: FrameSeries::scalar_series(loud, CONTROL_RATE),
            mfcc,
        }
    }

    #[test]
    fn default_config_output_dimensions() {
        let config = ModelConfig::default();
        let params = DecoderParams::init(&config, 11);
        let c = decode(&features(25, false), &params, &config).unwrap();
        assert_eq!(c.amplitude.num_frames(), 25);
        assert_eq!(c.amplitude.dim, 1);
        assert_eq!(c.harm_distribution.dim, 60);
        assert_eq!(c.noise_magnitudes.dim, 65);
        assert_eq!(c.f0_hz.num_frames(), 25);
        assert_eq!(c.harm_distribution.frame_rate, CONTROL_RATE);
    }

    #[test]
    fn outputs_stay_inside_the_squash_range() {
        let config = small(false);
        let params = DecoderParams::init(&config, 5);
        let c = decode(&features(40, false), &params, &config).unwrap();
        let ceiling = 2.0 + SQUASH_FLOOR;
        for &v in c.amplitude.values() {
            assert!(v >= SQUASH_FLOOR && v <= ceiling, "amplitude {v}");
        }
        for &v in &c.noise_magnitudes.data {
            assert!(v >= SQUASH_FLOOR && v <= ceiling, "noise {v}");
        }
        for t in 0..40 {
            let row = c.harm_distribution.frame(t);
            assert!(row.iter().all(|&v| v > 0.0));
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "frame {t} sums to {sum}");
        }
    }

    #[test]
    fn squash_constants_match_the_intended_curve() {
        // 2 * sigmoid(0)^ln(10) + floor at x = 0.
        let expected = 2.0 * 0.5f32.powf(SQUASH_EXPONENT) + SQUASH_FLOOR;
        assert!((expected - 0.405_40).abs() < 1e-3, "{expected}");
    }

    #[test]
    fn latent_path_handles_odd_frame_counts() {
        let config = small(true);
        let params = DecoderParams::init(&config, 2);
        // 37 control frames, 18 MFCC frames: the z track is stretched.
        let c = decode(&features(37, true), &params, &config).unwrap();
        assert_eq!(c.amplitude.num_frames(), 37);
        assert_eq!(c.noise_magnitudes.num_frames(), 37);
    }

    #[test]
    fn latent_path_changes_the_output() {
        let feats = features(24, true);
        let with = small(true);
        let without = small(false);
        let a = decode(&feats, &DecoderParams::init(&with, 8), &with).unwrap();
        let b = decode(&feats, &DecoderParams::init(&without, 8), &without).unwrap();
        assert_ne!(a.amplitude.data, b.amplitude.data);
    }

    #[test]
    fn latent_path_requires_mfccs() {
        let config = small(true);
        let params = DecoderParams::init(&config, 8);
        let err = decode(&features(24, false), &params, &config).unwrap_err();
        assert!(err.to_string().contains("MFCC"), "{err}");
    }

    #[test]
    fn decoding_is_deterministic() {
        let config = small(true);
        let params = DecoderParams::init(&config, 31);
        let feats = features(30, true);
        let a = decode(&feats, &params, &config).unwrap();
        let b = decode(&feats, &params, &config).unwrap();
        assert_eq!(a.amplitude.data, b.amplitude.data);
        assert_eq!(a.harm_distribution.data, b.harm_distribution.data);
        assert_eq!(a.noise_magnitudes.data, b.noise_magnitudes.data);
    }

    #[test]
    fn mlp_forward_matches_expected_shape() {
        let config = small(false);
        let params = DecoderParams::init(&config, 4);
        let x = Tensor::from_vec(7, 1, (0..7).map(|i| i as f32 / 7.0).collect());
        let y = mlp_forward(&x, &params, "f0_mlp", config.mlp_layers).unwrap();
        assert_eq!(y.shape(), (7, 8));
        assert!(y.all_finite());
        // ReLU output
        assert!(y.data.iter().all(|&v| v >= 0.0));
        assert!(y.data.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn z_encode_doubles_the_frame_rate_and_is_causal() {
        let config = small(true);
        let params = DecoderParams::init(&config, 12);
        let m = 9;
        let data: Vec<f32> = (0..m * 30).map(|i| ((i * 13 % 17) as f32 - 8.0) / 8.0).collect();
        let mfcc = FrameSeries::new(data.clone(), 30, CONTROL_RATE / 2.0);
        let z = z_encode(&mfcc, &params, &config).unwrap();
        assert_eq!(z.num_frames(), 18);
        assert_eq!(z.dim, 4);
        // Reversing time changes the recurrent state trajectory.
        let mut rev = Vec::with_capacity(data.len());
        for t in (0..m).rev() {
            rev.extend_from_slice(&data[t * 30..(t + 1) * 30]);
        }
        let z_rev = z_encode(&FrameSeries::new(rev, 30, CONTROL_RATE / 2.0), &params, &config)
            .unwrap();
        assert_ne!(z.data, z_rev.data);
    }

    #[test]
    fn gradients_reach_every_tensor() {
        let config = small(true);
        let params = DecoderParams::init(&config, 77);
        let inputs = decoder_inputs(&features(13, true), &config).unwrap();
        let mut tape = Tape::new();
        let vars = register_params(&mut tape, &params, true);
        let g = decode_graph(&mut tape, &vars, &config, &inputs).unwrap();
        let a2 = tape.mul(g.amplitude, g.amplitude).unwrap();
        let h2 = tape.mul(g.harm_distribution, g.harm_distribution).unwrap();
        let n2 = tape.mul(g.noise_magnitudes, g.noise_magnitudes).unwrap();
        let parts = [tape.mean_all(a2), tape.mean_all(h2), tape.mean_all(n2)];
        let ab = tape.add(parts[0], parts[1]).unwrap();
        let loss = tape.add(ab, parts[2]).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.len(), params.tensors.len());
        for (name, g) in &grads {
            assert!(g.all_finite(), "{name} gradient not finite");
            assert!(g.sq_l2_norm() > 0.0, "{name} gradient is zero");
        }
    }

    #[test]
    fn config_validation_rejects_out_of_range_dimensions() {
        let mut c = ModelConfig::default();
        c.n_harmonics = 0;
        assert!(c.validate().is_err());
        c.n_harmonics = 101;
        assert!(c.validate().is_err());
        c.n_harmonics = 60;
        c.n_noise = 1;
        assert!(c.validate().is_err());
        c.n_noise = 66;
        assert!(c.validate().is_err());
        c = ModelConfig::default();
        assert!(c.validate().is_ok());
        c.use_z = true;
        c.z_dim = 0;
        assert!(c.validate().is_err());
    }
}

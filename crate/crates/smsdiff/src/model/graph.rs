//! Tape builders for the decoder: the same graph drives training (parameters
//! registered as trainable leaves) and inference (parameters as constants).

use std::collections::HashMap;

use crate::autodiff::{Scalar, Tape, Tensor, VarId};
use crate::error::{Error, Result};

use super::{DecoderParams, ModelConfig};

/// Exponent of the output squash.
pub const SQUASH_EXPONENT: f32 = std::f32::consts::LN_10;
/// Additive floor keeping every control strictly positive.
pub const SQUASH_FLOOR: f32 = 1e-7;

/// Variable ids of the registered parameter tensors, keyed by name.
pub struct ParamVars {
    vars: HashMap<String, VarId>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<VarId> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name:?}")))
    }

    /// Build the map from variables registered elsewhere, e.g. by a
    /// gradient-checking harness.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, VarId)>) -> Self {
        ParamVars { vars: pairs.into_iter().collect() }
    }
}

fn lift<F: Scalar>(t: &Tensor<f32>) -> Tensor<F> {
    Tensor::from_vec(t.rows, t.cols, t.data.iter().map(|&v| F::from_f64(v as f64)).collect())
}

/// Put every decoder tensor on the tape, as leaves when training so the
/// backward pass collects their gradients, as constants otherwise. Stored
/// values are 32-bit; widening them preserves every bit, so the 64-bit
/// graph used for gradient verification sees identical parameters.
pub fn register_params<F: Scalar>(
    tape: &mut Tape<F>,
    params: &DecoderParams,
    trainable: bool,
) -> ParamVars {
    let mut vars = HashMap::new();
    for (name, tensor) in &params.tensors {
        let value = lift(tensor);
        let id = if trainable {
            tape.param(name.clone(), value)
        } else {
            tape.constant(value)
        };
        vars.insert(name.clone(), id);
    }
    ParamVars { vars }
}

/// One dense layer: x W + b.
pub fn dense<F: Scalar>(
    tape: &mut Tape<F>,
    x: VarId,
    vars: &ParamVars,
    prefix: &str,
) -> Result<VarId> {
    let w = vars.get(&format!("{prefix}.w"))?;
    let b = vars.get(&format!("{prefix}.b"))?;
    let xw = tape.matmul(x, w)?;
    tape.add_row_vec(xw, b)
}

/// The repeated block: Dense, then row-wise normalization with learned gain
/// and bias, then ReLU.
pub fn mlp_graph<F: Scalar>(
    tape: &mut Tape<F>,
    mut x: VarId,
    vars: &ParamVars,
    prefix: &str,
    layers: usize,
) -> Result<VarId> {
    for i in 0..layers {
        x = dense(tape, x, vars, &format!("{prefix}.{i}.dense"))?;
        let gamma = vars.get(&format!("{prefix}.{i}.norm.gamma"))?;
        let beta = vars.get(&format!("{prefix}.{i}.norm.beta"))?;
        x = tape.layer_norm(x, gamma, beta)?;
        x = tape.relu(x);
    }
    Ok(x)
}

/// y = 2 sigmoid(x)^ln(10) + floor: strictly positive, bounded by 2 + floor.
/// The constants stay at 32-bit precision in every mode so both graphs
/// compute the same function.
pub fn squash<F: Scalar>(tape: &mut Tape<F>, x: VarId) -> VarId {
    let s = tape.sigmoid(x);
    let p = tape.pow_const(s, F::from_f64(SQUASH_EXPONENT as f64));
    let scaled = tape.scale(p, F::from_f64(2.0));
    tape.add_const(scaled, F::from_f64(SQUASH_FLOOR as f64))
}

/// Latent path: normalize MFCCs per coefficient over time, run the recurrent
/// layer, project to the latent width, and stretch to `target_frames`.
pub fn z_graph<F: Scalar>(
    tape: &mut Tape<F>,
    mfcc: VarId,
    vars: &ParamVars,
    target_frames: usize,
) -> Result<VarId> {
    let normed = tape.instance_norm_cols(mfcc);
    let h = tape.gru(
        normed,
        vars.get("zenc.gru.w_ih")?,
        vars.get("zenc.gru.w_hh")?,
        vars.get("zenc.gru.b_ih")?,
        vars.get("zenc.gru.b_hh")?,
    )?;
    let z = dense(tape, h, vars, "zenc.proj")?;
    tape.upsample_rows(z, target_frames)
}

/// The decoder's output nodes, all [T x dim] at the control rate.
pub struct DecoderGraph {
    pub amplitude: VarId,
    pub harm_distribution: VarId,
    pub noise_magnitudes: VarId,
}

/// Conditioning inputs already scaled for the network: MIDI pitch / 127 and
/// (loudness + 120) / 120, plus raw MFCCs when the latent path is on.
pub struct DecoderInputs<F: Scalar = f32> {
    pub midi_scaled: Tensor<F>,
    pub loud_scaled: Tensor<F>,
    pub mfcc: Option<Tensor<F>>,
}

impl DecoderInputs<f32> {
    /// Bit-preserving widening for the 64-bit verification graph.
    pub fn widen(&self) -> DecoderInputs<f64> {
        DecoderInputs {
            midi_scaled: self.midi_scaled.to_f64(),
            loud_scaled: self.loud_scaled.to_f64(),
            mfcc: self.mfcc.as_ref().map(Tensor::to_f64),
        }
    }
}

/// Build the full decoder: per-input MLP stacks, recurrent core over their
/// concatenation, a skip concat of the core output with the MLP outputs,
/// the output MLP, and the two squashed heads. The harmonic head's first
/// column is the amplitude; the rest is normalized to a distribution.
pub fn decode_graph<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &ParamVars,
    config: &ModelConfig,
    inputs: &DecoderInputs<F>,
) -> Result<DecoderGraph> {
    let t_frames = inputs.midi_scaled.rows;
    if inputs.loud_scaled.rows != t_frames {
        return Err(Error::InvalidArgument(format!(
            "conditioning frame counts differ: {} vs {}",
            t_frames, inputs.loud_scaled.rows
        )));
    }
    let midi = tape.constant(inputs.midi_scaled.clone());
    let loud = tape.constant(inputs.loud_scaled.clone());

    let f0_out = mlp_graph(tape, midi, vars, "f0_mlp", config.mlp_layers)?;
    let loud_out = mlp_graph(tape, loud, vars, "loud_mlp", config.mlp_layers)?;
    let mut streams = vec![f0_out, loud_out];

    if config.use_z {
        let mfcc = inputs
            .mfcc
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("latent path needs MFCCs".into()))?;
        let mfcc = tape.constant(mfcc.clone());
        let z = z_graph(tape, mfcc, vars, t_frames)?;
        let z_out = mlp_graph(tape, z, vars, "z_mlp", config.mlp_layers)?;
        streams.push(z_out);
    }

    let core_in = tape.concat_cols(&streams)?;
    let core = tape.gru(
        core_in,
        vars.get("gru.w_ih")?,
        vars.get("gru.w_hh")?,
        vars.get("gru.b_ih")?,
        vars.get("gru.b_hh")?,
    )?;

    let mut skip = vec![core];
    skip.extend(&streams);
    let skip = tape.concat_cols(&skip)?;
    let out = mlp_graph(tape, skip, vars, "out_mlp", config.mlp_layers)?;

    let harm_raw = dense(tape, out, vars, "harm_head")?;
    let harm = squash(tape, harm_raw);
    let amplitude = tape.slice_cols(harm, 0, 1)?;
    let dist_raw = tape.slice_cols(harm, 1, 1 + config.n_harmonics)?;
    let harm_distribution = tape.normalize_rows(dist_raw);

    let noise_raw = dense(tape, out, vars, "noise_head")?;
    let noise_magnitudes = squash(tape, noise_raw);

    Ok(DecoderGraph { amplitude, harm_distribution, noise_magnitudes })
}

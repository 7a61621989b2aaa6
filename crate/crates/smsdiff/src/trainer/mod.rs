//! Training loop: Adam on the decoder and reverb parameters against the
//! multi-scale spectral distance, with deterministic batching, periodic
//! checkpoints, and a CSV loss log. Single-threaded by design: one core,
//! bit-reproducible runs.

pub mod checkpoint;
pub mod dataset;

pub use dataset::{make_dataset, Dataset, DatasetItem};

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use crate::audio::AudioBuffer;
use crate::autodiff::{Scalar, Tape, Tensor, VarId};
use crate::error::{Error, Result};
use crate::features::DatasetStats;
use crate::model::graph::{decode_graph, register_params, DecoderInputs, ParamVars};
use crate::model::init::expected_shapes;
use crate::model::{decoder_inputs, DecoderParams, ModelConfig};
use crate::synth::harmonic::{nyquist_mask, sin_matrix};
use crate::synth::loss::{spectral_loss_graph, SpectralTargets, LOSS_FFT_SIZES};
use crate::synth::noise::{
    noise_interp_matrix, synthesis_window_rows, windowed_noise_spectra, NOISE_BINS, NOISE_FFT,
};
use crate::synth::reverb::{ReverbParams, REVERB_IR_LEN};
use crate::{CONTROL_HOP, SAMPLE_RATE};

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f32 = 1e-8;
/// A checkpoint lands every this many steps, plus at the start and end.
const CHECKPOINT_EVERY: usize = 1000;
/// CSV rows land at step 1 and every this many steps.
const LOG_EVERY: usize = 10;

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate once per 1000 steps,
    /// continuously interpolated.
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub example_seconds: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            batch_size: 16,
            steps: 100,
            learning_rate: 1e-3,
            lr_decay: 0.98,
            clip_norm: 3.0,
            example_seconds: 4.0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 || self.steps == 0 {
            return bad("batch_size and steps must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if !(self.example_seconds > 0.0) {
            return bad(format!("example_seconds must be positive, got {}", self.example_seconds));
        }
        Ok(())
    }
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub total: f64,
    pub per_fft: Vec<(usize, f64)>,
}

/// A complete training snapshot: parameters, reverb, progress, and the
/// run's configuration and dataset statistics.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: DecoderParams,
    pub reverb: ReverbParams,
    pub step: usize,
    pub config: TrainConfig,
    pub stats: DatasetStats,
}

fn row(vals: &[f32]) -> Tensor<f32> {
    Tensor::from_vec(1, vals.len(), vals.to_vec())
}

fn pair_f64(v: f64) -> [f32; 2] {
    checkpoint::seed_to_f32_pair(v.to_bits())
}

fn unpair_f64(p: [f32; 2]) -> f64 {
    f64::from_bits(checkpoint::seed_from_f32_pair(p))
}

impl Checkpoint {
    /// Flatten to named tensors: metadata rows first (reals stored as f32
    /// bit-pattern pairs so nothing rounds), then the reverb response, then
    /// the decoder tensors in their stable order.
    pub fn to_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let c = &self.config;
        let m = &c.model;
        let mut out: Vec<(String, Tensor<f32>)> = vec![
            ("meta.step".into(), row(&[self.step as f32])),
            ("meta.seed".into(), row(&checkpoint::seed_to_f32_pair(c.seed))),
            (
                "meta.model".into(),
                row(&[
                    m.n_harmonics as f32,
                    m.n_noise as f32,
                    m.mlp_units as f32,
                    m.mlp_layers as f32,
                    m.gru_units as f32,
                    if m.use_z { 1.0 } else { 0.0 },
                    m.z_dim as f32,
                    m.z_gru_units as f32,
                    m.mfcc_count as f32,
                ]),
            ),
            ("meta.train".into(), row(&[c.batch_size as f32, c.steps as f32])),
            (
                "meta.train_reals".into(),
                row(&[
                    pair_f64(c.learning_rate),
                    pair_f64(c.lr_decay),
                    pair_f64(c.clip_norm),
                    pair_f64(c.example_seconds),
                ]
                .concat()),
            ),
            (
                "meta.stats".into(),
                row(&[
                    pair_f64(self.stats.mean_midi_pitch),
                    pair_f64(self.stats.mean_loudness_db),
                    pair_f64(self.stats.std_loudness_db),
                ]
                .concat()),
            ),
            (
                "reverb.ir".into(),
                Tensor::from_vec(1, REVERB_IR_LEN, self.reverb.impulse_response.clone()),
            ),
        ];
        out.extend(self.params.tensors.iter().cloned());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_tensors())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let tensors = checkpoint::load(path)?;
        let ctx = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
        let lookup: HashMap<&str, &Tensor<f32>> =
            tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let fetch = |name: &str, cols: usize| -> Result<&Tensor<f32>> {
            let t = lookup
                .get(name)
                .copied()
                .ok_or_else(|| ctx(format!("missing tensor {name:?}")))?;
            if t.shape() != (1, cols) {
                return Err(ctx(format!(
                    "tensor {name:?} has shape {}x{}, expected 1x{cols}",
                    t.rows, t.cols
                )));
            }
            Ok(t)
        };
        let int = |v: f32| v.round() as usize;
        let step_t = fetch("meta.step", 1)?;
        let seed_t = fetch("meta.seed", 2)?;
        let model_t = fetch("meta.model", 9)?;
        let train_t = fetch("meta.train", 2)?;
        let reals_t = fetch("meta.train_reals", 8)?;
        let stats_t = fetch("meta.stats", 6)?;
        let reverb_t = fetch("reverb.ir", REVERB_IR_LEN)?;
        let m = &model_t.data;
        let model = ModelConfig {
            n_harmonics: int(m[0]),
            n_noise: int(m[1]),
            mlp_units: int(m[2]),
            mlp_layers: int(m[3]),
            gru_units: int(m[4]),
            use_z: m[5] != 0.0,
            z_dim: int(m[6]),
            z_gru_units: int(m[7]),
            mfcc_count: int(m[8]),
        };
        let r = &reals_t.data;
        let config = TrainConfig {
            model,
            batch_size: int(train_t.data[0]),
            steps: int(train_t.data[1]),
            learning_rate: unpair_f64([r[0], r[1]]),
            lr_decay: unpair_f64([r[2], r[3]]),
            clip_norm: unpair_f64([r[4], r[5]]),
            example_seconds: unpair_f64([r[6], r[7]]),
            seed: checkpoint::seed_from_f32_pair([seed_t.data[0], seed_t.data[1]]),
        };
        config.validate()?;
        let s = &stats_t.data;
        let stats = DatasetStats {
            mean_midi_pitch: unpair_f64([s[0], s[1]]),
            mean_loudness_db: unpair_f64([s[2], s[3]]),
            std_loudness_db: unpair_f64([s[4], s[5]]),
        };
        let reverb = ReverbParams::new(reverb_t.data.clone())
            .map_err(|e| ctx(e.to_string()))?;
        let params = DecoderParams {
            tensors: tensors
                .iter()
                .filter(|(n, _)| !n.starts_with("meta.") && n != "reverb.ir")
                .cloned()
                .collect(),
        };
        let ckpt = Checkpoint { params, reverb, step: int(step_t.data[0]), config, stats };
        ckpt.validate_against(&ckpt.config.model)?;
        Ok(ckpt)
    }

    /// Check that the stored decoder tensors fit `config` exactly, naming
    /// the first offending tensor.
    pub fn validate_against(&self, config: &ModelConfig) -> Result<()> {
        let expected = expected_shapes(config);
        let have: HashMap<&str, (usize, usize)> =
            self.params.tensors.iter().map(|(n, t)| (n.as_str(), t.shape())).collect();
        for (name, shape) in &expected {
            match have.get(name.as_str()) {
                None => {
                    return Err(Error::Checkpoint(format!(
                        "checkpoint lacks tensor {name:?} required by the config"
                    )))
                }
                Some(s) if s != shape => {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name:?} has shape {}x{}, config needs {}x{}",
                        s.0, s.1, shape.0, shape.1
                    )))
                }
                _ => {}
            }
        }
        if self.params.tensors.len() != expected.len() {
            let known: std::collections::HashSet<&str> =
                expected.iter().map(|(n, _)| n.as_str()).collect();
            let extra = self
                .params
                .tensors
                .iter()
                .map(|(n, _)| n.as_str())
                .find(|n| !known.contains(n))
                .unwrap_or("?");
            return Err(Error::Checkpoint(format!(
                "checkpoint carries tensor {extra:?} the config does not define"
            )));
        }
        Ok(())
    }
}

/// Result of a training run: the final snapshot plus every step's loss.
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRow>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Batch sampling stream for one step, independent of all previous steps so
/// a resumed run draws the same batches.
fn batch_seed(seed: u64, step: u64) -> u64 {
    splitmix64(seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Fixed noise realization for one dataset item.
fn noise_seed(seed: u64, item: u64) -> u64 {
    splitmix64(seed ^ 0x6e6f_6973_6500_0000 ^ item.wrapping_mul(0xff51_afd7_ed55_8ccd))
}

fn ckpt_name(step: usize) -> String {
    format!("checkpoint_{step:06}.ckpt")
}

/// Per-item constants reused every time the item appears in a batch.
pub struct ItemScratch<F: Scalar = f32> {
    inputs: DecoderInputs<F>,
    sin: Arc<Tensor<F>>,
    mask: Arc<Tensor<F>>,
    spectra: Arc<Vec<Complex<F>>>,
    window_rows: Arc<Tensor<F>>,
    targets: SpectralTargets<F>,
}

impl ItemScratch<f32> {
    /// Bit-preserving widening so gradient verification can replay the same
    /// per-item constants through the 64-bit graph.
    pub fn widen(&self) -> ItemScratch<f64> {
        ItemScratch {
            inputs: self.inputs.widen(),
            sin: Arc::new(self.sin.to_f64()),
            mask: Arc::new(self.mask.to_f64()),
            spectra: Arc::new(
                self.spectra.iter().map(|c| Complex::new(c.re as f64, c.im as f64)).collect(),
            ),
            window_rows: Arc::new(self.window_rows.to_f64()),
            targets: self.targets.widen(),
        }
    }
}

/// Precompute every item's constants for the run's model configuration.
pub fn build_scratch(dataset: &Dataset, config: &TrainConfig) -> Result<Vec<ItemScratch>> {
    let mut out = Vec::with_capacity(dataset.items.len());
    for (idx, item) in dataset.items.iter().enumerate() {
        let frames = item.features.num_frames();
        if item.samples.len() != frames * CONTROL_HOP {
            return Err(Error::Dataset(format!(
                "{} chunk {}: {} samples but {} feature frames need {}",
                item.source.display(),
                item.chunk_index,
                item.samples.len(),
                frames,
                frames * CONTROL_HOP
            )));
        }
        let inputs = decoder_inputs(&item.features, &config.model)?;
        let sin = Arc::new(sin_matrix(&item.features.f0_hz, config.model.n_harmonics, SAMPLE_RATE)?);
        let mask =
            Arc::new(nyquist_mask(&item.features.f0_hz, config.model.n_harmonics, SAMPLE_RATE));
        let spectra =
            Arc::new(windowed_noise_spectra(frames, noise_seed(config.seed, idx as u64)));
        let window_rows = Arc::new(synthesis_window_rows(frames));
        let audio = AudioBuffer::new(item.samples.clone(), SAMPLE_RATE)?;
        let targets = SpectralTargets::from_audio(&audio)?;
        out.push(ItemScratch { inputs, sin, mask, spectra, window_rows, targets });
    }
    Ok(out)
}

/// The full differentiable path for one item: decode, synthesize the
/// harmonic and noise branches, apply reverb, and measure the spectral
/// distance to the item's audio.
pub fn item_loss_graph<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &ParamVars,
    config: &ModelConfig,
    scratch: &ItemScratch<F>,
    interp: Option<&Tensor<F>>,
    ir: VarId,
) -> Result<(VarId, Vec<(usize, VarId)>)> {
    let g = decode_graph(tape, vars, config, &scratch.inputs)?;

    let masked = tape.mul_const_elem(g.harm_distribution, Arc::clone(&scratch.mask))?;
    let dist = tape.normalize_rows(masked);
    let c_up = tape.smooth_upsample(dist, CONTROL_HOP)?;
    let a_up = tape.smooth_upsample(g.amplitude, CONTROL_HOP)?;
    let sins = tape.mul_const_elem(c_up, Arc::clone(&scratch.sin))?;
    let mix = tape.sum_rows(sins);
    let harm = tape.mul(mix, a_up)?;
    let samples = tape.value(harm).rows;
    let harm_row = tape.reshape(harm, 1, samples)?;

    let gains = match interp {
        Some(m) => {
            let mv = tape.constant(m.clone());
            tape.matmul(g.noise_magnitudes, mv)?
        }
        None => g.noise_magnitudes,
    };
    let shaped = tape.noise_filter(gains, Arc::clone(&scratch.spectra), NOISE_FFT)?;
    let windowed = tape.mul_const_elem(shaped, Arc::clone(&scratch.window_rows))?;
    let noise_row = tape.overlap_add(windowed, CONTROL_HOP)?;

    let dry = tape.add(harm_row, noise_row)?;
    let wet = tape.add_reverb(dry, ir)?;
    spectral_loss_graph(tape, wet, &scratch.targets)
}

fn adam_step(
    theta: &mut Tensor<f32>,
    g: &Tensor<f32>,
    m: &mut Tensor<f32>,
    v: &mut Tensor<f32>,
    clip: f32,
    lr: f64,
    t: usize,
) {
    let b1 = ADAM_B1 as f32;
    let b2 = ADAM_B2 as f32;
    let bc1 = (1.0 - ADAM_B1.powi(t as i32)) as f32;
    let bc2 = (1.0 - ADAM_B2.powi(t as i32)) as f32;
    let lr = lr as f32;
    for i in 0..theta.data.len() {
        let ge = g.data[i] * clip;
        let mi = b1 * m.data[i] + (1.0 - b1) * ge;
        let vi = b2 * v.data[i] + (1.0 - b2) * ge * ge;
        m.data[i] = mi;
        v.data[i] = vi;
        theta.data[i] -= lr * (mi / bc1) / ((vi / bc2).sqrt() + ADAM_EPS);
    }
}

fn run(
    config: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
    params: DecoderParams,
    reverb: ReverbParams,
    start_step: usize,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    if start_step > config.steps {
        return Err(Error::Training(format!(
            "checkpoint is at step {start_step}, past the configured {} steps",
            config.steps
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let scratch = build_scratch(dataset, config)?;
    let interp = (config.model.n_noise != NOISE_BINS)
        .then(|| noise_interp_matrix(config.model.n_noise, NOISE_BINS));

    let mut params = params;
    let mut reverb_t = Tensor::from_vec(1, REVERB_IR_LEN, reverb.impulse_response);
    let mut adam_m: HashMap<String, Tensor<f32>> = HashMap::new();
    let mut adam_v: HashMap<String, Tensor<f32>> = HashMap::new();

    let csv_path = out_dir.join("losses.csv");
    let mut csv = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    writeln!(csv, "step,total,L2048,L1024,L512,L256,L128,L64")
        .map_err(|e| Error::io(&csv_path, e))?;

    let snapshot = |params: &DecoderParams, reverb_t: &Tensor<f32>, step: usize| Checkpoint {
        params: params.clone(),
        reverb: ReverbParams { impulse_response: reverb_t.data.clone() },
        step,
        config: config.clone(),
        stats: dataset.stats,
    };
    snapshot(&params, &reverb_t, start_step).save(&out_dir.join(ckpt_name(start_step)))?;
    let mut last_saved = start_step;

    let mut log = Vec::with_capacity(config.steps - start_step);
    for step in start_step + 1..=config.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(batch_seed(config.seed, step as u64));
        let mut grad_acc: HashMap<String, Tensor<f32>> = HashMap::new();
        let mut scale_sums = vec![0.0f64; LOSS_FFT_SIZES.len()];
        for _ in 0..config.batch_size {
            let idx = rng.gen_range(0..dataset.items.len());
            let mut tape = Tape::new();
            // A diverging run must surface as a Training error, not a panic.
            tape.strict_finite = false;
            let vars = register_params(&mut tape, &params, true);
            let ir = tape.param("reverb.ir", reverb_t.clone());
            let (total, per) =
                item_loss_graph(&mut tape, &vars, &config.model, &scratch[idx], interp.as_ref(), ir)?;
            for (slot, (_, node)) in scale_sums.iter_mut().zip(&per) {
                *slot += tape.scalar_value(*node) as f64;
            }
            for (name, g) in tape.backward(total)? {
                match grad_acc.get_mut(&name) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        grad_acc.insert(name, g);
                    }
                }
            }
        }

        let inv_b = 1.0 / config.batch_size as f64;
        for s in &mut scale_sums {
            *s *= inv_b;
        }
        let total: f64 = scale_sums.iter().sum();
        if !total.is_finite() {
            return Err(Error::Training(format!(
                "loss became non-finite at step {step}; last checkpoint at step {last_saved} retained"
            )));
        }

        let mut sq_norm = 0.0f64;
        for g in grad_acc.values_mut() {
            g.scale_assign(inv_b as f32);
            sq_norm += g.sq_l2_norm();
        }
        let norm = sq_norm.sqrt();
        let clip = if norm > config.clip_norm { (config.clip_norm / norm) as f32 } else { 1.0 };
        let lr = config.learning_rate * config.lr_decay.powf((step - 1) as f64 / 1000.0);

        for (name, theta) in &mut params.tensors {
            let Some(g) = grad_acc.get(name.as_str()) else { continue };
            let m = adam_m.entry(name.clone()).or_insert_with(|| Tensor::zeros(theta.rows, theta.cols));
            let v = adam_v.entry(name.clone()).or_insert_with(|| Tensor::zeros(theta.rows, theta.cols));
            adam_step(theta, g, m, v, clip, lr, step);
        }
        if let Some(g) = grad_acc.get("reverb.ir") {
            let m = adam_m
                .entry("reverb.ir".into())
                .or_insert_with(|| Tensor::zeros(1, REVERB_IR_LEN));
            let v = adam_v
                .entry("reverb.ir".into())
                .or_insert_with(|| Tensor::zeros(1, REVERB_IR_LEN));
            adam_step(&mut reverb_t, g, m, v, clip, lr, step);
        }

        let per_fft: Vec<(usize, f64)> =
            LOSS_FFT_SIZES.iter().copied().zip(scale_sums.iter().copied()).collect();
        log.push(LossRow { step, total, per_fft });
        if step == 1 || step % LOG_EVERY == 0 {
            let last = log.last().expect("just pushed");
            let mut line = format!("{step},{total}");
            for (_, v) in &last.per_fft {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(csv, "{line}").map_err(|e| Error::io(&csv_path, e))?;
        }
        if step % CHECKPOINT_EVERY == 0 {
            snapshot(&params, &reverb_t, step).save(&out_dir.join(ckpt_name(step)))?;
            last_saved = step;
        }
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;

    let final_ckpt = snapshot(&params, &reverb_t, config.steps);
    final_ckpt.save(&out_dir.join("final.ckpt"))?;
    Ok(TrainOutcome { checkpoint: final_ckpt, log })
}

/// Train from a fresh initialization.
pub fn train(config: &TrainConfig, dataset: &Dataset, out_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    let params = DecoderParams::init(&config.model, config.seed);
    run(config, dataset, out_dir, params, ReverbParams::zeros(), 0)
}

/// Continue a run from a snapshot. Batches are keyed by absolute step, so
/// the loss at the first resumed step matches the uninterrupted run; the
/// optimizer's moment estimates restart from zero. Each invocation writes
/// its own loss log.
pub fn train_resume(start: &Checkpoint, dataset: &Dataset, out_dir: &Path) -> Result<TrainOutcome> {
    start.validate_against(&start.config.model)?;
    run(
        &start.config,
        dataset,
        out_dir,
        start.params.clone(),
        start.reverb.clone(),
        start.step,
    )
}

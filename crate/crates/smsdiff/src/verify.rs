//! Canned 64-bit gradient-verification suites: every tape operation, the
//! two synthesis paths, and the complete training graph, each checked
//! against central finite differences. Shared by the command-line
//! `grad-check` workflow and the test batteries.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use crate::audio::AudioBuffer;
use crate::autodiff::{grad_check, GradCheckReport, Tensor, VarId};
use crate::dsp::window::hann_periodic;
use crate::error::Result;
use crate::features::{compute_dataset_stats, extract_features};
use crate::model::graph::ParamVars;
use crate::model::{DecoderParams, ModelConfig};
use crate::synth::noise::{noise_interp_matrix, synthesis_window_rows, windowed_noise_spectra};
use crate::trainer::{build_scratch, item_loss_graph, Dataset, DatasetItem, TrainConfig};
use crate::{CONTROL_HOP, SAMPLE_RATE};

/// Bound for single-operation checks.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Bound for the synthesis paths (several ops composed).
pub const PATH_TOLERANCE: f64 = 1e-5;
/// Bound for the complete decode/render/loss graph.
pub const GRAPH_TOLERANCE: f64 = 1e-4;

/// One named check with the bound it must meet.
pub struct SuiteEntry {
    pub name: String,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.worst <= self.tolerance
    }
}

fn tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Values bounded away from zero so |x| and relu stay differentiable at
/// every sampled coordinate.
fn signed_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(0.1..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect(),
    )
}

type Build = Box<dyn Fn(&mut crate::autodiff::Tape<f64>, &[VarId]) -> Result<VarId>>;

/// Check every primitive operation on small random inputs.
pub fn check_primitive_ops(coords: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(&str, Vec<(String, Tensor<f64>)>, Build)> = Vec::new();
    let p = |t: Tensor<f64>| ("p".to_string(), t);
    let q = |t: Tensor<f64>| ("q".to_string(), t);
    let r = |t: Tensor<f64>| ("r".to_string(), t);

    cases.push((
        "add",
        vec![p(signed_tensor(&mut rng, 3, 4)), q(signed_tensor(&mut rng, 3, 4))],
        Box::new(|t, ids| {
            let y = t.add(ids[0], ids[1])?;
            Ok(t.mean_all(y))
        }),
    ));
    cases.push((
        "sub",
        vec![p(signed_tensor(&mut rng, 3, 4)), q(signed_tensor(&mut rng, 3, 4))],
        Box::new(|t, ids| {
            let y = t.sub(ids[0], ids[1])?;
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));
    cases.push((
        "mul",
        vec![p(signed_tensor(&mut rng, 3, 4)), q(signed_tensor(&mut rng, 3, 4))],
        Box::new(|t, ids| {
            let y = t.mul(ids[0], ids[1])?;
            Ok(t.mean_all(y))
        }),
    ));
    cases.push((
        "scale",
        vec![p(signed_tensor(&mut rng, 3, 4))],
        Box::new(|t, ids| {
            let y = t.scale(ids[0], 1.7);
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));
    cases.push((
        "add_const",
        vec![p(signed_tensor(&mut rng, 3, 4))],
        Box::new(|t, ids| {
            let y = t.add_const(ids[0], 0.3);
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));
    cases.push((
        "add_row_vec",
        vec![p(signed_tensor(&mut rng, 4, 5)), q(signed_tensor(&mut rng, 1, 5))],
        Box::new(|t, ids| {
            let y = t.add_row_vec(ids[0], ids[1])?;
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));
    {
        let c = Arc::new(tensor(&mut rng, 3, 4, -1.0, 1.0));
        cases.push((
            "mul_const_elem",
            vec![p(signed_tensor(&mut rng, 3, 4))],
            Box::new(move |t, ids| {
                let y = t.mul_const_elem(ids[0], Arc::clone(&c))?;
                Ok(t.mean_all(y))
            }),
        ));
    }
    {
        let c = Arc::new(tensor(&mut rng, 3, 4, -1.0, 1.0));
        cases.push((
            "sub_const_elem",
            vec![p(signed_tensor(&mut rng, 3, 4))],
            Box::new(move |t, ids| {
                let y = t.sub_const_elem(ids[0], Arc::clone(&c))?;
                let sq = t.mul(y, y)?;
                Ok(t.mean_all(sq))
            }),
        ));
    }
    cases.push((
        "matmul",
        vec![p(signed_tensor(&mut rng, 3, 4)), q(signed_tensor(&mut rng, 4, 5))],
        Box::new(|t, ids| {
            let y = t.matmul(ids[0], ids[1])?;
            Ok(t.mean_all(y))
        }),
    ));
    cases.push((
        "relu",
        vec![p(signed_tensor(&mut rng, 4, 6))],
        Box::new(|t, ids| {
            let y = t.relu(ids[0]);
            Ok(t.mean_all(y))
        }),
    ));
    cases.push((
        "sigmoid",
        vec![p(signed_tensor(&mut rng, 4, 6))],
        Box::new(|t, ids| {
            let y = t.sigmoid(ids[0]);
            Ok(t.mean_all(y))
        }),
    ));
    cases.push((
        "tanh",
        vec![p(signed_tensor(&mut rng, 4, 6))],
        Box::new(|t, ids| {
            let y = t.tanh(ids[0]);
            Ok(t.mean_all(y))
        }),
    ));
    cases.push((
        "exp",
        vec![p(signed_tensor(&mut rng, 4, 6))],
        Box::new(|t, ids| {
            let y = t.exp(ids[0]);
            Ok(t.mean_all(y))
        }),
    ));
    cases.push((
        "abs",
        vec![p(signed_tensor(&mut rng, 4, 6))],
        Box::new(|t, ids| {
            let y = t.abs(ids[0]);
            Ok(t.mean_all(y))
        }),
    ));
    cases.push((
        "pow_const",
        vec![p(tensor(&mut rng, 4, 6, 0.2, 1.5))],
        Box::new(|t, ids| {
            let y = t.pow_const(ids[0], 2.3);
            Ok(t.mean_all(y))
        }),
    ));
    cases.push((
        "log_eps",
        vec![p(tensor(&mut rng, 4, 6, 0.2, 1.5))],
        Box::new(|t, ids| {
            let y = t.log_eps(ids[0], 1e-7);
            Ok(t.mean_all(y))
        }),
    ));
    cases.push((
        "sum_all",
        vec![p(signed_tensor(&mut rng, 4, 6))],
        Box::new(|t, ids| {
            let s = t.sum_all(ids[0]);
            let sq = t.mul(s, s)?;
            Ok(t.mean_all(sq))
        }),
    ));
    cases.push((
        "mean_all",
        vec![p(signed_tensor(&mut rng, 4, 6))],
        Box::new(|t, ids| {
            let s = t.mean_all(ids[0]);
            let sq = t.mul(s, s)?;
            Ok(t.mean_all(sq))
        }),
    ));
    cases.push((
        "sum_rows",
        vec![p(signed_tensor(&mut rng, 5, 7))],
        Box::new(|t, ids| {
            let y = t.sum_rows(ids[0]);
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));
    cases.push((
        "normalize_rows",
        vec![p(tensor(&mut rng, 5, 7, 0.2, 1.5))],
        Box::new(|t, ids| {
            let y = t.normalize_rows(ids[0]);
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));
    cases.push((
        "concat_cols",
        vec![
            p(signed_tensor(&mut rng, 4, 2)),
            q(signed_tensor(&mut rng, 4, 3)),
            r(signed_tensor(&mut rng, 4, 1)),
        ],
        Box::new(|t, ids| {
            let y = t.concat_cols(ids)?;
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));
    cases.push((
        "slice_cols",
        vec![p(signed_tensor(&mut rng, 4, 6))],
        Box::new(|t, ids| {
            let y = t.slice_cols(ids[0], 2, 5)?;
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));
    cases.push((
        "reshape",
        vec![p(signed_tensor(&mut rng, 3, 8))],
        Box::new(|t, ids| {
            let y = t.reshape(ids[0], 4, 6)?;
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));
    cases.push((
        "layer_norm",
        vec![
            p(signed_tensor(&mut rng, 4, 6)),
            ("gamma".into(), tensor(&mut rng, 1, 6, 0.5, 1.5)),
            ("beta".into(), signed_tensor(&mut rng, 1, 6)),
        ],
        Box::new(|t, ids| {
            let y = t.layer_norm(ids[0], ids[1], ids[2])?;
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));
    {
        // The squared sum of a standardized column is constant, so weight
        // the output before reducing to keep the gradient alive.
        let c = Arc::new(tensor(&mut rng, 6, 4, 0.5, 1.5));
        cases.push((
            "instance_norm_cols",
            vec![p(signed_tensor(&mut rng, 6, 4))],
            Box::new(move |t, ids| {
                let y = t.instance_norm_cols(ids[0]);
                let w = t.mul_const_elem(y, Arc::clone(&c))?;
                let sq = t.mul(w, w)?;
                Ok(t.mean_all(sq))
            }),
        ));
    }
    cases.push((
        "gru",
        vec![
            ("x".into(), signed_tensor(&mut rng, 5, 3)),
            ("w_ih".into(), tensor(&mut rng, 3, 12, -0.5, 0.5)),
            ("w_hh".into(), tensor(&mut rng, 4, 12, -0.5, 0.5)),
            ("b_ih".into(), signed_tensor(&mut rng, 1, 12)),
            ("b_hh".into(), signed_tensor(&mut rng, 1, 12)),
        ],
        Box::new(|t, ids| {
            let y = t.gru(ids[0], ids[1], ids[2], ids[3], ids[4])?;
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));
    {
        let window = Arc::new(hann_periodic::<f64>(16));
        cases.push((
            "frame_window",
            vec![p(signed_tensor(&mut rng, 1, 64))],
            Box::new(move |t, ids| {
                let y = t.frame_window(ids[0], 16, 4, Arc::clone(&window))?;
                let sq = t.mul(y, y)?;
                Ok(t.mean_all(sq))
            }),
        ));
    }
    cases.push((
        "fft_real_mag",
        vec![p(signed_tensor(&mut rng, 3, 16))],
        Box::new(|t, ids| {
            let y = t.fft_real_mag(ids[0])?;
            Ok(t.mean_all(y))
        }),
    ));
    cases.push((
        "overlap_add",
        vec![p(signed_tensor(&mut rng, 5, 16))],
        Box::new(|t, ids| {
            let y = t.overlap_add(ids[0], 4)?;
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));
    {
        let spectra: Arc<Vec<Complex<f64>>> = Arc::new(
            windowed_noise_spectra(4, 77)
                .iter()
                .map(|c| Complex::new(c.re as f64, c.im as f64))
                .collect(),
        );
        cases.push((
            "noise_filter",
            vec![p(tensor(&mut rng, 4, 65, 0.1, 1.0))],
            Box::new(move |t, ids| {
                let y = t.noise_filter(ids[0], Arc::clone(&spectra), 128)?;
                let sq = t.mul(y, y)?;
                Ok(t.mean_all(sq))
            }),
        ));
    }
    cases.push((
        "upsample_rows",
        vec![p(signed_tensor(&mut rng, 4, 3))],
        Box::new(|t, ids| {
            let y = t.upsample_rows(ids[0], 13)?;
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));
    cases.push((
        "smooth_upsample",
        vec![p(signed_tensor(&mut rng, 4, 3))],
        Box::new(|t, ids| {
            let y = t.smooth_upsample(ids[0], 4)?;
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));
    cases.push((
        "add_reverb",
        vec![p(signed_tensor(&mut rng, 1, 48)), ("ir".into(), signed_tensor(&mut rng, 1, 12))],
        Box::new(|t, ids| {
            let y = t.add_reverb(ids[0], ids[1])?;
            let sq = t.mul(y, y)?;
            Ok(t.mean_all(sq))
        }),
    ));

    let mut out = Vec::with_capacity(cases.len());
    for (i, (name, params, build)) in cases.into_iter().enumerate() {
        let report = grad_check(&params, coords, seed ^ (i as u64 + 1), build)?;
        out.push(SuiteEntry { name: format!("op.{name}"), tolerance: OP_TOLERANCE, report });
    }
    Ok(out)
}

/// A short glide used as the fixed (non-differentiated) f0 for the paths.
fn glide(frames: usize) -> crate::audio::FrameSeries {
    let values = (0..frames)
        .map(|t| 170.0 + 20.0 * t as f32 / frames.max(1) as f32)
        .collect();
    crate::audio::FrameSeries::scalar_series(values, crate::CONTROL_RATE)
}

/// Harmonic branch: amplitude and raw distribution through masking,
/// renormalization, upsampling, and the sinusoid bank.
pub fn check_harmonic_path(coords: usize, seed: u64) -> Result<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4861_726d);
    let frames = 16usize;
    let harmonics = 8usize;
    let f0 = glide(frames);
    let sin = Arc::new(
        crate::synth::harmonic::sin_matrix(&f0, harmonics, SAMPLE_RATE)?.to_f64(),
    );
    let mask = Arc::new(
        crate::synth::harmonic::nyquist_mask(&f0, harmonics, SAMPLE_RATE).to_f64(),
    );
    let params = vec![
        ("amplitude".to_string(), tensor(&mut rng, frames, 1, 0.05, 0.9)),
        ("distribution".to_string(), tensor(&mut rng, frames, harmonics, 0.1, 1.0)),
    ];
    let report = grad_check(&params, coords, seed, move |t, ids| {
        let masked = t.mul_const_elem(ids[1], Arc::clone(&mask))?;
        let dist = t.normalize_rows(masked);
        let c_up = t.smooth_upsample(dist, CONTROL_HOP)?;
        let a_up = t.smooth_upsample(ids[0], CONTROL_HOP)?;
        let sins = t.mul_const_elem(c_up, Arc::clone(&sin))?;
        let mix = t.sum_rows(sins);
        let harm = t.mul(mix, a_up)?;
        let sq = t.mul(harm, harm)?;
        Ok(t.mean_all(sq))
    })?;
    Ok(SuiteEntry { name: "path.harmonic".into(), tolerance: PATH_TOLERANCE, report })
}

/// Noise branch: magnitudes through the filter bank, synthesis windowing,
/// and overlap-add.
pub fn check_noise_path(coords: usize, seed: u64) -> Result<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4e6f_6973);
    let frames = 8usize;
    let spectra: Arc<Vec<Complex<f64>>> = Arc::new(
        windowed_noise_spectra(frames, seed ^ 0x57)
            .iter()
            .map(|c| Complex::new(c.re as f64, c.im as f64))
            .collect(),
    );
    let window_rows = Arc::new(synthesis_window_rows(frames).to_f64());
    let params = vec![("magnitudes".to_string(), tensor(&mut rng, frames, 65, 0.1, 1.0))];
    let report = grad_check(&params, coords, seed, move |t, ids| {
        let shaped = t.noise_filter(ids[0], Arc::clone(&spectra), 128)?;
        let windowed = t.mul_const_elem(shaped, Arc::clone(&window_rows))?;
        let noise = t.overlap_add(windowed, CONTROL_HOP)?;
        let sq = t.mul(noise, noise)?;
        Ok(t.mean_all(sq))
    })?;
    Ok(SuiteEntry { name: "path.noise".into(), tolerance: PATH_TOLERANCE, report })
}

/// The complete training objective on a quarter-second clip, latent path
/// included, differentiated with respect to every decoder tensor and the
/// reverb response.
pub fn check_full_graph(coords: usize, seed: u64) -> Result<SuiteEntry> {
    let samples_n = 4096usize;
    let samples: Vec<f32> = (0..samples_n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE;
            let hz = 200.0 + 40.0 * t;
            let saw: f64 =
                (1..=5).map(|k| (2.0 * std::f64::consts::PI * hz * k as f64 * t).sin() / k as f64).sum();
            (0.3 * saw) as f32
        })
        .collect();
    let audio = AudioBuffer::new(samples.clone(), SAMPLE_RATE)?;
    let features = extract_features(&audio, true)?;
    let stats = compute_dataset_stats(&[features.clone()])?;
    let dataset = Dataset {
        items: vec![DatasetItem {
            source: "verify.wav".into(),
            chunk_index: 0,
            samples,
            features,
        }],
        stats,
    };
    let config = TrainConfig {
        model: ModelConfig {
            n_harmonics: 5,
            n_noise: 9,
            mlp_units: 8,
            mlp_layers: 2,
            gru_units: 6,
            use_z: true,
            z_dim: 4,
            z_gru_units: 5,
            ..ModelConfig::default()
        },
        steps: 1,
        example_seconds: samples_n as f64 / SAMPLE_RATE,
        seed,
        ..TrainConfig::default()
    };
    let scratch = build_scratch(&dataset, &config)?.remove(0).widen();
    let interp = noise_interp_matrix(config.model.n_noise, 65).to_f64();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4675_6c6c);
    let mut params: Vec<(String, Tensor<f64>)> = DecoderParams::init(&config.model, seed)
        .tensors
        .iter()
        .map(|(name, t)| (name.clone(), t.to_f64()))
        .collect();
    params.push(("reverb.ir".to_string(), tensor(&mut rng, 1, 400, -0.01, 0.01)));

    let names: Vec<String> = params.iter().map(|(name, _)| name.clone()).collect();
    let model = config.model.clone();
    let report = grad_check(&params, coords, seed, move |t, ids| {
        // The harness hands back variables in registration order, which
        // matches the params list; rebuild the name-to-id map from it.
        let vars = ParamVars::from_pairs(names.iter().cloned().zip(ids.iter().copied()));
        let ir = *ids.last().expect("reverb parameter present");
        let (total, _) = item_loss_graph(t, &vars, &model, &scratch, Some(&interp), ir)?;
        Ok(total)
    })?;
    Ok(SuiteEntry { name: "graph.full".into(), tolerance: GRAPH_TOLERANCE, report })
}

/// Run everything: primitive ops, both synthesis paths, the full graph.
pub fn run_full_suite(coords: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut entries = check_primitive_ops(coords, seed)?;
    entries.push(check_harmonic_path(coords, seed)?);
    entries.push(check_noise_path(coords, seed)?);
    entries.push(check_full_graph(coords, seed)?);
    Ok(entries)
}

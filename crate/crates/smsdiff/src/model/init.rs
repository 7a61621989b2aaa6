//! Deterministic parameter initialization: every tensor draws from its own
//! stream derived from the run seed and the tensor name, so adding or
//! reordering tensors never shifts any other tensor's values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;

use super::{DecoderParams, ModelConfig};

/// 64-bit FNV-1a of the tensor name.
fn fnv1a(name: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// splitmix64 finalizer decorrelating seed and name hash.
fn mix(seed: u64, name: &str) -> u64 {
    let mut z = seed ^ fnv1a(name).rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn xavier(name: &str, seed: u64, fan_in: usize, fan_out: usize, rows: usize, cols: usize) -> Tensor<f32> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, name));
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-bound..bound) as f32).collect(),
    )
}

/// Square orthonormal matrix via modified Gram-Schmidt on a random normal
/// draw. Degenerate columns (never seen in practice) are re-drawn.
fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    let mut q = Tensor::zeros(n, n);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        cols.push((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    }
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut v = cols[j].clone();
        loop {
            for u in &kept {
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= dot * ui;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for vi in v.iter_mut() {
                    *vi /= norm;
                }
                break;
            }
            v = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        }
        kept.push(v);
    }
    for (j, col) in kept.iter().enumerate() {
        for i in 0..n {
            q.set(i, j, col[i]);
        }
    }
    q
}

/// Recurrent weights [H x 3H]: three independent orthonormal H x H blocks.
fn recurrent(name: &str, seed: u64, hidden: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, name));
    let mut w = Tensor::zeros(hidden, 3 * hidden);
    for gate in 0..3 {
        let q = orthogonal(&mut rng, hidden);
        for r in 0..hidden {
            for c in 0..hidden {
                w.set(r, gate * hidden + c, q.get(r, c) as f32);
            }
        }
    }
    w
}

struct Builder {
    seed: u64,
    /// When false, every tensor is left at zero: cheap shape enumeration.
    fill: bool,
    tensors: Vec<(String, Tensor<f32>)>,
}

impl Builder {
    fn dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        let w = format!("{prefix}.w");
        let t = if self.fill {
            xavier(&w, self.seed, fan_in, fan_out, fan_in, fan_out)
        } else {
            Tensor::zeros(fan_in, fan_out)
        };
        self.tensors.push((w, t));
        self.tensors.push((format!("{prefix}.b"), Tensor::zeros(1, fan_out)));
    }

    fn mlp(&mut self, prefix: &str, input: usize, units: usize, layers: usize) {
        let mut fan_in = input;
        for i in 0..layers {
            self.dense(&format!("{prefix}.{i}.dense"), fan_in, units);
            self.tensors.push((
                format!("{prefix}.{i}.norm.gamma"),
                Tensor::from_vec(1, units, vec![1.0; units]),
            ));
            self.tensors.push((format!("{prefix}.{i}.norm.beta"), Tensor::zeros(1, units)));
            fan_in = units;
        }
    }

    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) {
        let w_ih = format!("{prefix}.w_ih");
        // Per-gate fans: each gate block maps input -> hidden.
        let ih = if self.fill {
            xavier(&w_ih, self.seed, input, hidden, input, 3 * hidden)
        } else {
            Tensor::zeros(input, 3 * hidden)
        };
        self.tensors.push((w_ih, ih));
        let w_hh = format!("{prefix}.w_hh");
        let hh = if self.fill {
            recurrent(&w_hh, self.seed, hidden)
        } else {
            Tensor::zeros(hidden, 3 * hidden)
        };
        self.tensors.push((w_hh, hh));
        self.tensors.push((format!("{prefix}.b_ih"), Tensor::zeros(1, 3 * hidden)));
        self.tensors.push((format!("{prefix}.b_hh"), Tensor::zeros(1, 3 * hidden)));
    }
}

fn build(config: &ModelConfig, seed: u64, fill: bool) -> Vec<(String, Tensor<f32>)> {
    let u = config.mlp_units;
    let mut b = Builder { seed, fill, tensors: Vec::new() };
    b.mlp("f0_mlp", 1, u, config.mlp_layers);
    b.mlp("loud_mlp", 1, u, config.mlp_layers);
    let mut streams = 2;
    if config.use_z {
        b.gru("zenc.gru", config.mfcc_count, config.z_gru_units);
        b.dense("zenc.proj", config.z_gru_units, config.z_dim);
        b.mlp("z_mlp", config.z_dim, u, config.mlp_layers);
        streams = 3;
    }
    b.gru("gru", streams * u, config.gru_units);
    b.mlp("out_mlp", config.gru_units + streams * u, u, config.mlp_layers);
    b.dense("harm_head", u, 1 + config.n_harmonics);
    b.dense("noise_head", u, config.n_noise);
    b.tensors
}

/// Name and shape of every tensor `config` calls for, in checkpoint order,
/// without paying for initialization.
pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
    build(config, 0, false).into_iter().map(|(n, t)| (n, t.shape())).collect()
}

impl DecoderParams {
    /// Fresh parameters for `config`, fully determined by `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        DecoderParams { tensors: build(config, seed, true) }
    }
}

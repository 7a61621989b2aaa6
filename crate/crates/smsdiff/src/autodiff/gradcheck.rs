//! Central-difference verification of tape gradients.
//!
//! Coordinates are sampled per parameter, perturbed both ways, and compared
//! against the analytic gradient. Coordinates that straddle a kink (the two
//! one-sided slopes disagree badly) are skipped rather than misjudged.
//!
//! The difference oracle is the five-point central stencil — a Richardson
//! extrapolation of two plain central differences — because log-magnitude
//! losses have third derivatives large enough for the h² truncation term of
//! the three-point formula to dominate genuine gradient defects.
//!
//! A coordinate's relative error is measured against the larger of its own
//! gradient magnitude and one percent of the parameter's largest gradient
//! entry. Coordinates orders of magnitude below their tensor's scale sit
//! beneath the oracle's roundoff resolution (about eps^(2/3) times the
//! function magnitude), so holding them to a pointwise relative bound would
//! measure noise, not correctness.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scalar::Scalar;
use super::tape::{Tape, VarId};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug)]
pub struct GradCheckReport {
    /// Worst relative error seen for each parameter, in input order.
    pub per_param: Vec<(String, f64)>,
    pub worst: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Rebuild the graph with one coordinate nudged and return the loss.
fn eval_perturbed<F, B>(
    build: &B,
    params: &[(String, Tensor<F>)],
    target: usize,
    coord: usize,
    delta: f64,
) -> Result<f64>
where
    F: Scalar,
    B: Fn(&mut Tape<F>, &[VarId]) -> Result<VarId>,
{
    let mut tape = Tape::new();
    let ids: Vec<VarId> = params
        .iter()
        .enumerate()
        .map(|(i, (name, value))| {
            let mut v = value.clone();
            if i == target {
                v.data[coord] = F::from_f64(v.data[coord].to_f64() + delta);
            }
            tape.param(name.clone(), v)
        })
        .collect();
    let loss = build(&mut tape, &ids)?;
    Ok(tape.scalar_value(loss).to_f64())
}

/// Compare analytic gradients against central differences on up to
/// `coords_per_param` randomly chosen coordinates of every parameter.
/// `build` must be a pure function of the parameter values.
pub fn grad_check<F, B>(
    params: &[(String, Tensor<F>)],
    coords_per_param: usize,
    seed: u64,
    build: B,
) -> Result<GradCheckReport>
where
    F: Scalar,
    B: Fn(&mut Tape<F>, &[VarId]) -> Result<VarId>,
{
    let mut tape = Tape::new();
    let ids: Vec<VarId> = params
        .iter()
        .map(|(name, value)| tape.param(name.clone(), value.clone()))
        .collect();
    let loss = build(&mut tape, &ids)?;
    let f0 = tape.scalar_value(loss).to_f64();
    let grads = tape.backward(loss)?;
    drop(tape);

    let h_base = F::EPS_F64.cbrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_param = Vec::with_capacity(params.len());
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for (pi, (name, base)) in params.iter().enumerate() {
        let len = base.len();
        let coords: Vec<usize> = if len <= coords_per_param {
            (0..len).collect()
        } else {
            let mut set = HashSet::with_capacity(coords_per_param);
            while set.len() < coords_per_param {
                set.insert(rng.gen_range(0..len));
            }
            let mut v: Vec<usize> = set.into_iter().collect();
            v.sort_unstable();
            v
        };
        let mut pairs = Vec::with_capacity(coords.len());
        for &ci in &coords {
            let h = h_base * base.data[ci].to_f64().abs().max(1.0);
            let fp = eval_perturbed(&build, params, pi, ci, h)?;
            let fm = eval_perturbed(&build, params, pi, ci, -h)?;
            let slope_p = (fp - f0) / h;
            let slope_m = (f0 - fm) / h;
            if (slope_p - slope_m).abs() > 0.25 * slope_p.abs().max(slope_m.abs()).max(1e-6) {
                skipped += 1;
                continue;
            }
            let fp2 = eval_perturbed(&build, params, pi, ci, 0.5 * h)?;
            let fm2 = eval_perturbed(&build, params, pi, ci, -0.5 * h)?;
            let fd = (8.0 * (fp2 - fm2) - (fp - fm)) / (6.0 * h);
            let a = grads[pi].1.data[ci].to_f64();
            pairs.push((a, fd));
            checked += 1;
        }
        // Gradient scale of the whole tensor, not just the sampled coords.
        let g_scale = grads[pi]
            .1
            .data
            .iter()
            .fold(0.0f64, |m, &g| m.max(g.to_f64().abs()))
            .max(pairs.iter().fold(0.0f64, |m, &(_, fd)| m.max(fd.abs())));
        let mut param_worst = 0.0f64;
        for &(a, fd) in &pairs {
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(0.01 * g_scale).max(1e-6);
            param_worst = param_worst.max(rel);
        }
        worst = worst.max(param_worst);
        per_param.push((name.clone(), param_worst));
    }
    Ok(GradCheckReport { per_param, worst, checked, skipped })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dsp::fft::rfft;
    use crate::dsp::window::hann_periodic;

    fn rand_tensor(rows: usize, cols: usize, seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::from_vec(rows, cols, data)
    }

    fn assert_grads<B>(params: Vec<(&str, Tensor<f64>)>, tol: f64, build: B)
    where
        B: Fn(&mut Tape<f64>, &[VarId]) -> crate::Result<VarId>,
    {
        let owned: Vec<(String, Tensor<f64>)> =
            params.into_iter().map(|(n, t)| (n.to_string(), t)).collect();
        let report = grad_check(&owned, 16, 99, build).unwrap();
        assert!(report.checked > 0, "every coordinate was skipped");
        assert!(
            report.worst < tol,
            "worst relative error {} over {:?}",
            report.worst,
            report.per_param
        );
    }

    #[test]
    fn elementwise_arithmetic_chain() {
        assert_grads(
            vec![
                ("a", rand_tensor(3, 4, 1, -1.0, 1.0)),
                ("b", rand_tensor(3, 4, 2, 0.5, 1.5)),
            ],
            1e-7,
            |tape, ids| {
                let p = tape.mul(ids[0], ids[1])?;
                let s = tape.sub(p, ids[0])?;
                let sc = tape.scale(s, 1.7);
                let sh = tape.add_const(sc, 0.3);
                let t = tape.tanh(sh);
                let a = tape.add(t, ids[1])?;
                Ok(tape.mean_all(a))
            },
        );
    }

    #[test]
    fn bias_broadcast_and_const_tensors() {
        let c = Arc::new(rand_tensor(3, 4, 7, 0.5, 2.0));
        let tgt = Arc::new(rand_tensor(3, 4, 8, -1.0, 1.0));
        assert_grads(
            vec![
                ("x", rand_tensor(3, 4, 3, -1.0, 1.0)),
                ("bias", rand_tensor(1, 4, 4, -0.5, 0.5)),
            ],
            1e-7,
            move |tape, ids| {
                let b = tape.add_row_vec(ids[0], ids[1])?;
                let m = tape.mul_const_elem(b, c.clone())?;
                let d = tape.sub_const_elem(m, tgt.clone())?;
                let a = tape.abs(d);
                Ok(tape.sum_all(a))
            },
        );
    }

    #[test]
    fn matmul_sigmoid_stack() {
        assert_grads(
            vec![
                ("w1", rand_tensor(3, 5, 10, -0.7, 0.7)),
                ("w2", rand_tensor(5, 2, 11, -0.7, 0.7)),
            ],
            1e-7,
            |tape, ids| {
                let x = tape.constant(rand_tensor(4, 3, 12, -1.0, 1.0));
                let h = tape.matmul(x, ids[0])?;
                let s = tape.sigmoid(h);
                let o = tape.matmul(s, ids[1])?;
                Ok(tape.mean_all(o))
            },
        );
    }

    #[test]
    fn relu_on_either_side_of_the_kink() {
        assert_grads(
            vec![
                ("pos", rand_tensor(2, 3, 20, 1.0, 2.0)),
                ("neg", rand_tensor(2, 3, 21, -2.0, -1.0)),
            ],
            1e-7,
            |tape, ids| {
                let rp = tape.relu(ids[0]);
                let rn = tape.relu(ids[1]);
                let s = tape.add(rp, rn)?;
                Ok(tape.sum_all(s))
            },
        );
    }

    #[test]
    fn exponential_log_and_power_family() {
        assert_grads(
            vec![("x", rand_tensor(2, 4, 30, 0.2, 1.2))],
            1e-6,
            |tape, ids| {
                let e = tape.exp(ids[0]);
                let l = tape.log_eps(ids[0], 1e-5);
                let p = tape.pow_const(ids[0], std::f64::consts::LN_10);
                let a = tape.add(e, l)?;
                let b = tape.add(a, p)?;
                Ok(tape.sum_all(b))
            },
        );
    }

    #[test]
    fn output_squash_composite() {
        // 2 * sigmoid(x)^ln10 + 1e-7, the saturating output nonlinearity.
        assert_grads(
            vec![("x", rand_tensor(3, 5, 31, -3.0, 3.0))],
            1e-6,
            |tape, ids| {
                let s = tape.sigmoid(ids[0]);
                let p = tape.pow_const(s, std::f64::consts::LN_10);
                let d = tape.scale(p, 2.0);
                let y = tape.add_const(d, 1e-7);
                Ok(tape.sum_all(y))
            },
        );
    }

    #[test]
    fn reductions_and_row_normalization() {
        // Square before reducing: the plain sum of a normalized row is
        // constant, which would leave nothing for differences to see.
        assert_grads(
            vec![("x", rand_tensor(3, 6, 40, 0.5, 1.5))],
            1e-6,
            |tape, ids| {
                let n = tape.normalize_rows(ids[0]);
                let sq = tape.mul(n, n)?;
                let r = tape.sum_rows(sq);
                let t = tape.tanh(r);
                Ok(tape.sum_all(t))
            },
        );
    }

    #[test]
    fn concat_slice_reshape_round_trip() {
        assert_grads(
            vec![
                ("a", rand_tensor(3, 2, 50, -1.0, 1.0)),
                ("b", rand_tensor(3, 4, 51, -1.0, 1.0)),
            ],
            1e-7,
            |tape, ids| {
                let c = tape.concat_cols(&[ids[0], ids[1]])?;
                let s = tape.slice_cols(c, 1, 5)?;
                let r = tape.reshape(s, 2, 6)?;
                let t = tape.sigmoid(r);
                Ok(tape.mean_all(t))
            },
        );
    }

    #[test]
    fn layer_norm_with_affine_params() {
        assert_grads(
            vec![
                ("x", rand_tensor(4, 6, 60, -2.0, 2.0)),
                ("gamma", rand_tensor(1, 6, 61, 0.5, 1.5)),
                ("beta", rand_tensor(1, 6, 62, -0.5, 0.5)),
            ],
            1e-6,
            |tape, ids| {
                let y = tape.layer_norm(ids[0], ids[1], ids[2])?;
                let t = tape.tanh(y);
                Ok(tape.mean_all(t))
            },
        );
    }

    #[test]
    fn instance_norm_over_columns() {
        assert_grads(
            vec![("x", rand_tensor(6, 3, 70, -2.0, 2.0))],
            1e-6,
            |tape, ids| {
                let y = tape.instance_norm_cols(ids[0]);
                let s = tape.sigmoid(y);
                Ok(tape.sum_all(s))
            },
        );
    }

    #[test]
    fn gru_full_parameter_set() {
        let (i, h) = (3, 4);
        assert_grads(
            vec![
                ("x", rand_tensor(5, i, 80, -1.0, 1.0)),
                ("w_ih", rand_tensor(i, 3 * h, 81, -0.5, 0.5)),
                ("w_hh", rand_tensor(h, 3 * h, 82, -0.5, 0.5)),
                ("b_ih", rand_tensor(1, 3 * h, 83, -0.3, 0.3)),
                ("b_hh", rand_tensor(1, 3 * h, 84, -0.3, 0.3)),
            ],
            1e-6,
            |tape, ids| {
                let y = tape.gru(ids[0], ids[1], ids[2], ids[3], ids[4])?;
                let t = tape.tanh(y);
                Ok(tape.mean_all(t))
            },
        );
    }

    #[test]
    fn framing_and_spectral_magnitude_path() {
        assert_grads(
            vec![("sig", rand_tensor(1, 96, 90, -1.0, 1.0))],
            1e-6,
            |tape, ids| {
                let window: Arc<Vec<f64>> = Arc::new(hann_periodic(64));
                let frames = tape.frame_window(ids[0], 64, 32, window)?;
                let mags = tape.fft_real_mag(frames)?;
                Ok(tape.sum_all(mags))
            },
        );
    }

    #[test]
    fn spectral_distance_composite() {
        // The full per-scale loss shape: linear and log magnitude L1 terms.
        let target = Arc::new(rand_tensor(3, 33, 91, 0.1, 2.0));
        let log_target = Arc::new(target.map(|v| (v + 1e-5).ln()));
        assert_grads(
            vec![("sig", rand_tensor(1, 96, 92, -1.0, 1.0))],
            1e-5,
            move |tape, ids| {
                let window: Arc<Vec<f64>> = Arc::new(hann_periodic(64));
                let frames = tape.frame_window(ids[0], 64, 32, window)?;
                let mags = tape.fft_real_mag(frames)?;
                let lin = tape.sub_const_elem(mags, target.clone())?;
                let lin = tape.abs(lin);
                let lin = tape.sum_all(lin);
                let logm = tape.log_eps(mags, 1e-5);
                let logd = tape.sub_const_elem(logm, log_target.clone())?;
                let logd = tape.abs(logd);
                let logd = tape.sum_all(logd);
                Ok(tape.add(lin, logd)?)
            },
        );
    }

    #[test]
    fn overlap_add_path() {
        assert_grads(
            vec![("frames", rand_tensor(3, 8, 100, -1.0, 1.0))],
            1e-7,
            |tape, ids| {
                let y = tape.overlap_add(ids[0], 4)?;
                let t = tape.tanh(y);
                Ok(tape.sum_all(t))
            },
        );
    }

    #[test]
    fn noise_filter_gains() {
        let fft = 32;
        let bins = fft / 2 + 1;
        let noise: Vec<f64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            (0..2 * fft).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let mut spectra = Vec::new();
        for f in 0..2 {
            spectra.extend(rfft(&noise[f * fft..(f + 1) * fft]));
        }
        let spectra = Arc::new(spectra);
        assert_grads(
            vec![("h", rand_tensor(2, bins, 101, 0.1, 1.0))],
            1e-7,
            move |tape, ids| {
                let frames = tape.noise_filter(ids[0], spectra.clone(), fft)?;
                let y = tape.overlap_add(frames, fft / 2)?;
                let t = tape.tanh(y);
                Ok(tape.sum_all(t))
            },
        );
    }

    #[test]
    fn row_upsamplers() {
        assert_grads(
            vec![
                ("a", rand_tensor(5, 2, 110, -1.0, 1.0)),
                ("b", rand_tensor(4, 2, 111, -1.0, 1.0)),
            ],
            1e-7,
            |tape, ids| {
                let up_frac = tape.upsample_rows(ids[0], 13)?;
                let up_even = tape.upsample_rows(ids[1], 12)?;
                let sm = tape.smooth_upsample(ids[1], 6)?;
                let s1 = tape.sum_all(up_frac);
                let s2 = tape.sum_all(up_even);
                let s3 = tape.sum_all(sm);
                let t = tape.add(s1, s2)?;
                Ok(tape.add(t, s3)?)
            },
        );
    }

    #[test]
    fn reverb_dry_and_impulse_response() {
        assert_grads(
            vec![
                ("dry", rand_tensor(1, 24, 120, -1.0, 1.0)),
                ("ir", rand_tensor(1, 9, 121, -0.3, 0.3)),
            ],
            1e-6,
            |tape, ids| {
                let y = tape.add_reverb(ids[0], ids[1])?;
                let t = tape.tanh(y);
                Ok(tape.sum_all(t))
            },
        );
    }

    #[test]
    fn reverb_tap_zero_is_structurally_dead() {
        let params = vec![
            ("dry".to_string(), rand_tensor(1, 16, 130, -1.0, 1.0)),
            ("ir".to_string(), rand_tensor(1, 6, 131, -0.5, 0.5)),
        ];
        let mut tape = Tape::<f64>::new();
        let ids: Vec<VarId> =
            params.iter().map(|(n, v)| tape.param(n.clone(), v.clone())).collect();
        let y = tape.add_reverb(ids[0], ids[1]).unwrap();
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[1].1.data[0], 0.0);
        // And perturbing tap 0 must not change the output at all.
        let f_plus = eval_perturbed(
            &|tape: &mut Tape<f64>, ids: &[VarId]| {
                let y = tape.add_reverb(ids[0], ids[1])?;
                Ok(tape.sum_all(y))
            },
            &params,
            1,
            0,
            0.5,
        )
        .unwrap();
        let f_base = tape.scalar_value(loss);
        assert!((f_plus - f_base).abs() < 1e-12);
    }
}

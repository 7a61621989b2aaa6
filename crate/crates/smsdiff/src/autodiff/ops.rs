//! Op builders (forward pass) and their pullbacks (reverse pass).
//!
//! Every builder validates shapes, computes the forward value eagerly, and
//! records just enough state for the pullback. Gradients for shared inputs
//! accumulate additively.

use std::sync::Arc;

use rustfft::num_complex::Complex;

use super::scalar::Scalar;
use super::tape::{accumulate, GruSaved, Op, Tape, VarId};
use super::tensor::{matmul, matmul_at, matmul_bt, Tensor};
use crate::dsp::fft::{irfft, rfft};
use crate::dsp::resample::{linear_support, smooth_support};
use crate::dsp::stft::{frame_index_map, num_frames};
use crate::error::{Error, Result};

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::InvalidArgument(format!(
        "{what}: shape mismatch {}x{} vs {}x{}",
        a.0, a.1, b.0, b.1
    ))
}

fn require_same(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(shape_err(what, a, b));
    }
    Ok(())
}

fn zip_map<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows, a.cols, data)
}

fn col_sum<F: Scalar>(t: &Tensor<F>) -> Tensor<F> {
    let mut out = Tensor::zeros(1, t.cols);
    for r in 0..t.rows {
        for (o, &v) in out.data.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    out
}

fn cmul<F: Scalar>(a: Complex<F>, b: Complex<F>) -> Complex<F> {
    Complex::new(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re)
}

fn cconj<F: Scalar>(a: Complex<F>) -> Complex<F> {
    Complex::new(a.re, -a.im)
}

impl<F: Scalar> Tape<F> {
    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        require_same("add", self.shape(a), self.shape(b))?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let needs = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(Op::Add(a, b), value, needs))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        require_same("sub", self.shape(a), self.shape(b))?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let needs = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(Op::Sub(a, b), value, needs))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        require_same("mul", self.shape(a), self.shape(b))?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let needs = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(Op::Mul(a, b), value, needs))
    }

    pub fn scale(&mut self, x: VarId, c: F) -> VarId {
        let value = self.value(x).map(|v| v * c);
        let needs = self.needs_grad(x);
        self.push(Op::Scale(x, c), value, needs)
    }

    pub fn add_const(&mut self, x: VarId, c: F) -> VarId {
        let value = self.value(x).map(|v| v + c);
        let needs = self.needs_grad(x);
        self.push(Op::AddConst(x, c), value, needs)
    }

    /// Broadcast-add a [1 x N] row vector to every row of a [T x N] matrix.
    pub fn add_row_vec(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (rows, cols) = self.shape(a);
        if self.shape(b) != (1, cols) {
            return Err(shape_err("add_row_vec", (rows, cols), self.shape(b)));
        }
        let mut value = self.value(a).clone();
        let bv = self.value(b).data.clone();
        for r in 0..rows {
            for (v, &w) in value.row_mut(r).iter_mut().zip(&bv) {
                *v += w;
            }
        }
        let needs = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(Op::AddRowVec(a, b), value, needs))
    }

    /// Elementwise multiply by a fixed tensor that never receives gradients.
    pub fn mul_const_elem(&mut self, x: VarId, c: Arc<Tensor<F>>) -> Result<VarId> {
        require_same("mul_const_elem", self.shape(x), c.shape())?;
        let value = zip_map(self.value(x), &c, |a, b| a * b);
        let needs = self.needs_grad(x);
        Ok(self.push(Op::MulConstElem(x, c), value, needs))
    }

    /// x - c for a fixed tensor c (e.g. a precomputed target).
    pub fn sub_const_elem(&mut self, x: VarId, c: Arc<Tensor<F>>) -> Result<VarId> {
        require_same("sub_const_elem", self.shape(x), c.shape())?;
        let value = zip_map(self.value(x), &c, |a, b| a - b);
        let needs = self.needs_grad(x);
        Ok(self.push(Op::SubConstElem(x), value, needs))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::InvalidArgument(format!(
                "matmul: inner dims disagree, {ar}x{ac} * {br}x{bc}"
            )));
        }
        let value = matmul(self.value(a), self.value(b));
        let needs = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(Op::Matmul(a, b), value, needs))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let value = self.value(x).map(|v| if v > F::ZERO { v } else { F::ZERO });
        let needs = self.needs_grad(x);
        self.push(Op::Relu(x), value, needs)
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        let value = self.value(x).map(sigmoid_scalar);
        let needs = self.needs_grad(x);
        self.push(Op::Sigmoid(x), value, needs)
    }

    pub fn tanh(&mut self, x: VarId) -> VarId {
        let value = self.value(x).map(|v| v.tanh());
        let needs = self.needs_grad(x);
        self.push(Op::Tanh(x), value, needs)
    }

    pub fn exp(&mut self, x: VarId) -> VarId {
        let value = self.value(x).map(|v| v.exp());
        let needs = self.needs_grad(x);
        self.push(Op::Exp(x), value, needs)
    }

    pub fn abs(&mut self, x: VarId) -> VarId {
        let value = self.value(x).map(|v| v.abs());
        let needs = self.needs_grad(x);
        self.push(Op::Abs(x), value, needs)
    }

    /// x^p for a fixed exponent; inputs are assumed nonnegative when p < 1.
    pub fn pow_const(&mut self, x: VarId, p: F) -> VarId {
        let value = self.value(x).map(|v| v.powf(p));
        let needs = self.needs_grad(x);
        self.push(Op::PowConst(x, p), value, needs)
    }

    /// ln(x + eps).
    pub fn log_eps(&mut self, x: VarId, eps: F) -> VarId {
        let value = self.value(x).map(|v| (v + eps).ln());
        let needs = self.needs_grad(x);
        self.push(Op::LogEps(x, eps), value, needs)
    }

    pub fn sum_all(&mut self, x: VarId) -> VarId {
        let value = Tensor::scalar(self.value(x).sum());
        let needs = self.needs_grad(x);
        self.push(Op::SumAll(x), value, needs)
    }

    pub fn mean_all(&mut self, x: VarId) -> VarId {
        let n = F::from_f64(self.value(x).len() as f64);
        let value = Tensor::scalar(self.value(x).sum() / n);
        let needs = self.needs_grad(x);
        self.push(Op::MeanAll(x), value, needs)
    }

    /// Row sums: [T x N] -> [T x 1].
    pub fn sum_rows(&mut self, x: VarId) -> VarId {
        let t = self.value(x);
        let data = (0..t.rows).map(|r| t.row(r).iter().copied().sum()).collect();
        let value = Tensor::from_vec(t.rows, 1, data);
        let needs = self.needs_grad(x);
        self.push(Op::SumRows(x), value, needs)
    }

    /// Divide each row by its sum. A row summing to zero maps to a zero row
    /// and propagates no gradient.
    pub fn normalize_rows(&mut self, x: VarId) -> VarId {
        let t = self.value(x);
        let mut value = t.clone();
        for r in 0..t.rows {
            let s: F = t.row(r).iter().copied().sum();
            let row = value.row_mut(r);
            if s == F::ZERO {
                row.fill(F::ZERO);
            } else {
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
        }
        let needs = self.needs_grad(x);
        self.push(Op::NormalizeRows(x), value, needs)
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> Result<VarId> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("concat_cols of zero tensors".into()));
        };
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(shape_err("concat_cols", (rows, 0), (r, c)));
            }
            cols += c;
        }
        let mut value = Tensor::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let t = self.value(p).clone();
            for r in 0..rows {
                value.row_mut(r)[at..at + t.cols].copy_from_slice(t.row(r));
            }
            at += t.cols;
        }
        let needs = parts.iter().any(|&p| self.needs_grad(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value, needs))
    }

    pub fn slice_cols(&mut self, x: VarId, start: usize, end: usize) -> Result<VarId> {
        let (rows, cols) = self.shape(x);
        if start >= end || end > cols {
            return Err(Error::InvalidArgument(format!(
                "slice_cols: [{start}, {end}) out of range for {rows}x{cols}"
            )));
        }
        let t = self.value(x);
        let mut value = Tensor::zeros(rows, end - start);
        for r in 0..rows {
            value.row_mut(r).copy_from_slice(&t.row(r)[start..end]);
        }
        let needs = self.needs_grad(x);
        Ok(self.push(Op::SliceCols(x, start, end), value, needs))
    }

    pub fn reshape(&mut self, x: VarId, rows: usize, cols: usize) -> Result<VarId> {
        let t = self.value(x);
        if rows * cols != t.len() {
            return Err(Error::InvalidArgument(format!(
                "reshape: {}x{} has {} elements, want {rows}x{cols}",
                t.rows,
                t.cols,
                t.len()
            )));
        }
        let value = Tensor::from_vec(rows, cols, t.data.clone());
        let needs = self.needs_grad(x);
        Ok(self.push(Op::Reshape(x), value, needs))
    }

    /// Row-wise layer normalization with learnable [1 x N] gain and bias.
    pub fn layer_norm(&mut self, x: VarId, gamma: VarId, beta: VarId) -> Result<VarId> {
        let (rows, cols) = self.shape(x);
        if self.shape(gamma) != (1, cols) {
            return Err(shape_err("layer_norm gain", (rows, cols), self.shape(gamma)));
        }
        if self.shape(beta) != (1, cols) {
            return Err(shape_err("layer_norm bias", (rows, cols), self.shape(beta)));
        }
        let eps = F::from_f64(1e-5);
        let nf = F::from_f64(cols as f64);
        let t = self.value(x);
        let g = self.value(gamma).data.clone();
        let b = self.value(beta).data.clone();
        let mut xhat = Tensor::zeros(rows, cols);
        let mut inv_sd = Vec::with_capacity(rows);
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let row = t.row(r);
            let mean: F = row.iter().copied().sum::<F>() / nf;
            let var: F = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
            let isd = F::ONE / (var + eps).sqrt();
            inv_sd.push(isd);
            for c in 0..cols {
                let xh = (row[c] - mean) * isd;
                xhat.row_mut(r)[c] = xh;
                value.row_mut(r)[c] = xh * g[c] + b[c];
            }
        }
        let needs = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        Ok(self.push(Op::LayerNorm { x, gamma, beta, inv_sd, xhat }, value, needs))
    }

    /// Column-wise normalization over time, without learnable parameters.
    pub fn instance_norm_cols(&mut self, x: VarId) -> VarId {
        let (rows, cols) = self.shape(x);
        let eps = F::from_f64(1e-5);
        let nf = F::from_f64(rows as f64);
        let t = self.value(x);
        let mut xhat = Tensor::zeros(rows, cols);
        let mut inv_sd = Vec::with_capacity(cols);
        for c in 0..cols {
            let mut mean = F::ZERO;
            for r in 0..rows {
                mean += t.get(r, c);
            }
            mean /= nf;
            let mut var = F::ZERO;
            for r in 0..rows {
                let d = t.get(r, c) - mean;
                var += d * d;
            }
            var /= nf;
            let isd = F::ONE / (var + eps).sqrt();
            inv_sd.push(isd);
            for r in 0..rows {
                xhat.set(r, c, (t.get(r, c) - mean) * isd);
            }
        }
        let value = xhat.clone();
        let needs = self.needs_grad(x);
        self.push(Op::InstanceNormCols { x, inv_sd, xhat }, value, needs)
    }

    /// Single-layer GRU over a [T x I] sequence with zero initial state.
    /// Weights follow the [reset | update | candidate] column layout; the
    /// candidate's hidden-side preactivation is gated by reset before tanh.
    pub fn gru(
        &mut self,
        x: VarId,
        w_ih: VarId,
        w_hh: VarId,
        b_ih: VarId,
        b_hh: VarId,
    ) -> Result<VarId> {
        let (t_steps, input) = self.shape(x);
        let (hidden, three_h) = self.shape(w_hh);
        if three_h != 3 * hidden {
            return Err(Error::InvalidArgument(format!(
                "gru: recurrent weights must be H x 3H, got {hidden}x{three_h}"
            )));
        }
        if self.shape(w_ih) != (input, three_h) {
            return Err(shape_err("gru input weights", (input, three_h), self.shape(w_ih)));
        }
        if self.shape(b_ih) != (1, three_h) || self.shape(b_hh) != (1, three_h) {
            return Err(Error::InvalidArgument(format!(
                "gru: biases must be 1x{three_h}"
            )));
        }
        if t_steps == 0 {
            return Err(Error::InvalidArgument("gru over an empty sequence".into()));
        }
        let h = hidden;
        // Input-side gate preactivations for all steps in one multiply.
        let mut gi = matmul(self.value(x), self.value(w_ih));
        let bi = self.value(b_ih).data.clone();
        for r in 0..t_steps {
            for (v, &w) in gi.row_mut(r).iter_mut().zip(&bi) {
                *v += w;
            }
        }
        let bh = self.value(b_hh).data.clone();
        let w_hh_t = self.value(w_hh).data.clone();
        let mut h_all = Tensor::zeros(t_steps + 1, h);
        let mut r_s = Tensor::zeros(t_steps, h);
        let mut z_s = Tensor::zeros(t_steps, h);
        let mut n_s = Tensor::zeros(t_steps, h);
        let mut s_s = Tensor::zeros(t_steps, h);
        let mut gh = vec![F::ZERO; 3 * h];
        for t in 0..t_steps {
            gh.copy_from_slice(&bh);
            // gh += h_t * W_hh
            unsafe {
                F::gemm(
                    1,
                    h,
                    3 * h,
                    F::ONE,
                    h_all.row(t).as_ptr(),
                    h as isize,
                    1,
                    w_hh_t.as_ptr(),
                    (3 * h) as isize,
                    1,
                    F::ONE,
                    gh.as_mut_ptr(),
                    (3 * h) as isize,
                    1,
                );
            }
            for j in 0..h {
                let ar = gi.get(t, j) + gh[j];
                let az = gi.get(t, h + j) + gh[h + j];
                let s = gh[2 * h + j];
                let r = sigmoid_scalar(ar);
                let z = sigmoid_scalar(az);
                let n = (gi.get(t, 2 * h + j) + r * s).tanh();
                let h_prev = h_all.get(t, j);
                let h_new = (F::ONE - z) * n + z * h_prev;
                r_s.set(t, j, r);
                z_s.set(t, j, z);
                n_s.set(t, j, n);
                s_s.set(t, j, s);
                h_all.set(t + 1, j, h_new);
            }
        }
        let value = Tensor::from_vec(t_steps, h, h_all.data[h..].to_vec());
        let needs = self.needs_grad(x)
            || self.needs_grad(w_ih)
            || self.needs_grad(w_hh)
            || self.needs_grad(b_ih)
            || self.needs_grad(b_hh);
        let saved = GruSaved { h_all, r: r_s, z: z_s, n: n_s, s: s_s };
        Ok(self.push(Op::Gru { x, w_ih, w_hh, b_ih, b_hh, saved }, value, needs))
    }

    /// Slice a [1 x L] signal into reflect-padded, windowed frames
    /// [num_frames x fft]; the framing grid matches the plain STFT exactly.
    pub fn frame_window(
        &mut self,
        x: VarId,
        fft: usize,
        hop: usize,
        window: Arc<Vec<F>>,
    ) -> Result<VarId> {
        let (rows, len) = self.shape(x);
        if rows != 1 || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame_window expects a nonempty 1xL signal, got {rows}x{len}"
            )));
        }
        if !fft.is_power_of_two() || hop == 0 || hop > fft || window.len() != fft {
            return Err(Error::InvalidArgument(format!(
                "frame_window: bad fft {fft} / hop {hop} / window {}",
                window.len()
            )));
        }
        let map = frame_index_map(len, fft, hop);
        let frames = num_frames(len, hop);
        let sig = &self.value(x).data;
        let mut value = Tensor::zeros(frames, fft);
        for t in 0..frames {
            let idx = &map[t * fft..(t + 1) * fft];
            let row = value.row_mut(t);
            for (i, &src) in idx.iter().enumerate() {
                row[i] = sig[src as usize] * window[i];
            }
        }
        let needs = self.needs_grad(x);
        Ok(self.push(Op::FrameWindow { x, fft, window, map }, value, needs))
    }

    /// One-sided FFT magnitudes per row: [T x fft] -> [T x (fft/2 + 1)].
    pub fn fft_real_mag(&mut self, x: VarId) -> Result<VarId> {
        let (frames, fft) = self.shape(x);
        if !fft.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "fft_real_mag: row length {fft} is not a power of two"
            )));
        }
        let bins = fft / 2 + 1;
        let t = self.value(x);
        let mut spectra = Vec::with_capacity(frames * bins);
        let mut value = Tensor::zeros(frames, bins);
        for r in 0..frames {
            let spec = rfft(t.row(r));
            for (k, c) in spec.iter().enumerate() {
                value.row_mut(r)[k] = (c.re * c.re + c.im * c.im).sqrt();
            }
            spectra.extend(spec);
        }
        let needs = self.needs_grad(x);
        Ok(self.push(Op::FftRealMag { x, spectra }, value, needs))
    }

    /// Overlap-add frames at the given hop into a [1 x T*hop] signal.
    pub fn overlap_add(&mut self, frames: VarId, hop: usize) -> Result<VarId> {
        let (t_frames, fft) = self.shape(frames);
        if hop == 0 || hop > fft {
            return Err(Error::InvalidArgument(format!(
                "overlap_add: hop {hop} out of range for frame length {fft}"
            )));
        }
        let out_len = t_frames * hop;
        let t = self.value(frames);
        let mut value = Tensor::zeros(1, out_len);
        for f in 0..t_frames {
            let row = t.row(f);
            let base = f * hop;
            for (i, &v) in row.iter().enumerate() {
                if base + i < out_len {
                    value.data[base + i] += v;
                }
            }
        }
        let needs = self.needs_grad(frames);
        Ok(self.push(Op::OverlapAdd { frames, hop }, value, needs))
    }

    /// Apply per-frame magnitude gains to fixed noise spectra and return the
    /// filtered time-domain frames [T x fft]. `h` is [T x (fft/2+1)] gains;
    /// `spectra` is the row-major rFFT of the windowed noise frames.
    pub fn noise_filter(
        &mut self,
        h: VarId,
        spectra: Arc<Vec<Complex<F>>>,
        fft: usize,
    ) -> Result<VarId> {
        let (t_frames, hcols) = self.shape(h);
        let bins = fft / 2 + 1;
        if !fft.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "noise_filter: fft {fft} is not a power of two"
            )));
        }
        if hcols != bins {
            return Err(Error::InvalidArgument(format!(
                "noise_filter: gains have {hcols} columns, fft {fft} needs {bins}"
            )));
        }
        if spectra.len() != t_frames * bins {
            return Err(Error::InvalidArgument(format!(
                "noise_filter: {} spectra values for {t_frames} frames x {bins} bins",
                spectra.len()
            )));
        }
        let gains = self.value(h);
        let mut value = Tensor::zeros(t_frames, fft);
        let mut buf = vec![Complex::new(F::ZERO, F::ZERO); bins];
        for t in 0..t_frames {
            let g = gains.row(t);
            for k in 0..bins {
                let x = spectra[t * bins + k];
                buf[k] = Complex::new(x.re * g[k], x.im * g[k]);
            }
            let y = irfft(&buf, fft);
            value.row_mut(t).copy_from_slice(&y);
        }
        let needs = self.needs_grad(h);
        Ok(self.push(Op::NoiseFilter { h, spectra, fft }, value, needs))
    }

    /// Linearly upsample rows: [T x D] -> [target x D], same mapping as the
    /// plain bilinear upsampler.
    pub fn upsample_rows(&mut self, x: VarId, target: usize) -> Result<VarId> {
        let (rows, cols) = self.shape(x);
        if rows == 0 || target == 0 {
            return Err(Error::InvalidArgument(format!(
                "upsample_rows: {rows} rows to {target}"
            )));
        }
        let t = self.value(x);
        let mut value = Tensor::zeros(target, cols);
        for i in 0..target {
            let (a, b, w) = linear_support(i, rows, target);
            let wa = F::from_f64(1.0 - w);
            let wb = F::from_f64(w);
            let (ra, rb) = (t.row(a), t.row(b));
            let out = value.row_mut(i);
            for c in 0..cols {
                out[c] = ra[c] * wa + rb[c] * wb;
            }
        }
        let needs = self.needs_grad(x);
        Ok(self.push(Op::UpsampleRows { x }, value, needs))
    }

    /// Overlapping-Hamming smooth upsample: [T x D] -> [T*hop x D], matching
    /// the plain control-rate smoother.
    pub fn smooth_upsample(&mut self, x: VarId, hop: usize) -> Result<VarId> {
        let (rows, cols) = self.shape(x);
        if rows == 0 || hop == 0 {
            return Err(Error::InvalidArgument(format!(
                "smooth_upsample: {rows} rows with hop {hop}"
            )));
        }
        let t = self.value(x);
        let target = rows * hop;
        let mut value = Tensor::zeros(target, cols);
        for n in 0..target {
            let (support, count) = smooth_support(n, hop, rows);
            let wsum: f64 = support[..count].iter().map(|(_, w)| w).sum();
            let out = value.row_mut(n);
            for &(fr, w) in &support[..count] {
                let norm = F::from_f64(w / wsum);
                for (o, &v) in out.iter_mut().zip(t.row(fr)) {
                    *o += v * norm;
                }
            }
        }
        let needs = self.needs_grad(x);
        Ok(self.push(Op::SmoothUpsample { x, hop }, value, needs))
    }

    /// dry + dry * ir via FFT convolution, truncated to the dry length. The
    /// impulse response's tap 0 is structurally zero so the identity path
    /// stays fixed.
    pub fn add_reverb(&mut self, dry: VarId, ir: VarId) -> Result<VarId> {
        let (dr, len) = self.shape(dry);
        let (ir_rows, ir_len) = self.shape(ir);
        if dr != 1 || ir_rows != 1 || len == 0 || ir_len == 0 {
            return Err(Error::InvalidArgument(format!(
                "add_reverb expects 1xL dry and 1xR ir, got {dr}x{len} and {ir_rows}x{ir_len}"
            )));
        }
        let fft_len = (len + ir_len - 1).next_power_of_two();
        let zero = Complex::new(F::ZERO, F::ZERO);
        let mut dry_spec = vec![zero; fft_len];
        for (b, &v) in dry_spec.iter_mut().zip(&self.value(dry).data) {
            b.re = v;
        }
        F::fft(&mut dry_spec, false);
        let mut ir_spec = vec![zero; fft_len];
        for (b, &v) in ir_spec.iter_mut().zip(&self.value(ir).data) {
            b.re = v;
        }
        ir_spec[0].re = F::ZERO; // tap 0 never contributes
        F::fft(&mut ir_spec, false);
        let mut prod: Vec<Complex<F>> =
            dry_spec.iter().zip(&ir_spec).map(|(&a, &b)| cmul(a, b)).collect();
        F::fft(&mut prod, true);
        let inv_n = F::ONE / F::from_f64(fft_len as f64);
        let dry_t = self.value(dry);
        let mut value = Tensor::zeros(1, len);
        for n in 0..len {
            value.data[n] = dry_t.data[n] + prod[n].re * inv_n;
        }
        let needs = self.needs_grad(dry) || self.needs_grad(ir);
        Ok(self.push(Op::AddReverb { dry, ir, fft_len, dry_spec, ir_spec }, value, needs))
    }
}

fn sigmoid_scalar<F: Scalar>(v: F) -> F {
    if v >= F::ZERO {
        F::ONE / (F::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::ONE + e)
    }
}

/// Route the upstream gradient of node `i` into its inputs.
pub(crate) fn backward_op<F: Scalar>(
    tape: &Tape<F>,
    i: usize,
    u: &Tensor<F>,
    grads: &mut [Option<Tensor<F>>],
) {
    let node = &tape.nodes[i];
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if tape.needs_grad(*a) {
                accumulate(grads, *a, u.clone());
            }
            if tape.needs_grad(*b) {
                accumulate(grads, *b, u.clone());
            }
        }
        Op::Sub(a, b) => {
            if tape.needs_grad(*a) {
                accumulate(grads, *a, u.clone());
            }
            if tape.needs_grad(*b) {
                accumulate(grads, *b, u.map(|v| -v));
            }
        }
        Op::Mul(a, b) => {
            if tape.needs_grad(*a) {
                accumulate(grads, *a, zip_map(u, tape.value(*b), |g, v| g * v));
            }
            if tape.needs_grad(*b) {
                accumulate(grads, *b, zip_map(u, tape.value(*a), |g, v| g * v));
            }
        }
        Op::Scale(x, c) => {
            if tape.needs_grad(*x) {
                let c = *c;
                accumulate(grads, *x, u.map(|g| g * c));
            }
        }
        Op::AddConst(x, _) => {
            if tape.needs_grad(*x) {
                accumulate(grads, *x, u.clone());
            }
        }
        Op::AddRowVec(a, b) => {
            if tape.needs_grad(*a) {
                accumulate(grads, *a, u.clone());
            }
            if tape.needs_grad(*b) {
                accumulate(grads, *b, col_sum(u));
            }
        }
        Op::MulConstElem(x, c) => {
            if tape.needs_grad(*x) {
                accumulate(grads, *x, zip_map(u, c, |g, v| g * v));
            }
        }
        Op::SubConstElem(x) => {
            if tape.needs_grad(*x) {
                accumulate(grads, *x, u.clone());
            }
        }
        Op::Matmul(a, b) => {
            if tape.needs_grad(*a) {
                accumulate(grads, *a, matmul_bt(u, tape.value(*b)));
            }
            if tape.needs_grad(*b) {
                accumulate(grads, *b, matmul_at(tape.value(*a), u));
            }
        }
        Op::Relu(x) => {
            if tape.needs_grad(*x) {
                accumulate(grads, *x, zip_map(u, y, |g, v| if v > F::ZERO { g } else { F::ZERO }));
            }
        }
        Op::Sigmoid(x) => {
            if tape.needs_grad(*x) {
                accumulate(grads, *x, zip_map(u, y, |g, s| g * s * (F::ONE - s)));
            }
        }
        Op::Tanh(x) => {
            if tape.needs_grad(*x) {
                accumulate(grads, *x, zip_map(u, y, |g, t| g * (F::ONE - t * t)));
            }
        }
        Op::Exp(x) => {
            if tape.needs_grad(*x) {
                accumulate(grads, *x, zip_map(u, y, |g, e| g * e));
            }
        }
        Op::Abs(x) => {
            if tape.needs_grad(*x) {
                let sign = tape.value(*x).map(|v| {
                    if v > F::ZERO {
                        F::ONE
                    } else if v < F::ZERO {
                        -F::ONE
                    } else {
                        F::ZERO
                    }
                });
                accumulate(grads, *x, zip_map(u, &sign, |g, s| g * s));
            }
        }
        Op::PowConst(x, p) => {
            if tape.needs_grad(*x) {
                let p = *p;
                let grad = zip_map(u, tape.value(*x), |g, v| {
                    if v == F::ZERO {
                        F::ZERO
                    } else {
                        g * p * v.powf(p - F::ONE)
                    }
                });
                accumulate(grads, *x, grad);
            }
        }
        Op::LogEps(x, eps) => {
            if tape.needs_grad(*x) {
                let eps = *eps;
                accumulate(grads, *x, zip_map(u, tape.value(*x), |g, v| g / (v + eps)));
            }
        }
        Op::SumAll(x) => {
            if tape.needs_grad(*x) {
                let g = u.data[0];
                let (r, c) = tape.shape(*x);
                accumulate(grads, *x, Tensor::from_vec(r, c, vec![g; r * c]));
            }
        }
        Op::MeanAll(x) => {
            if tape.needs_grad(*x) {
                let (r, c) = tape.shape(*x);
                let g = u.data[0] / F::from_f64((r * c) as f64);
                accumulate(grads, *x, Tensor::from_vec(r, c, vec![g; r * c]));
            }
        }
        Op::SumRows(x) => {
            if tape.needs_grad(*x) {
                let (r, c) = tape.shape(*x);
                let mut g = Tensor::zeros(r, c);
                for t in 0..r {
                    g.row_mut(t).fill(u.data[t]);
                }
                accumulate(grads, *x, g);
            }
        }
        Op::NormalizeRows(x) => {
            if tape.needs_grad(*x) {
                let xin = tape.value(*x);
                let mut g = Tensor::zeros(xin.rows, xin.cols);
                for r in 0..xin.rows {
                    let s: F = xin.row(r).iter().copied().sum();
                    if s == F::ZERO {
                        continue;
                    }
                    let dot: F =
                        u.row(r).iter().zip(y.row(r)).map(|(&a, &b)| a * b).sum();
                    for (gv, &uv) in g.row_mut(r).iter_mut().zip(u.row(r)) {
                        *gv = (uv - dot) / s;
                    }
                }
                accumulate(grads, *x, g);
            }
        }
        Op::ConcatCols(parts) => {
            let mut at = 0;
            for &p in parts {
                let (rows, cols) = tape.shape(p);
                if tape.needs_grad(p) {
                    let mut g = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        g.row_mut(r).copy_from_slice(&u.row(r)[at..at + cols]);
                    }
                    accumulate(grads, p, g);
                }
                at += cols;
            }
        }
        Op::SliceCols(x, start, end) => {
            if tape.needs_grad(*x) {
                let (rows, cols) = tape.shape(*x);
                let mut g = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    g.row_mut(r)[*start..*end].copy_from_slice(u.row(r));
                }
                accumulate(grads, *x, g);
            }
        }
        Op::Reshape(x) => {
            if tape.needs_grad(*x) {
                let (rows, cols) = tape.shape(*x);
                accumulate(grads, *x, Tensor::from_vec(rows, cols, u.data.clone()));
            }
        }
        Op::LayerNorm { x, gamma, beta, inv_sd, xhat } => {
            if tape.needs_grad(*beta) {
                accumulate(grads, *beta, col_sum(u));
            }
            if tape.needs_grad(*gamma) {
                accumulate(grads, *gamma, col_sum(&zip_map(u, xhat, |g, xh| g * xh)));
            }
            if tape.needs_grad(*x) {
                let (rows, cols) = tape.shape(*x);
                let g = tape.value(*gamma);
                let nf = F::from_f64(cols as f64);
                let mut gx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let mut m1 = F::ZERO;
                    let mut m2 = F::ZERO;
                    let urow = u.row(r);
                    let xrow = xhat.row(r);
                    for c in 0..cols {
                        let dxh = urow[c] * g.data[c];
                        m1 += dxh;
                        m2 += dxh * xrow[c];
                    }
                    m1 /= nf;
                    m2 /= nf;
                    let isd = inv_sd[r];
                    for c in 0..cols {
                        let dxh = urow[c] * g.data[c];
                        gx.row_mut(r)[c] = isd * (dxh - m1 - xrow[c] * m2);
                    }
                }
                accumulate(grads, *x, gx);
            }
        }
        Op::InstanceNormCols { x, inv_sd, xhat } => {
            if tape.needs_grad(*x) {
                let (rows, cols) = tape.shape(*x);
                let nf = F::from_f64(rows as f64);
                let mut gx = Tensor::zeros(rows, cols);
                for c in 0..cols {
                    let mut m1 = F::ZERO;
                    let mut m2 = F::ZERO;
                    for r in 0..rows {
                        let uv = u.get(r, c);
                        m1 += uv;
                        m2 += uv * xhat.get(r, c);
                    }
                    m1 /= nf;
                    m2 /= nf;
                    let isd = inv_sd[c];
                    for r in 0..rows {
                        let uv = u.get(r, c);
                        gx.set(r, c, isd * (uv - m1 - xhat.get(r, c) * m2));
                    }
                }
                accumulate(grads, *x, gx);
            }
        }
        Op::Gru { x, w_ih, w_hh, b_ih, b_hh, saved } => {
            backward_gru(tape, u, *x, *w_ih, *w_hh, *b_ih, *b_hh, saved, grads);
        }
        Op::FrameWindow { x, fft, window, map } => {
            if tape.needs_grad(*x) {
                let len = tape.shape(*x).1;
                let mut g = Tensor::zeros(1, len);
                let frames = u.rows;
                for t in 0..frames {
                    let idx = &map[t * fft..(t + 1) * fft];
                    let urow = u.row(t);
                    for (i, &src) in idx.iter().enumerate() {
                        g.data[src as usize] += window[i] * urow[i];
                    }
                }
                accumulate(grads, *x, g);
            }
        }
        Op::FftRealMag { x, spectra } => {
            if tape.needs_grad(*x) {
                let (frames, fft) = tape.shape(*x);
                let bins = fft / 2 + 1;
                let zero = Complex::new(F::ZERO, F::ZERO);
                let mut g = Tensor::zeros(frames, fft);
                let mut buf = vec![zero; fft];
                for t in 0..frames {
                    buf.fill(zero);
                    let urow = u.row(t);
                    let mrow = y.row(t);
                    for k in 0..bins {
                        let mag = mrow[k];
                        if mag > F::ZERO {
                            let xk = spectra[t * bins + k];
                            let scale = urow[k] / mag;
                            buf[k] = Complex::new(xk.re * scale, -xk.im * scale);
                        }
                    }
                    // d|X_k|/dx_n carries e^{-i 2pi k n / N}: a forward
                    // transform of the half-spectrum adjoint, real part.
                    F::fft(&mut buf, false);
                    for (gv, c) in g.row_mut(t).iter_mut().zip(&buf) {
                        *gv = c.re;
                    }
                }
                accumulate(grads, *x, g);
            }
        }
        Op::OverlapAdd { frames, hop } => {
            if tape.needs_grad(*frames) {
                let (t_frames, fft) = tape.shape(*frames);
                let out_len = y.cols;
                let mut g = Tensor::zeros(t_frames, fft);
                for f in 0..t_frames {
                    let base = f * hop;
                    let row = g.row_mut(f);
                    for (i, gv) in row.iter_mut().enumerate() {
                        if base + i < out_len {
                            *gv = u.data[base + i];
                        }
                    }
                }
                accumulate(grads, *frames, g);
            }
        }
        Op::NoiseFilter { h, spectra, fft } => {
            if tape.needs_grad(*h) {
                let (t_frames, bins) = tape.shape(*h);
                let inv_n = F::ONE / F::from_f64(*fft as f64);
                let two = F::from_f64(2.0);
                let mut g = Tensor::zeros(t_frames, bins);
                for t in 0..t_frames {
                    let uspec = rfft(u.row(t));
                    let grow = g.row_mut(t);
                    for k in 0..bins {
                        let xk = spectra[t * bins + k];
                        let uk = uspec[k];
                        // Re(X_k * conj(U_k))
                        let re = xk.re * uk.re + xk.im * uk.im;
                        let mult = if k == 0 || k == bins - 1 { F::ONE } else { two };
                        grow[k] = mult * inv_n * re;
                    }
                }
                accumulate(grads, *h, g);
            }
        }
        Op::UpsampleRows { x } => {
            if tape.needs_grad(*x) {
                let (rows, cols) = tape.shape(*x);
                let target = y.rows;
                let mut g = Tensor::zeros(rows, cols);
                for i in 0..target {
                    let (a, b, w) = linear_support(i, rows, target);
                    let wa = F::from_f64(1.0 - w);
                    let wb = F::from_f64(w);
                    let urow = u.row(i);
                    for c in 0..cols {
                        g.row_mut(a)[c] += urow[c] * wa;
                        g.row_mut(b)[c] += urow[c] * wb;
                    }
                }
                accumulate(grads, *x, g);
            }
        }
        Op::SmoothUpsample { x, hop } => {
            if tape.needs_grad(*x) {
                let (rows, cols) = tape.shape(*x);
                let target = y.rows;
                let mut g = Tensor::zeros(rows, cols);
                for n in 0..target {
                    let (support, count) = smooth_support(n, *hop, rows);
                    let wsum: f64 = support[..count].iter().map(|(_, w)| w).sum();
                    let urow = u.row(n);
                    for &(fr, w) in &support[..count] {
                        let norm = F::from_f64(w / wsum);
                        for (gv, &uv) in g.row_mut(fr).iter_mut().zip(urow) {
                            *gv += uv * norm;
                        }
                    }
                }
                accumulate(grads, *x, g);
            }
        }
        Op::AddReverb { dry, ir, fft_len, dry_spec, ir_spec } => {
            let len = y.cols;
            let ir_len = tape.shape(*ir).1;
            let zero = Complex::new(F::ZERO, F::ZERO);
            let mut uspec = vec![zero; *fft_len];
            for (b, &v) in uspec.iter_mut().zip(&u.data) {
                b.re = v;
            }
            F::fft(&mut uspec, false);
            let inv_n = F::ONE / F::from_f64(*fft_len as f64);
            if tape.needs_grad(*dry) {
                // u + corr(ir, u): wet feedback plus the identity path.
                let mut prod: Vec<Complex<F>> =
                    ir_spec.iter().zip(&uspec).map(|(&a, &b)| cmul(cconj(a), b)).collect();
                F::fft(&mut prod, true);
                let mut g = Tensor::zeros(1, len);
                for n in 0..len {
                    g.data[n] = u.data[n] + prod[n].re * inv_n;
                }
                accumulate(grads, *dry, g);
            }
            if tape.needs_grad(*ir) {
                let mut prod: Vec<Complex<F>> =
                    dry_spec.iter().zip(&uspec).map(|(&a, &b)| cmul(cconj(a), b)).collect();
                F::fft(&mut prod, true);
                let mut g = Tensor::zeros(1, ir_len);
                for tau in 1..ir_len {
                    g.data[tau] = prod[tau].re * inv_n;
                }
                accumulate(grads, *ir, g);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_gru<F: Scalar>(
    tape: &Tape<F>,
    u: &Tensor<F>,
    x: VarId,
    w_ih: VarId,
    w_hh: VarId,
    b_ih: VarId,
    b_hh: VarId,
    saved: &GruSaved<F>,
    grads: &mut [Option<Tensor<F>>],
) {
    let t_steps = saved.r.rows;
    let h = saved.r.cols;
    let w_hh_val = tape.value(w_hh);
    let mut d_gi = Tensor::zeros(t_steps, 3 * h);
    let mut d_gh = Tensor::zeros(t_steps, 3 * h);
    let mut dh = vec![F::ZERO; h];
    let mut dh_rec = vec![F::ZERO; h];
    for t in (0..t_steps).rev() {
        for (d, &uv) in dh.iter_mut().zip(u.row(t)) {
            *d += uv;
        }
        {
            let r = saved.r.row(t);
            let z = saved.z.row(t);
            let n = saved.n.row(t);
            let s = saved.s.row(t);
            let h_prev = saved.h_all.row(t);
            let gi_row = d_gi.row_mut(t);
            let gh_row = d_gh.row_mut(t);
            for j in 0..h {
                let dz = dh[j] * (h_prev[j] - n[j]);
                let dn = dh[j] * (F::ONE - z[j]);
                let d_an = dn * (F::ONE - n[j] * n[j]);
                let d_ar = d_an * s[j] * r[j] * (F::ONE - r[j]);
                let d_az = dz * z[j] * (F::ONE - z[j]);
                gi_row[j] = d_ar;
                gi_row[h + j] = d_az;
                gi_row[2 * h + j] = d_an;
                gh_row[j] = d_ar;
                gh_row[h + j] = d_az;
                gh_row[2 * h + j] = d_an * r[j];
            }
        }
        // dh_{t} = dh_{t+1} .* z + d_gh_t * W_hh^T
        unsafe {
            F::gemm(
                1,
                3 * h,
                h,
                F::ONE,
                d_gh.row(t).as_ptr(),
                (3 * h) as isize,
                1,
                w_hh_val.data.as_ptr(),
                1,
                (3 * h) as isize,
                F::ZERO,
                dh_rec.as_mut_ptr(),
                h as isize,
                1,
            );
        }
        let z = saved.z.row(t);
        for j in 0..h {
            dh[j] = dh[j] * z[j] + dh_rec[j];
        }
    }
    if tape.needs_grad(x) {
        accumulate(grads, x, matmul_bt(&d_gi, tape.value(w_ih)));
    }
    if tape.needs_grad(w_ih) {
        accumulate(grads, w_ih, matmul_at(tape.value(x), &d_gi));
    }
    if tape.needs_grad(w_hh) {
        let h_prev = Tensor::from_vec(t_steps, h, saved.h_all.data[..t_steps * h].to_vec());
        accumulate(grads, w_hh, matmul_at(&h_prev, &d_gh));
    }
    if tape.needs_grad(b_ih) {
        accumulate(grads, b_ih, col_sum(&d_gi));
    }
    if tape.needs_grad(b_hh) {
        accumulate(grads, b_hh, col_sum(&d_gh));
    }
}

//! Real-input FFT helpers on top of the complex transform.

use rustfft::num_complex::Complex;

use crate::autodiff::Scalar;

/// One-sided spectrum of a real signal: bins 0..=n/2.
pub fn rfft<F: Scalar>(x: &[F]) -> Vec<Complex<F>> {
    let n = x.len();
    let mut buf: Vec<Complex<F>> = x.iter().map(|&v| Complex::new(v, F::ZERO)).collect();
    F::fft(&mut buf, false);
    buf.truncate(n / 2 + 1);
    buf
}

/// Inverse of [`rfft`]: reconstructs the length-`n` real signal from its
/// one-sided spectrum, including the 1/n normalization.
pub fn irfft<F: Scalar>(spec: &[Complex<F>], n: usize) -> Vec<F> {
    assert_eq!(spec.len(), n / 2 + 1, "one-sided spectrum for length {n}");
    let mut buf = vec![Complex::new(F::ZERO, F::ZERO); n];
    buf[..spec.len()].copy_from_slice(spec);
    for k in 1..n - n / 2 {
        buf[n - k] = Complex::new(spec[k].re, -spec[k].im);
    }
    F::fft(&mut buf, true);
    let scale = F::ONE / F::from_f64(n as f64);
    buf.into_iter().map(|c| c.re * scale).collect()
}

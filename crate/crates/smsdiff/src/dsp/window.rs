//! Analysis windows.

use crate::autodiff::Scalar;

/// Periodic Hann window: w[i] = 0.5 - 0.5 cos(2 pi i / n). Sums to n/2 and
/// overlap-adds to a constant at hop n/2, which keeps frame bookkeeping exact.
pub fn hann_periodic<F: Scalar>(n: usize) -> Vec<F> {
    (0..n)
        .map(|i| {
            let c = (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
            F::from_f64(0.5 - 0.5 * c)
        })
        .collect()
}

/// Hamming weight at signed offset `delta` from a window center, for a window
/// spanning (-hop, hop). Peak 1.0 at the center, 0.08 at the edges.
pub fn hamming_at(delta: f64, hop: f64) -> f64 {
    0.54 + 0.46 * (std::f64::consts::PI * delta / hop).cos()
}

/// 4-term Blackman-Harris window (symmetric), sidelobes below -92 dB.
/// Used where measurement leakage must sit well under a -60 dB bound.
pub fn blackman_harris<F: Scalar>(n: usize) -> Vec<F> {
    const A: [f64; 4] = [0.35875, 0.48829, 0.14128, 0.01168];
    (0..n)
        .map(|i| {
            let x = std::f64::consts::PI * i as f64 / (n - 1) as f64;
            F::from_f64(A[0] - A[1] * (2.0 * x).cos() + A[2] * (4.0 * x).cos() - A[3] * (6.0 * x).cos())
        })
        .collect()
}

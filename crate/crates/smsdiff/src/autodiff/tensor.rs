//! Dense row-major matrices. Vectors are 1 x n or n x 1; no broadcasting
//! beyond what individual tape ops define explicitly.

use super::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![F::ZERO; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape {rows}x{cols} vs {} values", data.len());
        Tensor { rows, cols, data }
    }

    /// A 1x1 tensor (tape losses are scalars of this form).
    pub fn scalar(v: F) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn row_vec(data: Vec<F>) -> Self {
        Tensor { rows: 1, cols: data.len(), data }
    }

    pub fn col_vec(data: Vec<F>) -> Self {
        Tensor { rows: data.len(), cols: 1, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<F>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale_assign(&mut self, s: F) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn sq_l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64() * v.to_f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.to_f64()).collect(),
        }
    }

    pub fn from_f64_tensor(t: &Tensor<f64>) -> Self {
        Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().map(|&v| F::from_f64(v)).collect(),
        }
    }
}

/// C = A * B.
pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.cols, b.rows, "matmul inner dims {}x{} * {}x{}", a.rows, a.cols, b.rows, b.cols);
    let mut c = Tensor::zeros(a.rows, b.cols);
    gemm_into(a.rows, a.cols, b.cols, a, a.cols as isize, 1, b, b.cols as isize, 1, &mut c);
    c
}

/// C = A^T * B without materializing the transpose.
pub fn matmul_at<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.rows, b.rows, "matmul_at inner dims");
    let mut c = Tensor::zeros(a.cols, b.cols);
    gemm_into(a.cols, a.rows, b.cols, a, 1, a.cols as isize, b, b.cols as isize, 1, &mut c);
    c
}

/// C = A * B^T without materializing the transpose.
pub fn matmul_bt<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.cols, b.cols, "matmul_bt inner dims");
    let mut c = Tensor::zeros(a.rows, b.rows);
    gemm_into(a.rows, a.cols, b.rows, a, a.cols as isize, 1, b, 1, b.cols as isize, &mut c);
    c
}

#[allow(clippy::too_many_arguments)]
fn gemm_into<F: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &Tensor<F>,
    rsa: isize,
    csa: isize,
    b: &Tensor<F>,
    rsb: isize,
    csb: isize,
    c: &mut Tensor<F>,
) {
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        F::gemm(
            m,
            k,
            n,
            F::ONE,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            F::ZERO,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

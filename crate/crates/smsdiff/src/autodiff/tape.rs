//! The autodiff tape: an arena of topologically ordered op records.
//!
//! Building an op computes its forward value immediately and records the
//! pullback inputs; `backward` walks the arena once in reverse, accumulating
//! gradients additively into shared inputs.

use std::sync::Arc;

use rustfft::num_complex::Complex;

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

/// Saved per-step state for the fused GRU op (gate values and the hidden
/// trajectory), enough to run backpropagation through time.
#[derive(Debug)]
pub(crate) struct GruSaved<F> {
    /// (T+1) x H; row 0 is the zero initial state.
    pub h_all: Tensor<F>,
    pub r: Tensor<F>,
    pub z: Tensor<F>,
    pub n: Tensor<F>,
    /// Hidden-side candidate preactivation (before the reset gate).
    pub s: Tensor<F>,
}

#[derive(Debug)]
pub(crate) enum Op<F> {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, F),
    AddConst(VarId, F),
    AddRowVec(VarId, VarId),
    MulConstElem(VarId, Arc<Tensor<F>>),
    /// x minus a fixed tensor; the constant is consumed at build time.
    SubConstElem(VarId),
    Matmul(VarId, VarId),
    Relu(VarId),
    Sigmoid(VarId),
    Tanh(VarId),
    Exp(VarId),
    Abs(VarId),
    PowConst(VarId, F),
    LogEps(VarId, F),
    SumAll(VarId),
    MeanAll(VarId),
    SumRows(VarId),
    NormalizeRows(VarId),
    ConcatCols(Vec<VarId>),
    SliceCols(VarId, usize, usize),
    Reshape(VarId),
    LayerNorm {
        x: VarId,
        gamma: VarId,
        beta: VarId,
        inv_sd: Vec<F>,
        xhat: Tensor<F>,
    },
    InstanceNormCols {
        x: VarId,
        inv_sd: Vec<F>,
        xhat: Tensor<F>,
    },
    Gru {
        x: VarId,
        w_ih: VarId,
        w_hh: VarId,
        b_ih: VarId,
        b_hh: VarId,
        saved: GruSaved<F>,
    },
    FrameWindow {
        x: VarId,
        fft: usize,
        window: Arc<Vec<F>>,
        map: Arc<Vec<u32>>,
    },
    FftRealMag {
        x: VarId,
        /// Row-major [frames x (fft/2+1)] complex spectra from the forward pass.
        spectra: Vec<Complex<F>>,
    },
    OverlapAdd {
        frames: VarId,
        hop: usize,
    },
    NoiseFilter {
        h: VarId,
        /// rFFT of the windowed noise frames, [frames x (fft/2+1)].
        spectra: Arc<Vec<Complex<F>>>,
        fft: usize,
    },
    UpsampleRows {
        x: VarId,
    },
    SmoothUpsample {
        x: VarId,
        hop: usize,
    },
    AddReverb {
        dry: VarId,
        ir: VarId,
        fft_len: usize,
        dry_spec: Vec<Complex<F>>,
        ir_spec: Vec<Complex<F>>,
    },
}

pub(crate) struct Node<F> {
    pub op: Op<F>,
    pub value: Tensor<F>,
    pub needs_grad: bool,
}

pub struct Tape<F> {
    pub(crate) nodes: Vec<Node<F>>,
    pub(crate) params: Vec<(String, VarId)>,
    /// Panic on non-finite forward values. Defaults to debug builds; the
    /// trainer turns it off and polices the loss itself.
    pub strict_finite: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: Vec::new(), strict_finite: cfg!(debug_assertions) }
    }

    pub(crate) fn push(&mut self, op: Op<F>, value: Tensor<F>, needs_grad: bool) -> VarId {
        if self.strict_finite {
            assert!(value.all_finite(), "non-finite value out of {:?}", op_name(&op));
        }
        let id = VarId(self.nodes.len());
        self.nodes.push(Node { op, value, needs_grad });
        id
    }

    /// Register a named trainable tensor.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<F>) -> VarId {
        let id = self.push(Op::Leaf, value, true);
        self.params.push((name.into(), id));
        id
    }

    /// A constant input: participates in forward values, receives no gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> VarId {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, id: VarId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: VarId) -> F {
        let t = self.value(id);
        debug_assert_eq!(t.shape(), (1, 1));
        t.data[0]
    }

    pub(crate) fn needs_grad(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub(crate) fn shape(&self, id: VarId) -> (usize, usize) {
        self.value(id).shape()
    }

    /// Reverse pass from a scalar loss. Returns one gradient per registered
    /// parameter, in registration order; parameters the loss never touched
    /// get zero gradients.
    pub fn backward(&self, loss: VarId) -> Result<Vec<(String, Tensor<F>)>> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::ONE));
        for i in (0..=loss.0).rev() {
            // Leaves keep their accumulated gradient for collection below.
            if !self.nodes[i].needs_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[i].take() else { continue };
            super::ops::backward_op(self, i, &upstream, &mut grads);
        }
        Ok(self
            .params
            .iter()
            .map(|(name, id)| {
                let g = grads[id.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.value(*id).rows, self.value(*id).cols));
                (name.clone(), g)
            })
            .collect())
    }
}

pub(crate) fn accumulate<F: Scalar>(grads: &mut [Option<Tensor<F>>], id: VarId, delta: Tensor<F>) {
    match &mut grads[id.0] {
        Some(g) => g.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn op_name<F>(op: &Op<F>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddConst(..) => "add_const",
        Op::AddRowVec(..) => "add_row_vec",
        Op::MulConstElem(..) => "mul_const_elem",
        Op::SubConstElem(..) => "sub_const_elem",
        Op::Matmul(..) => "matmul",
        Op::Relu(..) => "relu",
        Op::Sigmoid(..) => "sigmoid",
        Op::Tanh(..) => "tanh",
        Op::Exp(..) => "exp",
        Op::Abs(..) => "abs",
        Op::PowConst(..) => "pow_const",
        Op::LogEps(..) => "log_eps",
        Op::SumAll(..) => "sum_all",
        Op::MeanAll(..) => "mean_all",
        Op::SumRows(..) => "sum_rows",
        Op::NormalizeRows(..) => "normalize_rows",
        Op::ConcatCols(..) => "concat_cols",
        Op::SliceCols(..) => "slice_cols",
        Op::Reshape(..) => "reshape",
        Op::LayerNorm { .. } => "layer_norm",
        Op::InstanceNormCols { .. } => "instance_norm_cols",
        Op::Gru { .. } => "gru",
        Op::FrameWindow { .. } => "frame_window",
        Op::FftRealMag { .. } => "fft_real_mag",
        Op::OverlapAdd { .. } => "overlap_add",
        Op::NoiseFilter { .. } => "noise_filter",
        Op::UpsampleRows { .. } => "upsample_rows",
        Op::SmoothUpsample { .. } => "smooth_upsample",
        Op::AddReverb { .. } => "add_reverb",
    }
}

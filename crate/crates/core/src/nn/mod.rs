//! Forward/backward primitives.
//!
//! Each primitive exists twice: a pure function (`conv1d`, `batchnorm`, ...)
//! and a [`Layer`] that caches what its backward pass needs. Blocks and
//! models are compositions of layers; there is no general autodiff tape.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dropout;
pub mod gradcheck;
pub mod linear;
pub mod padding;
pub mod pool;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Prng, Tensor};

pub use activation::{activation, Activation, ActivationKind};
pub use batchnorm::{batchnorm, BatchNorm1d, BatchNormState, BN_EPSILON, BN_MOMENTUM};
pub use conv::{conv1d, conv1d_backward, Conv1d, ConvGeom, ConvParams};
pub use dropout::{dropout, Dropout};
pub use linear::{linear, Linear};
pub use padding::{pad1d, pad_amounts, same_padding, Pad, PaddingMode};
pub use pool::{adaptive_avgpool, maxpool1d, AdaptiveAvgPool, MaxPool1d};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
    /// Batch statistics without dropout. Batch norm folds the batch
    /// statistics of calibration batch `k` into its running averages with
    /// weight `1 / (k + 1)`, so `k = 0` overwrites them.
    Calibrate(usize),
}

/// Per-forward context: mode plus the generator consumed by dropout.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub mode: Mode,
    pub rng: Prng,
}

impl Ctx {
    pub fn train(rng: Prng) -> Self {
        Ctx {
            mode: Mode::Train,
            rng,
        }
    }

    pub fn eval() -> Self {
        Ctx {
            mode: Mode::Eval,
            rng: Prng::new(0),
        }
    }
}

/// A learnable tensor (or, with `trainable == false`, a persistent buffer
/// such as a batch-norm running statistic) with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(shape: Vec<usize>, value: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![T::zero(); value.len()];
        Param {
            shape,
            value,
            grad,
            trainable: true,
        }
    }

    pub fn filled(shape: Vec<usize>, fill: T) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![fill; n])
    }

    pub fn buffer(shape: Vec<usize>, value: Vec<T>) -> Self {
        Param {
            trainable: false,
            ..Self::new(shape, value)
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn accumulate(&mut self, g: &[T]) {
        debug_assert_eq!(g.len(), self.grad.len());
        for (a, &b) in self.grad.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            shape: self.shape.clone(),
            value: self.value.iter().map(|v| U::lit(v.as_f64())).collect(),
            grad: self.grad.iter().map(|v| U::lit(v.as_f64())).collect(),
            trainable: self.trainable,
        }
    }
}

/// Work done by the most recent forward pass, summed over the batch.
///
/// `macs` counts multiply-accumulates of convolutions and the linear head.
/// `elementwise` counts the remaining per-element work: two ops per
/// batch-norm output, one per activation output, one per pooled input,
/// one per bias add.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    pub macs: u64,
    pub elementwise: u64,
}

impl std::ops::AddAssign for OpCount {
    fn add_assign(&mut self, o: Self) {
        self.macs += o.macs;
        self.elementwise += o.elementwise;
    }
}

pub trait Layer<T: Scalar> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>>;

    /// Returns the gradient with respect to the layer input and accumulates
    /// parameter gradients. Fails if no forward pass has been recorded.
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    /// Parameters and buffers in a stable order, named relative to the layer.
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        Vec::new()
    }

    fn last_ops(&self) -> OpCount {
        OpCount::default()
    }
}

pub(crate) fn no_forward(layer: &str) -> crate::error::Error {
    crate::error::Error::State(format!("{layer}: backward called before forward"))
}

/// Rayon helper: runs `f` for every batch item over disjoint output chunks.
pub(crate) fn par_items<T: Send, F>(out: &mut [T], chunk: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    use rayon::prelude::*;
    if chunk == 0 {
        return;
    }
    out.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// `y += a * x`, the inner loop of every convolution.
#[inline]
pub(crate) fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight fixed accumulator lanes so the compiler can
/// vectorize while the summation order stays fixed.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

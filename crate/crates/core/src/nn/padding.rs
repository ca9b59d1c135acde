//! Same-length zero padding.

use serde::{Deserialize, Serialize};

use super::{no_forward, Ctx, Layer};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Where the `(k - 1) * d` zeros of a same-length convolution go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    /// Split evenly; an odd remainder goes on the left.
    #[default]
    Symmetric,
    /// Everything on the left, so no output sees a later input.
    Causal,
}

/// Per-side pad count that turns an `i`-long input into an `o`-long output:
/// `ceil(((o - 1) * s + (k - 1) * (d - 1) - i + k) / 2)`, clamped at zero.
pub fn same_padding(o: usize, i: usize, s: usize, k: usize, d: usize) -> usize {
    let num = (o as i64 - 1) * s as i64 + (k as i64 - 1) * (d as i64 - 1) - i as i64 + k as i64;
    if num < 0 {
        log::warn!("same_padding: negative pad for o={o} i={i} s={s} k={k} d={d}; clamped to 0");
        return 0;
    }
    ((num + 1) / 2) as usize
}

/// `(left, right)` pads for a stride-1 convolution with kernel `k` and
/// dilation `d` that keep the length unchanged.
pub fn pad_amounts(k: usize, d: usize, mode: PaddingMode) -> (usize, usize) {
    let total = (k - 1) * d;
    match mode {
        PaddingMode::Causal => (total, 0),
        PaddingMode::Symmetric => {
            // `same_padding` yields ceil(total / 2) per side; the surplus zero of
            // an odd total would only feed a trailing output that gets trimmed,
            // so the right side takes the floor instead.
            let left = same_padding(1, 1, 1, k, d);
            (left, total - left)
        }
    }
}

pub fn pad1d<T: Scalar>(x: &Tensor<T>, left: usize, right: usize) -> Tensor<T> {
    let s = x.shape();
    let out_shape = Shape::new(s.n, s.c, s.t + left + right);
    let mut out = Tensor::filled(out_shape, T::zero());
    for n in 0..s.n {
        for c in 0..s.c {
            out.row_mut(n, c)[left..left + s.t].copy_from_slice(x.row(n, c));
        }
    }
    out
}

fn unpad<T: Scalar>(g: &Tensor<T>, left: usize, right: usize) -> Tensor<T> {
    let s = g.shape();
    let t = s.t - left - right;
    let mut out = Tensor::filled(Shape::new(s.n, s.c, t), T::zero());
    for n in 0..s.n {
        for c in 0..s.c {
            out.row_mut(n, c).copy_from_slice(&g.row(n, c)[left..left + t]);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Pad {
    pub left: usize,
    pub right: usize,
    seen: bool,
}

impl Pad {
    pub fn new(left: usize, right: usize) -> Self {
        Pad {
            left,
            right,
            seen: false,
        }
    }

    pub fn same(k: usize, d: usize, mode: PaddingMode) -> Self {
        let (l, r) = pad_amounts(k, d, mode);
        Self::new(l, r)
    }
}

impl<T: Scalar> Layer<T> for Pad {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        self.seen = true;
        Ok(pad1d(x, self.left, self.right))
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        if !self.seen {
            return Err(no_forward("pad"));
        }
        Ok(unpad(g, self.left, self.right))
    }
}

use super::{no_forward, Ctx, Layer, OpCount, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// `y = x W + b` per batch item, with `W` stored row-major as `(in, out)`.
/// Each item of `x` is flattened over `(c, t)`; the output is `(n, out, 1)`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &[T], b: &[T]) -> Result<Tensor<T>> {
    let xs = x.shape();
    let fan_in = xs.c * xs.t;
    let out = b.len();
    if out == 0 || w.len() != fan_in * out {
        return Err(Error::ShapeMismatch(format!(
            "linear map with {} weights and {out} outputs cannot take {fan_in} inputs",
            w.len()
        )));
    }
    let mut y = Tensor::filled(Shape::new(xs.n, out, 1), T::zero());
    for n in 0..xs.n {
        let yi = y.item_mut(n);
        yi.copy_from_slice(b);
        for (i, &xv) in x.item(n).iter().enumerate() {
            super::axpy(yi, xv, &w[i * out..(i + 1) * out]);
        }
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub fan_in: usize,
    pub fan_out: usize,
    /// `(in, out)`
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
    ops: OpCount,
}

impl<T: Scalar> Linear<T> {
    pub fn new(fan_in: usize, fan_out: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != fan_in * fan_out || bias.len() != fan_out {
            return Err(Error::ShapeMismatch(format!(
                "linear {fan_in}->{fan_out} given {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Linear {
            fan_in,
            fan_out,
            weight: Param::new(vec![fan_in, fan_out], weight),
            bias: Param::new(vec![fan_out], bias),
            cache: None,
            ops: OpCount::default(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        let y = linear(x, &self.weight.value, &self.bias.value)?;
        let n = x.shape().n as u64;
        self.ops = OpCount {
            macs: n * (self.fan_in * self.fan_out) as u64,
            elementwise: n * self.fan_out as u64,
        };
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| no_forward("linear"))?;
        let n = x.shape().n;
        if g.shape() != Shape::new(n, self.fan_out, 1) {
            return Err(Error::ShapeMismatch(format!(
                "linear gradient {} for {n} items of {} outputs",
                g.shape(),
                self.fan_out
            )));
        }
        let out = self.fan_out;
        let mut dx = Tensor::filled(x.shape(), T::zero());
        for item in 0..n {
            let gi = g.item(item);
            let xi = x.item(item);
            for (i, d) in dx.item_mut(item).iter_mut().enumerate() {
                let wrow = &self.weight.value[i * out..(i + 1) * out];
                *d = super::dot(wrow, gi);
                super::axpy(&mut self.weight.grad[i * out..(i + 1) * out], xi[i], gi);
            }
            for (b, &gv) in self.bias.grad.iter_mut().zip(gi) {
                *b += gv;
            }
        }
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![("weight".to_string(), &mut self.weight), ("bias".to_string(), &mut self.bias)]
    }

    fn last_ops(&self) -> OpCount {
        self.ops
    }
}

use super::{no_forward, Ctx, Layer, OpCount};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn pooled_len(t: usize, k: usize, s: usize) -> Result<usize> {
    if k == 0 || s == 0 {
        return Err(Error::Config("max-pool kernel and stride must be positive".into()));
    }
    if t < k {
        return Err(Error::Length(format!("max-pool window {k} longer than input {t}")));
    }
    Ok((t - k) / s + 1)
}

/// Returns the pooled tensor and, per output, the flat input index chosen.
fn maxpool_impl<T: Scalar>(x: &Tensor<T>, k: usize, s: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let xs = x.shape();
    let t_out = pooled_len(xs.t, k, s)?;
    let out_shape = Shape::new(xs.n, xs.c, t_out);
    let mut out = Tensor::filled(out_shape, T::zero());
    let mut arg = Vec::with_capacity(out_shape.numel());
    for n in 0..xs.n {
        for c in 0..xs.c {
            let base = (n * xs.c + c) * xs.t;
            let row = x.row(n, c);
            let orow = out.row_mut(n, c);
            for (j, o) in orow.iter_mut().enumerate() {
                let start = j * s;
                let mut best = start;
                for i in start + 1..start + k {
                    // strict comparison keeps the first maximum on ties
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                *o = row[best];
                arg.push(base + best);
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool1d<T: Scalar>(x: &Tensor<T>, k: usize, s: usize) -> Result<Tensor<T>> {
    Ok(maxpool_impl(x, k, s)?.0)
}

pub fn adaptive_avgpool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.t == 0 {
        return Err(Error::EmptySequence("adaptive average pool over zero-length input".into()));
    }
    let inv = T::one() / T::count(xs.t);
    let mut out = Tensor::filled(Shape::new(xs.n, xs.c, 1), T::zero());
    for n in 0..xs.n {
        for c in 0..xs.c {
            out.set(n, c, 0, x.row(n, c).iter().copied().sum::<T>() * inv);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MaxPool1d {
    pub kernel: usize,
    pub stride: usize,
    cache: Option<(Shape, Vec<usize>)>,
    ops: OpCount,
}

impl MaxPool1d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        MaxPool1d {
            kernel,
            stride,
            cache: None,
            ops: OpCount::default(),
        }
    }

    /// The `r = 1/2` downsampler.
    pub fn halve() -> Self {
        Self::new(2, 2)
    }
}

impl<T: Scalar> Layer<T> for MaxPool1d {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        let (y, arg) = maxpool_impl(x, self.kernel, self.stride)?;
        self.cache = Some((x.shape(), arg));
        self.ops = OpCount {
            macs: 0,
            elementwise: x.len() as u64,
        };
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, arg) = self.cache.as_ref().ok_or_else(|| no_forward("maxpool"))?;
        if g.len() != arg.len() {
            return Err(Error::ShapeMismatch(format!(
                "max-pool gradient of {} elements for {} outputs",
                g.len(),
                arg.len()
            )));
        }
        let mut dx = Tensor::filled(*shape, T::zero());
        let d = dx.data_mut();
        for (&i, &gv) in arg.iter().zip(g.data()) {
            d[i] += gv;
        }
        Ok(dx)
    }

    fn last_ops(&self) -> OpCount {
        self.ops
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdaptiveAvgPool {
    cache: Option<Shape>,
    ops: OpCount,
}

impl AdaptiveAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for AdaptiveAvgPool {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        let y = adaptive_avgpool(x)?;
        self.cache = Some(x.shape());
        self.ops = OpCount {
            macs: 0,
            elementwise: x.len() as u64,
        };
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.cache.ok_or_else(|| no_forward("adaptive_avgpool"))?;
        if g.shape() != Shape::new(shape.n, shape.c, 1) {
            return Err(Error::ShapeMismatch(format!(
                "average-pool gradient {} for input {shape}",
                g.shape()
            )));
        }
        let inv = T::one() / T::count(shape.t);
        let mut dx = Tensor::filled(shape, T::zero());
        for n in 0..shape.n {
            for c in 0..shape.c {
                let v = g.at(n, c, 0) * inv;
                dx.row_mut(n, c).iter_mut().for_each(|d| *d = v);
            }
        }
        Ok(dx)
    }

    fn last_ops(&self) -> OpCount {
        self.ops
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(Shape::new(1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn maxpool_values() {
        assert_eq!(maxpool1d(&row(&[1.0, 3.0, 2.0, 4.0]), 2, 2).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(maxpool1d(&row(&[2.0; 6]), 2, 2).unwrap().data(), &[2.0; 3]);
        assert_eq!(maxpool1d(&row(&[0.0; 4]), 2, 2).unwrap().shape().t, 2);
        assert!(matches!(maxpool1d(&row(&[1.0]), 2, 2), Err(Error::Length(_))));
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let mut p = MaxPool1d::halve();
        let mut ctx = Ctx::eval();
        p.forward(&row(&[5.0, 5.0, 1.0, 1.0]), &mut ctx).unwrap();
        let dx = p.backward(&row(&[1.0, 2.0])).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn avgpool_values() {
        assert_eq!(adaptive_avgpool(&row(&[2.0, 4.0, 6.0])).unwrap().data(), &[4.0]);
        let one = row(&[7.5]);
        assert_eq!(adaptive_avgpool(&one).unwrap(), one);
        let x = Tensor::<f32>::zeros(Shape::new(3, 5, 9)).unwrap();
        assert_eq!(adaptive_avgpool(&x).unwrap().shape(), Shape::new(3, 5, 1));
        let empty = Tensor::<f32>::zeros(Shape::new(1, 1, 0)).unwrap();
        assert!(matches!(adaptive_avgpool(&empty), Err(Error::EmptySequence(_))));
    }
}

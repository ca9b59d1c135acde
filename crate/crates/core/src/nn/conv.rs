//! Generalized 1-D convolution: standard, dilated, strided, grouped,
//! depthwise and pointwise are all the same kernel with different geometry.
//!
//! The kernel is a cross-correlation over the already padded input:
//! `y[o, j] = sum_{i, m} w[o, i, m] * x[g(o) * cin_g + i, j * s + m * d]`.
//! In the causal form `F(s) = sum_i f(i) * x[s - d * i]` the tap `f(i)`
//! is stored at weight index `k - 1 - i`.

use rayon::prelude::*;

use super::{axpy, dot, no_forward, par_items, Ctx, Layer, OpCount, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, c_out: usize, k: usize) -> Self {
        ConvGeom {
            c_in,
            c_out,
            k,
            stride: 1,
            dilation: 1,
            groups: 1,
        }
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn pointwise(c_in: usize, c_out: usize) -> Self {
        Self::new(c_in, c_out, 1)
    }

    pub fn depthwise(c: usize, k: usize, d: usize) -> Self {
        Self::new(c, c, k).dilation(d).groups(c)
    }

    pub fn validate(&self) -> Result<()> {
        let ConvGeom {
            c_in,
            c_out,
            k,
            stride,
            dilation,
            groups,
        } = *self;
        if c_in == 0 || c_out == 0 || k == 0 || stride == 0 || dilation == 0 || groups == 0 {
            return Err(Error::Config(format!("convolution geometry has a zero entry: {self:?}")));
        }
        if c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::Config(format!(
                "channels ({c_in} in, {c_out} out) not divisible by group {groups}"
            )));
        }
        Ok(())
    }

    pub fn cin_per_group(&self) -> usize {
        self.c_in / self.groups
    }

    pub fn cout_per_group(&self) -> usize {
        self.c_out / self.groups
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        [self.c_out, self.cin_per_group(), self.k]
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.cin_per_group() * self.k
    }

    /// Temporal extent covered by one output: `(k - 1) * d + 1`.
    pub fn span(&self) -> usize {
        (self.k - 1) * self.dilation + 1
    }

    pub fn out_len(&self, t: usize) -> Result<usize> {
        if t < self.span() {
            return Err(Error::Length(format!(
                "convolution with k={} d={} needs at least {} samples, got {t}",
                self.k,
                self.dilation,
                self.span()
            )));
        }
        Ok((t - self.span()) / self.stride + 1)
    }

    /// Multiply-accumulates for one batch item producing `t_out` outputs.
    pub fn macs(&self, t_out: usize) -> u64 {
        (self.weight_len() * t_out) as u64
    }
}

/// Weights plus geometry, in the `(c_out, c_in / group, k)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl<T: Scalar> ConvParams<T> {
    pub fn geom(&self) -> ConvGeom {
        let s = self.weight.shape();
        ConvGeom {
            c_in: s.c * self.groups,
            c_out: s.n,
            k: s.t,
            stride: self.stride,
            dilation: self.dilation,
            groups: self.groups,
        }
    }
}

pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dweight: Vec<T>,
    pub dbias: Option<Vec<T>>,
}

pub fn conv1d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let (y, _) = forward_raw(x, &p.geom(), p.weight.data(), p.bias.as_deref())?;
    Ok(y)
}

pub fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    backward_raw(x, &p.geom(), p.weight.data(), p.bias.is_some(), grad_out)
}

fn check_input<T: Scalar>(x: &Tensor<T>, g: &ConvGeom) -> Result<usize> {
    g.validate()?;
    if x.shape().c != g.c_in {
        return Err(Error::Config(format!(
            "convolution expects {} input channels, got {}",
            g.c_in,
            x.shape().c
        )));
    }
    g.out_len(x.shape().t)
}

/// Returns the output and the number of multiply-accumulates executed.
pub(crate) fn forward_raw<T: Scalar>(
    x: &Tensor<T>,
    g: &ConvGeom,
    w: &[T],
    bias: Option<&[T]>,
) -> Result<(Tensor<T>, u64)> {
    let t_out = check_input(x, g)?;
    debug_assert_eq!(w.len(), g.weight_len());
    let n = x.shape().n;
    let mut out = Tensor::filled(Shape::new(n, g.c_out, t_out), T::zero());
    let (cig, cog, k, s, d) = (g.cin_per_group(), g.cout_per_group(), g.k, g.stride, g.dilation);
    let x_t = x.shape().t;
    let macs_per_item = std::sync::atomic::AtomicU64::new(0);

    par_items(out.data_mut(), g.c_out * t_out, |item, y| {
        let xi = x.item(item);
        let mut count = 0u64;
        for oc in 0..g.c_out {
            let grp = oc / cog;
            let yrow = &mut y[oc * t_out..(oc + 1) * t_out];
            if let Some(b) = bias {
                yrow.iter_mut().for_each(|v| *v = b[oc]);
            }
            for il in 0..cig {
                let ic = grp * cig + il;
                let xrow = &xi[ic * x_t..(ic + 1) * x_t];
                let wrow = &w[(oc * cig + il) * k..(oc * cig + il + 1) * k];
                for (m, &wv) in wrow.iter().enumerate() {
                    let off = m * d;
                    if s == 1 {
                        axpy(yrow, wv, &xrow[off..off + t_out]);
                    } else {
                        for (j, yv) in yrow.iter_mut().enumerate() {
                            *yv += wv * xrow[j * s + off];
                        }
                    }
                    count += t_out as u64;
                }
            }
        }
        macs_per_item.fetch_add(count, std::sync::atomic::Ordering::Relaxed);
    });
    Ok((out, macs_per_item.into_inner()))
}

pub(crate) fn backward_raw<T: Scalar>(
    x: &Tensor<T>,
    g: &ConvGeom,
    w: &[T],
    has_bias: bool,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let t_out = check_input(x, g)?;
    let xs = x.shape();
    let gs = grad_out.shape();
    if gs != Shape::new(xs.n, g.c_out, t_out) {
        return Err(Error::ShapeMismatch(format!(
            "convolution gradient has shape {gs}, expected {}",
            Shape::new(xs.n, g.c_out, t_out)
        )));
    }
    let (cig, cog, k, s, d) = (g.cin_per_group(), g.cout_per_group(), g.k, g.stride, g.dilation);
    let x_t = xs.t;
    let wlen = g.weight_len();

    // Per-item weight gradients are reduced in item order afterwards, so the
    // result does not depend on how rayon schedules the items.
    let per_item: Vec<(Vec<T>, Vec<T>)> = (0..xs.n)
        .into_par_iter()
        .map(|item| {
            let xi = x.item(item);
            let gi = grad_out.item(item);
            let mut dx = vec![T::zero(); xs.c * x_t];
            let mut dw = vec![T::zero(); wlen];
            for oc in 0..g.c_out {
                let grp = oc / cog;
                let grow = &gi[oc * t_out..(oc + 1) * t_out];
                for il in 0..cig {
                    let ic = grp * cig + il;
                    let xrow = &xi[ic * x_t..(ic + 1) * x_t];
                    let dxrow = &mut dx[ic * x_t..(ic + 1) * x_t];
                    let widx = (oc * cig + il) * k;
                    for m in 0..k {
                        let off = m * d;
                        let wv = w[widx + m];
                        if s == 1 {
                            axpy(&mut dxrow[off..off + t_out], wv, grow);
                            dw[widx + m] += dot(grow, &xrow[off..off + t_out]);
                        } else {
                            let mut acc = T::zero();
                            for (j, &gv) in grow.iter().enumerate() {
                                dxrow[j * s + off] += wv * gv;
                                acc += gv * xrow[j * s + off];
                            }
                            dw[widx + m] += acc;
                        }
                    }
                }
            }
            (dx, dw)
        })
        .collect();

    let mut dx = Vec::with_capacity(xs.numel());
    let mut dweight = vec![T::zero(); wlen];
    for (dxi, dwi) in per_item {
        dx.extend_from_slice(&dxi);
        for (a, b) in dweight.iter_mut().zip(dwi) {
            *a += b;
        }
    }
    let dbias = has_bias.then(|| {
        let mut db = vec![T::zero(); g.c_out];
        for item in 0..xs.n {
            for (oc, dbv) in db.iter_mut().enumerate() {
                *dbv += grad_out.row(item, oc).iter().copied().sum::<T>();
            }
        }
        db
    });
    Ok(ConvGrads {
        dx: Tensor::from_vec(xs, dx)?,
        dweight,
        dbias,
    })
}

/// Convolution layer; `weight` has shape `(c_out, c_in / groups, k)`.
#[derive(Debug, Clone)]
pub struct Conv1d<T> {
    pub geom: ConvGeom,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<Tensor<T>>,
    ops: OpCount,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(geom: ConvGeom, weight: Vec<T>, bias: Option<Vec<T>>) -> Result<Self> {
        geom.validate()?;
        if weight.len() != geom.weight_len() {
            return Err(Error::ShapeMismatch(format!(
                "weight of {} elements for geometry {:?}",
                weight.len(),
                geom
            )));
        }
        if let Some(b) = &bias {
            if b.len() != geom.c_out {
                return Err(Error::ShapeMismatch(format!(
                    "bias of {} elements for {} output channels",
                    b.len(),
                    geom.c_out
                )));
            }
        }
        Ok(Conv1d {
            geom,
            weight: Param::new(geom.weight_shape().to_vec(), weight),
            bias: bias.map(|b| Param::new(vec![geom.c_out], b)),
            cache: None,
            ops: OpCount::default(),
        })
    }

    pub fn params(&self) -> ConvParams<T> {
        let [o, i, k] = self.geom.weight_shape();
        ConvParams {
            weight: Tensor::from_vec(Shape::new(o, i, k), self.weight.value.clone())
                .expect("weight length checked at construction"),
            bias: self.bias.as_ref().map(|b| b.value.clone()),
            stride: self.geom.stride,
            dilation: self.geom.dilation,
            groups: self.geom.groups,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }
}

impl<T: Scalar> Layer<T> for Conv1d<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        let bias = self.bias.as_ref().map(|b| b.value.as_slice());
        let (y, macs) = forward_raw(x, &self.geom, &self.weight.value, bias)?;
        self.ops = OpCount {
            macs,
            elementwise: if bias.is_some() { y.len() as u64 } else { 0 },
        };
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| no_forward("conv1d"))?;
        let grads = backward_raw(x, &self.geom, &self.weight.value, self.bias.is_some(), grad_out)?;
        self.weight.accumulate(&grads.dweight);
        if let (Some(b), Some(db)) = (self.bias.as_mut(), grads.dbias.as_ref()) {
            b.accumulate(db);
        }
        Ok(grads.dx)
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v = vec![("weight".to_string(), &mut self.weight)];
        if let Some(b) = self.bias.as_mut() {
            v.push(("bias".to_string(), b));
        }
        v
    }

    fn last_ops(&self) -> OpCount {
        self.ops
    }
}

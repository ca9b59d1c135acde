//! Dense `(batch, channel, length)` tensors and the seeded generator that
//! drives every random draw in the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Extent of a rank-3 tensor. `t` may be zero; `n` and `c` may not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub t: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, t: usize) -> Self {
        Shape { n, c, t }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.t
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 {
            return Err(Error::InvalidShape(format!(
                "batch and channel counts must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.n, self.c, self.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Hadamard,
}

/// Row-major `(n, c, t)` tensor; the time axis is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, fill: T) -> Result<Self> {
        shape.check()?;
        Ok(Tensor {
            shape,
            data: vec![fill; shape.numel()],
        })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::new(shape, T::zero())
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.check()?;
        if data.len() != shape.numel() {
            return Err(Error::InvalidShape(format!(
                "{} elements supplied for shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for shapes already known to be valid.
    pub(crate) fn filled(shape: Shape, fill: T) -> Self {
        debug_assert!(shape.n > 0 && shape.c > 0);
        Tensor {
            shape,
            data: vec![fill; shape.numel()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, t: usize) -> T {
        self.data[(n * self.shape.c + c) * self.shape.t + t]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, t: usize, v: T) {
        let idx = (n * self.shape.c + c) * self.shape.t + t;
        self.data[idx] = v;
    }

    /// The time series of channel `c` in batch item `n`.
    #[inline]
    pub fn row(&self, n: usize, c: usize) -> &[T] {
        let t = self.shape.t;
        let start = (n * self.shape.c + c) * t;
        &self.data[start..start + t]
    }

    #[inline]
    pub fn row_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let t = self.shape.t;
        let start = (n * self.shape.c + c) * t;
        &mut self.data[start..start + t]
    }

    /// All channels of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let stride = self.shape.c * self.shape.t;
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let stride = self.shape.c * self.shape.t;
        &mut self.data[n * stride..(n + 1) * stride]
    }

    /// Gathers the listed batch items into a new tensor.
    pub fn select_items(&self, indices: &[usize]) -> Result<Self> {
        let shape = Shape::new(indices.len(), self.shape.c, self.shape.t);
        let mut data = Vec::with_capacity(shape.numel());
        for &i in indices {
            if i >= self.shape.n {
                return Err(Error::ShapeMismatch(format!(
                    "item {i} out of range for batch of {}",
                    self.shape.n
                )));
            }
            data.extend_from_slice(self.item(i));
        }
        Self::from_vec(shape, data)
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn elementwise(&self, other: &Self, kind: ElementwiseKind) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "elementwise operands {} and {}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| match kind {
                ElementwiseKind::Add => a + b,
                ElementwiseKind::Hadamard => a * b,
            })
            .collect();
        let out = Tensor {
            shape: self.shape,
            data,
        };
        out.debug_check_finite("elementwise");
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "add operands {} and {}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    #[inline]
    pub(crate) fn debug_check_finite(&self, _op: &str) {
        debug_assert!(self.is_finite(), "non-finite output from {_op}");
    }
}

/// Deterministic generator: ChaCha with 8 rounds, seeded from a `u64`.
///
/// The stream is fixed by the `rand_chacha` algorithm and is identical
/// across platforms for a given seed.
#[derive(Debug, Clone)]
pub struct Prng {
    inner: ChaCha8Rng,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derives an independent stream; advances `self` by one draw.
    pub fn fork(&mut self) -> Prng {
        Prng::new(self.inner.gen())
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform<T: Scalar>(&mut self, lo: T, hi: T) -> T {
        loop {
            let v = lo + (hi - lo) * T::unit(&mut self.inner);
            // rounding in `lo + span * u` can land exactly on `hi`
            if v < hi {
                return v;
            }
        }
    }

    pub fn unit_f64(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit_f64() < p
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.gen_range(0..=i);
            items.swap(i, j);
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }
}

pub fn tensor_new<T: Scalar>(shape: Shape, fill: T) -> Result<Tensor<T>> {
    Tensor::new(shape, fill)
}

pub fn rand_uniform<T: Scalar>(rng: &mut Prng, shape: Shape, lo: T, hi: T) -> Result<Tensor<T>> {
    if !(lo < hi) {
        return Err(Error::Range(format!("uniform range requires lo < hi, got [{lo}, {hi})")));
    }
    shape.check()?;
    let data = (0..shape.numel()).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_fills_constant() {
        let t = Tensor::new(Shape::new(1, 1, 4), 0.0f32).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::new(Shape::new(2, 3, 5), 1.5f32).unwrap();
        assert_eq!(t.len(), 30);
        assert!(t.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn zero_batch_is_rejected() {
        assert!(matches!(
            Tensor::new(Shape::new(0, 1, 4), 0.0f32),
            Err(Error::InvalidShape(_))
        ));
        assert!(Tensor::<f32>::zeros(Shape::new(1, 0, 4)).is_err());
        // an empty time axis is representable
        assert!(Tensor::<f32>::zeros(Shape::new(1, 1, 0)).is_ok());
    }

    #[test]
    fn elementwise_ops() {
        let s = Shape::new(1, 1, 2);
        let a = Tensor::from_vec(s, vec![1.0f32, 2.0]).unwrap();
        let b = Tensor::from_vec(s, vec![3.0f32, 4.0]).unwrap();
        assert_eq!(a.elementwise(&b, ElementwiseKind::Add).unwrap().data(), &[4.0, 6.0]);

        let a = Tensor::from_vec(s, vec![2.0f32, 3.0]).unwrap();
        let b = Tensor::from_vec(s, vec![4.0f32, 5.0]).unwrap();
        assert_eq!(
            a.elementwise(&b, ElementwiseKind::Hadamard).unwrap().data(),
            &[8.0, 15.0]
        );

        let ones = Tensor::new(s, 1.0f32).unwrap();
        assert_eq!(a.elementwise(&ones, ElementwiseKind::Hadamard).unwrap(), a);

        let c = Tensor::new(Shape::new(1, 1, 3), 1.0f32).unwrap();
        assert!(matches!(
            a.elementwise(&c, ElementwiseKind::Add),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn uniform_is_seeded() {
        let s = Shape::new(2, 3, 7);
        let a = rand_uniform(&mut Prng::new(42), s, 0.0f32, 1.0).unwrap();
        let b = rand_uniform(&mut Prng::new(42), s, 0.0f32, 1.0).unwrap();
        assert_eq!(a, b);
        let c = rand_uniform(&mut Prng::new(43), s, 0.0f32, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_mean() {
        let t = rand_uniform(&mut Prng::new(7), Shape::new(1, 1, 10_000), 0.0f64, 1.0).unwrap();
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
        assert!(t.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn empty_range_is_rejected() {
        let r = rand_uniform(&mut Prng::new(1), Shape::new(1, 1, 3), 1.0f32, 1.0);
        assert!(matches!(r, Err(Error::Range(_))));
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut v: Vec<usize> = (0..50).collect();
        Prng::new(3).shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}

//! Parameter initialization.

use crate::scalar::Scalar;
use crate::tensor::Prng;

/// Glorot/Xavier uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `len` draws from `U(-b, b)` with `b = xavier_bound(fan_in, fan_out)`.
pub fn xavier_uniform<T: Scalar>(fan_in: usize, fan_out: usize, len: usize, rng: &mut Prng) -> Vec<T> {
    let b = xavier_bound(fan_in, fan_out);
    (0..len).map(|_| T::lit(rng.uniform(-b, b))).collect()
}

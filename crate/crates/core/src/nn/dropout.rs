use super::{no_forward, Ctx, Layer, Mode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Prng, Tensor};

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Range(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)`.
/// Returns the output and the per-element multiplier that produced it.
fn dropout_impl<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut Prng,
    mode: Mode,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    check_rate(rate)?;
    if mode != Mode::Train || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.bernoulli(rate) { T::zero() } else { keep })
        .collect();
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((y, Some(mask)))
}

pub fn dropout<T: Scalar>(x: &Tensor<T>, rate: f64, rng: &mut Prng, mode: Mode) -> Result<Tensor<T>> {
    Ok(dropout_impl(x, rate, rng, mode)?.0)
}

#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub rate: f64,
    // Some(None) records an identity pass.
    cache: Option<Option<Vec<T>>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Dropout { rate, cache: None })
    }
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let (y, mask) = dropout_impl(x, self.rate, &mut ctx.rng, ctx.mode)?;
        self.cache = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        match self.cache.as_ref().ok_or_else(|| no_forward("dropout"))? {
            None => Ok(g.clone()),
            Some(mask) => {
                if mask.len() != g.len() {
                    return Err(Error::ShapeMismatch("dropout gradient size".into()));
                }
                let mut dx = g.clone();
                for (v, &m) in dx.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                Ok(dx)
            }
        }
    }
}

//! Per-channel batch normalization over the `(n, t)` axes.

use super::{no_forward, Ctx, Layer, Mode, OpCount, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the new batch statistic in the running average.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub epsilon: T,
    pub mode: Mode,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize, mode: Mode) -> Self {
        BatchNormState {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::lit(BN_MOMENTUM),
            epsilon: T::lit(BN_EPSILON),
            mode,
        }
    }
}

struct Stats<T> {
    mean: Vec<T>,
    var: Vec<T>,
}

fn batch_stats<T: Scalar>(x: &Tensor<T>) -> Result<Stats<T>> {
    let s = x.shape();
    let m = s.n * s.t;
    if m < 2 {
        return Err(Error::DegenerateBatch(format!(
            "batch norm in train mode needs at least two values per channel, got n*t = {m}"
        )));
    }
    let inv_m = T::one() / T::count(m);
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mut acc = T::zero();
        for n in 0..s.n {
            acc += x.row(n, c).iter().copied().sum::<T>();
        }
        let mu = acc * inv_m;
        let mut sq = T::zero();
        for n in 0..s.n {
            sq += x.row(n, c).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
        }
        mean[c] = mu;
        var[c] = sq * inv_m;
    }
    Ok(Stats { mean, var })
}

fn check_channels<T: Scalar>(x: &Tensor<T>, c: usize) -> Result<()> {
    if x.shape().c != c {
        return Err(Error::Config(format!(
            "batch norm has {c} channels, input has {}",
            x.shape().c
        )));
    }
    Ok(())
}

/// Normalizes `x`; in train mode also folds the batch statistics into the
/// running averages (the running variance uses the unbiased estimate).
pub fn batchnorm<T: Scalar>(x: &Tensor<T>, st: &mut BatchNormState<T>) -> Result<Tensor<T>> {
    check_channels(x, st.gamma.len())?;
    let (mean, inv_std) = match st.mode {
        Mode::Train | Mode::Calibrate(_) => {
            let stats = batch_stats(x)?;
            let mo = match st.mode {
                Mode::Calibrate(k) => T::one() / T::count(k + 1),
                _ => st.momentum,
            };
            update_running(st, &stats, x.shape().n * x.shape().t, mo);
            let inv = stats.var.iter().map(|&v| T::one() / (v + st.epsilon).sqrt()).collect();
            (stats.mean, inv)
        }
        Mode::Eval => (
            st.running_mean.clone(),
            st.running_var.iter().map(|&v| T::one() / (v + st.epsilon).sqrt()).collect::<Vec<_>>(),
        ),
    };
    Ok(normalize(x, &mean, &inv_std, &st.gamma, &st.beta).0)
}

fn update_running<T: Scalar>(st: &mut BatchNormState<T>, stats: &Stats<T>, m: usize, mo: T) {
    let unbias = T::count(m) / T::count(m - 1);
    for c in 0..st.gamma.len() {
        st.running_mean[c] = (T::one() - mo) * st.running_mean[c] + mo * stats.mean[c];
        st.running_var[c] = (T::one() - mo) * st.running_var[c] + mo * stats.var[c] * unbias;
    }
}

/// Returns `(y, x_hat)`.
fn normalize<T: Scalar>(
    x: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Tensor<T>, Tensor<T>) {
    let s = x.shape();
    let mut xhat = x.clone();
    let mut y = x.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let (mu, is, ga, be) = (mean[c], inv_std[c], gamma[c], beta[c]);
            let xr = x.row(n, c);
            for (h, &v) in xhat.row_mut(n, c).iter_mut().zip(xr) {
                *h = (v - mu) * is;
            }
            for (o, &v) in y.row_mut(n, c).iter_mut().zip(xr) {
                *o = ga * ((v - mu) * is) + be;
            }
        }
    }
    (y, xhat)
}

#[derive(Debug, Clone)]
struct Cache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNorm1d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: T,
    pub epsilon: T,
    cache: Option<Cache<T>>,
    ops: OpCount,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(channels: usize) -> Self {
        let st = BatchNormState::<T>::new(channels, Mode::Train);
        BatchNorm1d {
            gamma: Param::new(vec![channels], st.gamma),
            beta: Param::new(vec![channels], st.beta),
            running_mean: Param::buffer(vec![channels], st.running_mean),
            running_var: Param::buffer(vec![channels], st.running_var),
            momentum: st.momentum,
            epsilon: st.epsilon,
            cache: None,
            ops: OpCount::default(),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Trainable parameters (gamma and beta).
    pub fn param_count(&self) -> usize {
        2 * self.channels()
    }
}

impl<T: Scalar> Layer<T> for BatchNorm1d<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        check_channels(x, self.channels())?;
        let (mean, inv_std) = match ctx.mode {
            Mode::Train | Mode::Calibrate(_) => {
                let stats = batch_stats(x)?;
                let m = x.shape().n * x.shape().t;
                let mo = match ctx.mode {
                    Mode::Calibrate(k) => T::one() / T::count(k + 1),
                    _ => self.momentum,
                };
                let unbias = T::count(m) / T::count(m - 1);
                for c in 0..self.channels() {
                    let rm = &mut self.running_mean.value[c];
                    *rm = (T::one() - mo) * *rm + mo * stats.mean[c];
                    let rv = &mut self.running_var.value[c];
                    *rv = (T::one() - mo) * *rv + mo * stats.var[c] * unbias;
                }
                let inv = stats.var.iter().map(|&v| T::one() / (v + self.epsilon).sqrt()).collect();
                (stats.mean, inv)
            }
            Mode::Eval => (
                self.running_mean.value.clone(),
                self.running_var
                    .value
                    .iter()
                    .map(|&v| T::one() / (v + self.epsilon).sqrt())
                    .collect::<Vec<_>>(),
            ),
        };
        let (y, xhat) = normalize(x, &mean, &inv_std, &self.gamma.value, &self.beta.value);
        self.ops = OpCount {
            macs: 0,
            elementwise: 2 * y.len() as u64,
        };
        self.cache = Some(Cache {
            xhat,
            inv_std,
            mode: ctx.mode,
        });
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| no_forward("batchnorm"))?;
        let Cache {
            xhat,
            inv_std,
            mode,
        } = cache;
        if g.shape() != xhat.shape() {
            return Err(Error::ShapeMismatch(format!(
                "batch norm gradient {} vs activation {}",
                g.shape(),
                xhat.shape()
            )));
        }
        let s = g.shape();
        let m = T::count(s.n * s.t);
        let mut dx = g.clone();
        for c in 0..s.c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for n in 0..s.n {
                sum_g += g.row(n, c).iter().copied().sum::<T>();
                sum_gx += super::dot(g.row(n, c), xhat.row(n, c));
            }
            self.gamma.grad[c] += sum_gx;
            self.beta.grad[c] += sum_g;
            let scale = self.gamma.value[c] * inv_std[c];
            for n in 0..s.n {
                let gr = g.row(n, c);
                let xr = xhat.row(n, c);
                let out = dx.row_mut(n, c);
                match mode {
                    Mode::Train | Mode::Calibrate(_) => {
                        let k = scale / m;
                        for ((o, &gv), &xv) in out.iter_mut().zip(gr).zip(xr) {
                            *o = k * (m * gv - sum_g - xv * sum_gx);
                        }
                    }
                    Mode::Eval => {
                        for (o, &gv) in out.iter_mut().zip(gr) {
                            *o = scale * gv;
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![
            ("gamma".to_string(), &mut self.gamma),
            ("beta".to_string(), &mut self.beta),
            ("running_mean".to_string(), &mut self.running_mean),
            ("running_var".to_string(), &mut self.running_var),
        ]
    }

    fn last_ops(&self) -> OpCount {
        self.ops
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rand_uniform, Prng, Shape};

    #[test]
    fn train_mode_normalizes() {
        let x = rand_uniform(&mut Prng::new(5), Shape::new(4, 3, 20), -3.0f64, 7.0).unwrap();
        let mut st = BatchNormState::new(3, Mode::Train);
        let y = batchnorm(&x, &mut st).unwrap();
        let stats = batch_stats(&y).unwrap();
        for c in 0..3 {
            assert!(stats.mean[c].abs() < 1e-4);
            assert!((stats.var[c] - 1.0).abs() < 1e-4);
        }
        // running stats moved towards the batch statistics
        assert!(st.running_mean.iter().all(|&m| m != 0.0));
    }

    #[test]
    fn eval_identity_statistics() {
        let x = rand_uniform(&mut Prng::new(6), Shape::new(2, 2, 5), -1.0f64, 1.0).unwrap();
        let mut st = BatchNormState::new(2, Mode::Eval);
        let y = batchnorm(&x, &mut st).unwrap();
        let scale = 1.0 / (1.0 + BN_EPSILON).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-12);
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn degenerate_affine() {
        let x = rand_uniform(&mut Prng::new(7), Shape::new(2, 2, 5), -1.0f32, 1.0).unwrap();
        let mut st = BatchNormState::new(2, Mode::Train);
        st.gamma = vec![0.0; 2];
        st.beta = vec![5.0; 2];
        assert!(batchnorm(&x, &mut st).unwrap().data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn single_value_batch_is_degenerate() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 1)).unwrap();
        let mut st = BatchNormState::new(2, Mode::Train);
        assert!(matches!(batchnorm(&x, &mut st), Err(Error::DegenerateBatch(_))));
        st.mode = Mode::Eval;
        assert!(batchnorm(&x, &mut st).is_ok());
    }

    #[test]
    fn layer_matches_function() {
        let x = rand_uniform(&mut Prng::new(8), Shape::new(3, 4, 6), -2.0f64, 2.0).unwrap();
        let mut st = BatchNormState::new(4, Mode::Train);
        let a = batchnorm(&x, &mut st).unwrap();
        let mut layer = BatchNorm1d::<f64>::new(4);
        let b = layer.forward(&x, &mut Ctx::train(Prng::new(0))).unwrap();
        assert_eq!(a, b);
        assert_eq!(layer.running_mean.value, st.running_mean);
        assert_eq!(layer.running_var.value, st.running_var);
    }

    #[test]
    fn calibration_averages_batch_statistics() {
        let a = rand_uniform(&mut Prng::new(9), Shape::new(3, 2, 7), -2.0f64, 2.0).unwrap();
        let b = rand_uniform(&mut Prng::new(10), Shape::new(3, 2, 7), 1.0f64, 5.0).unwrap();
        let mut layer = BatchNorm1d::<f64>::new(2);
        layer.running_mean.value = vec![40.0, -40.0];
        let ya = layer.forward(&a, &mut Ctx { mode: Mode::Calibrate(0), rng: Prng::new(0) }).unwrap();
        layer.forward(&b, &mut Ctx { mode: Mode::Calibrate(1), rng: Prng::new(0) }).unwrap();
        let (sa, sb) = (batch_stats(&a).unwrap(), batch_stats(&b).unwrap());
        let unbias = 21.0 / 20.0;
        for c in 0..2 {
            assert!((layer.running_mean.value[c] - (sa.mean[c] + sb.mean[c]) / 2.0).abs() < 1e-12);
            let v = (sa.var[c] + sb.var[c]) / 2.0 * unbias;
            assert!((layer.running_var.value[c] - v).abs() < 1e-12);
        }
        // outputs use the batch statistics, exactly as in training
        let mut fresh = BatchNorm1d::<f64>::new(2);
        assert_eq!(ya, fresh.forward(&a, &mut Ctx::train(Prng::new(0))).unwrap());
    }
}

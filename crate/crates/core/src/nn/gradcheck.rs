//! Central finite-difference verification of every backward pass.
//!
//! The probe loss is `L = sum(R * layer(x))` for a fixed random `R`, so the
//! analytic input gradient is `backward(R)`. Each input and parameter entry
//! is perturbed by `±h` (`h = 1e-4`) in `f64`. For subgradient ops (ReLU,
//! max-pool) a step of `h` can straddle a kink; entries that disagree are
//! re-probed with `h = 1e-6` and the closer estimate is kept.

use super::{
    Activation, ActivationKind, AdaptiveAvgPool, BatchNorm1d, Conv1d, ConvGeom, Ctx, Dropout, Layer,
    Linear, MaxPool1d, Mode, Pad,
};
use crate::error::Result;
use crate::tensor::{rand_uniform, Prng, Shape, Tensor};

pub const FD_STEP: f64 = 1e-4;
const FD_REFINE_STEP: f64 = 1e-6;
const REFINE_ABOVE: f64 = 1e-5;
const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Which entry produced the maximum, e.g. `input[17]` or `weight[3]`.
    pub worst: String,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

fn probe_loss(
    layer: &mut dyn Layer<f64>,
    x: &Tensor<f64>,
    r: &Tensor<f64>,
    mode: Mode,
    seed: u64,
) -> Result<f64> {
    let mut ctx = Ctx {
        mode,
        rng: Prng::new(seed),
    };
    let y = layer.forward(x, &mut ctx)?;
    Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

/// Checks input and trainable-parameter gradients of `layer` at `x`.
/// `ctx_seed` fixes the dropout stream so every probe sees the same mask.
pub fn check_layer(
    layer: &mut dyn Layer<f64>,
    x: &Tensor<f64>,
    mode: Mode,
    ctx_seed: u64,
) -> Result<GradcheckReport> {
    let mut ctx = Ctx {
        mode,
        rng: Prng::new(ctx_seed),
    };
    let y = layer.forward(x, &mut ctx)?;
    let r = rand_uniform(&mut Prng::new(ctx_seed ^ 0x5eed), y.shape(), -1.0, 1.0)?;
    for (_, p) in layer.params_mut() {
        p.zero_grad();
    }
    let dx = layer.backward(&r)?;

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |name: String, err: f64| {
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = err;
            report.worst = name;
        }
    };

    let mut xp = x.clone();
    for i in 0..x.len() {
        let analytic = dx.data()[i];
        let mut fd = |h: f64, layer: &mut dyn Layer<f64>| -> Result<f64> {
            let orig = xp.data()[i];
            xp.data_mut()[i] = orig + h;
            let lp = probe_loss(layer, &xp, &r, mode, ctx_seed)?;
            xp.data_mut()[i] = orig - h;
            let lm = probe_loss(layer, &xp, &r, mode, ctx_seed)?;
            xp.data_mut()[i] = orig;
            Ok((lp - lm) / (2.0 * h))
        };
        let mut err = relative_error(analytic, fd(FD_STEP, layer)?);
        if err > REFINE_ABOVE {
            err = err.min(relative_error(analytic, fd(FD_REFINE_STEP, layer)?));
        }
        record(format!("input[{i}]"), err);
    }

    let analytic: Vec<(String, bool, Vec<f64>)> = layer
        .params_mut()
        .into_iter()
        .map(|(n, p)| (n, p.trainable, p.grad.clone()))
        .collect();
    for (pi, (name, trainable, grads)) in analytic.into_iter().enumerate() {
        if !trainable {
            continue;
        }
        for (j, &a) in grads.iter().enumerate() {
            let fd = |h: f64, layer: &mut dyn Layer<f64>| -> Result<f64> {
                let orig = layer.params_mut()[pi].1.value[j];
                layer.params_mut()[pi].1.value[j] = orig + h;
                let lp = probe_loss(layer, x, &r, mode, ctx_seed)?;
                layer.params_mut()[pi].1.value[j] = orig - h;
                let lm = probe_loss(layer, x, &r, mode, ctx_seed)?;
                layer.params_mut()[pi].1.value[j] = orig;
                Ok((lp - lm) / (2.0 * h))
            };
            let mut err = relative_error(a, fd(FD_STEP, layer)?);
            if err > REFINE_ABOVE {
                err = err.min(relative_error(a, fd(FD_REFINE_STEP, layer)?));
            }
            record(format!("{name}[{j}]"), err);
        }
    }
    Ok(report)
}

/// A primitive op with a randomized configuration, for [`gradcheck`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpSpec {
    Conv {
        geom: ConvGeom,
        n: usize,
        t: usize,
        bias: bool,
    },
    BatchNorm {
        n: usize,
        c: usize,
        t: usize,
        mode: Mode,
    },
    Activation {
        kind: ActivationKind,
        shape: Shape,
    },
    MaxPool {
        k: usize,
        s: usize,
        shape: Shape,
    },
    AvgPool {
        shape: Shape,
    },
    Linear {
        fan_in: usize,
        fan_out: usize,
        n: usize,
    },
    Dropout {
        rate: f64,
        shape: Shape,
    },
    Pad {
        left: usize,
        right: usize,
        shape: Shape,
    },
}

/// Moves samples off the nondifferentiable points of `kind`.
pub fn avoid_kinks(x: &mut Tensor<f64>, kinks: &[f64], margin: f64) {
    for v in x.data_mut() {
        for &k in kinks {
            if (*v - k).abs() < margin {
                *v = k + if *v >= k { margin } else { -margin };
            }
        }
    }
}

/// Builds the op described by `spec` with random parameters drawn from
/// `seed`, and returns the worst relative gradient error.
pub fn gradcheck(spec: &OpSpec, seed: u64) -> Result<GradcheckReport> {
    let mut rng = Prng::new(seed);
    let uni = |shape: Shape, rng: &mut Prng| rand_uniform(rng, shape, -1.0f64, 1.0);
    match *spec {
        OpSpec::Conv { geom, n, t, bias } => {
            let w = uni(Shape::new(1, 1, geom.weight_len()), &mut rng)?.into_vec();
            let b = if bias {
                Some(uni(Shape::new(1, 1, geom.c_out), &mut rng)?.into_vec())
            } else {
                None
            };
            let mut layer = Conv1d::new(geom, w, b)?;
            let x = uni(Shape::new(n, geom.c_in, t), &mut rng)?;
            check_layer(&mut layer, &x, Mode::Train, seed)
        }
        OpSpec::BatchNorm { n, c, t, mode } => {
            let mut layer = BatchNorm1d::<f64>::new(c);
            for v in layer.gamma.value.iter_mut() {
                *v = rng.uniform(0.5, 1.5);
            }
            for v in layer.beta.value.iter_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
            for v in layer.running_mean.value.iter_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
            for v in layer.running_var.value.iter_mut() {
                *v = rng.uniform(0.5, 2.0);
            }
            let x = rand_uniform(&mut rng, Shape::new(n, c, t), -2.0, 2.0)?;
            check_layer(&mut layer, &x, mode, seed)
        }
        OpSpec::Activation { kind, shape } => {
            let mut layer = Activation::new(kind);
            let mut x = rand_uniform(&mut rng, shape, -8.0, 8.0)?;
            avoid_kinks(&mut x, kind.kinks(), 1e-2);
            check_layer(&mut layer, &x, Mode::Train, seed)
        }
        OpSpec::MaxPool { k, s, shape } => {
            let mut layer = MaxPool1d::new(k, s);
            let x = uni(shape, &mut rng)?;
            check_layer(&mut layer, &x, Mode::Train, seed)
        }
        OpSpec::AvgPool { shape } => {
            let mut layer = AdaptiveAvgPool::new();
            let x = uni(shape, &mut rng)?;
            check_layer(&mut layer, &x, Mode::Train, seed)
        }
        OpSpec::Linear { fan_in, fan_out, n } => {
            let w = uni(Shape::new(1, fan_in, fan_out), &mut rng)?.into_vec();
            let b = uni(Shape::new(1, 1, fan_out), &mut rng)?.into_vec();
            let mut layer = Linear::new(fan_in, fan_out, w, b)?;
            let x = uni(Shape::new(n, fan_in, 1), &mut rng)?;
            check_layer(&mut layer, &x, Mode::Train, seed)
        }
        OpSpec::Dropout { rate, shape } => {
            let mut layer = Dropout::new(rate)?;
            let x = uni(shape, &mut rng)?;
            check_layer(&mut layer, &x, Mode::Train, seed)
        }
        OpSpec::Pad { left, right, shape } => {
            let mut layer = Pad::new(left, right);
            let x = uni(shape, &mut rng)?;
            check_layer(&mut layer, &x, Mode::Train, seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouped_dilated_conv() {
        let spec = OpSpec::Conv {
            geom: ConvGeom::new(4, 6, 3).dilation(2).groups(2),
            n: 2,
            t: 11,
            bias: false,
        };
        let r = gradcheck(&spec, 1).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
        assert_eq!(r.checked, 2 * 4 * 11 + 6 * 2 * 3);
    }

    #[test]
    fn batchnorm_train() {
        let spec = OpSpec::BatchNorm {
            n: 3,
            c: 2,
            t: 5,
            mode: Mode::Train,
        };
        let r = gradcheck(&spec, 2).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn swish_is_tight() {
        let spec = OpSpec::Activation {
            kind: ActivationKind::Swish,
            shape: Shape::new(2, 3, 7),
        };
        let r = gradcheck(&spec, 3).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // a layer whose backward is off by a factor of two must be caught
        struct Broken;
        impl Layer<f64> for Broken {
            fn forward(&mut self, x: &Tensor<f64>, _: &mut Ctx) -> Result<Tensor<f64>> {
                Ok(x.map(|v| v * v))
            }
            fn backward(&mut self, g: &Tensor<f64>) -> Result<Tensor<f64>> {
                Ok(g.clone())
            }
        }
        let x = rand_uniform(&mut Prng::new(4), Shape::new(1, 1, 5), 0.5, 1.0).unwrap();
        let r = check_layer(&mut Broken, &x, Mode::Train, 0).unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}

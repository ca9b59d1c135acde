use serde::{Deserialize, Serialize};

use super::{no_forward, Ctx, Layer, OpCount};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Relu6,
    Swish,
    /// `x * softplus(x)`, the form printed alongside ReLU6 and Swish.
    MishPaper,
    /// `x * tanh(softplus(x))`.
    MishStandard,
    Sigmoid,
    Softplus,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 7] = [
        ActivationKind::Relu,
        ActivationKind::Relu6,
        ActivationKind::Swish,
        ActivationKind::MishPaper,
        ActivationKind::MishStandard,
        ActivationKind::Sigmoid,
        ActivationKind::Softplus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Relu6 => "relu6",
            ActivationKind::Swish => "swish",
            ActivationKind::MishPaper => "mish_paper",
            ActivationKind::MishStandard => "mish_standard",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Softplus => "softplus",
        }
    }

    /// True when `f(0) == 0`, i.e. a zeroed branch stays zero.
    pub fn zero_at_zero(self) -> bool {
        !matches!(self, ActivationKind::Sigmoid | ActivationKind::Softplus)
    }

    /// Nondifferentiable points (where the subgradient convention applies).
    pub fn kinks(self) -> &'static [f64] {
        match self {
            ActivationKind::Relu => &[0.0],
            ActivationKind::Relu6 => &[0.0, 6.0],
            _ => &[],
        }
    }

    pub fn apply<T: Scalar>(self, x: T) -> T {
        let zero = T::zero();
        match self {
            ActivationKind::Relu => {
                if x >= zero {
                    x
                } else {
                    zero
                }
            }
            ActivationKind::Relu6 => {
                let six = T::lit(6.0);
                if x > six {
                    six
                } else if x >= zero {
                    x
                } else {
                    zero
                }
            }
            ActivationKind::Swish => x * sigmoid(x),
            ActivationKind::MishPaper => x * softplus(x),
            ActivationKind::MishStandard => x * softplus(x).tanh(),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Softplus => softplus(x),
        }
    }

    /// Derivative; ReLU-family kinks take the value 0.
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        let (zero, one) = (T::zero(), T::one());
        match self {
            ActivationKind::Relu => {
                if x > zero {
                    one
                } else {
                    zero
                }
            }
            ActivationKind::Relu6 => {
                if x > zero && x < T::lit(6.0) {
                    one
                } else {
                    zero
                }
            }
            ActivationKind::Swish => {
                let s = sigmoid(x);
                s + x * s * (one - s)
            }
            ActivationKind::MishPaper => softplus(x) + x * sigmoid(x),
            ActivationKind::MishStandard => {
                let th = softplus(x).tanh();
                th + x * (one - th * th) * sigmoid(x)
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (one - s)
            }
            ActivationKind::Softplus => sigmoid(x),
        }
    }
}

impl ActivationKind {
    /// `(f(x), f'(x))` sharing one exponential where the forms allow it.
    #[inline]
    pub fn apply_with_derivative<T: Scalar>(self, x: T) -> (T, T) {
        let one = T::one();
        let smooth = |x: T| {
            let e = (-x.abs()).exp();
            let sp = x.max(T::zero()) + e.ln_1p();
            let sg = if x >= T::zero() { one / (one + e) } else { e / (one + e) };
            (sp, sg)
        };
        match self {
            ActivationKind::Swish => {
                let (_, s) = smooth(x);
                (x * s, s + x * s * (one - s))
            }
            ActivationKind::MishPaper => {
                let (sp, s) = smooth(x);
                (x * sp, sp + x * s)
            }
            ActivationKind::MishStandard => {
                let (sp, s) = smooth(x);
                let th = sp.tanh();
                (x * th, th + x * (one - th * th) * s)
            }
            ActivationKind::Sigmoid => {
                let (_, s) = smooth(x);
                (s, s * (one - s))
            }
            ActivationKind::Softplus => smooth(x),
            _ => (self.apply(x), self.derivative(x)),
        }
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let key = if key == "mish" { "mish_paper".to_string() } else { key };
        ActivationKind::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown activation `{s}`")))
    }
}

impl std::fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `|x|`.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: ActivationKind) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}

#[derive(Debug, Clone)]
pub struct Activation<T> {
    pub kind: ActivationKind,
    cache: Option<Tensor<T>>,
    ops: OpCount,
}

impl<T: Scalar> Activation<T> {
    pub fn new(kind: ActivationKind) -> Self {
        Activation {
            kind,
            cache: None,
            ops: OpCount::default(),
        }
    }
}

impl<T: Scalar> Layer<T> for Activation<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        self.ops = OpCount {
            macs: 0,
            elementwise: x.len() as u64,
        };
        let mut y = x.clone();
        let mut dy = x.clone();
        for (v, d) in y.data_mut().iter_mut().zip(dy.data_mut()) {
            (*v, *d) = self.kind.apply_with_derivative(*v);
        }
        self.cache = Some(dy);
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let deriv = self.cache.as_ref().ok_or_else(|| no_forward("activation"))?;
        if deriv.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!(
                "activation gradient {} vs input {}",
                g.shape(),
                deriv.shape()
            )));
        }
        let mut dx = g.clone();
        for (d, &v) in dx.data_mut().iter_mut().zip(deriv.data()) {
            *d *= v;
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

    #[test]
    fn relu6_pieces() {
        let r6 = ActivationKind::Relu6;
        assert_eq!(r6.apply(7.0f64), 6.0);
        assert_eq!(r6.apply(-1.0f64), 0.0);
        assert_eq!(r6.apply(3.0f64), 3.0);
    }

    #[test]
    fn swish_values() {
        assert_eq!(ActivationKind::Swish.apply(0.0f64), 0.0);
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((ActivationKind::Swish.apply(1.0f64) - expected).abs() < 1e-15);
        assert!((expected - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn mish_variants() {
        let x = 1.3f64;
        let sp = (1.0 + x.exp()).ln();
        assert!((ActivationKind::MishPaper.apply(x) - x * sp).abs() < 1e-14);
        assert!((ActivationKind::MishStandard.apply(x) - x * sp.tanh()).abs() < 1e-14);
    }

    #[test]
    fn stable_for_large_inputs() {
        for kind in ActivationKind::ALL {
            for x in [-800.0f32, -50.0, 50.0, 800.0] {
                assert!(kind.apply(x).is_finite(), "{kind} at {x}");
                assert!(kind.derivative(x).is_finite(), "{kind}' at {x}");
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("mish_paper".parse::<ActivationKind>().unwrap(), ActivationKind::MishPaper);
        assert_eq!("ReLU6".parse::<ActivationKind>().unwrap(), ActivationKind::Relu6);
        assert!("tanh".parse::<ActivationKind>().is_err());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for kind in ActivationKind::ALL {
            for &x in &[-2.7f64, -0.4, 0.3, 1.9, 5.2, 7.5] {
                let fd = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                assert!((fd - kind.derivative(x)).abs() < 1e-7, "{kind} at {x}");
            }
        }
    }

    #[test]
    fn fused_path_agrees() {
        for kind in ActivationKind::ALL {
            for &x in &[-30.0f64, -2.7, -0.4, 0.0, 0.3, 1.9, 5.2, 7.5, 30.0] {
                let (v, d) = kind.apply_with_derivative(x);
                assert!((v - kind.apply(x)).abs() < 1e-14, "{kind} at {x}");
                assert!((d - kind.derivative(x)).abs() < 1e-14, "{kind}' at {x}");
            }
        }
    }
}

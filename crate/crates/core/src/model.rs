//! A built network: blocks in order, then the head.

use serde::{Deserialize, Serialize};

use crate::blocks::{Block, BlockSpec, Head};
use crate::builder::{GtcnConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Layer, OpCount, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Atcn(ModelConfig),
    Gtcn(GtcnConfig),
}

impl Architecture {
    pub fn block_specs(&self) -> Vec<BlockSpec> {
        match self {
            Architecture::Atcn(c) => c.block_specs(),
            Architecture::Gtcn(g) => g.block_specs(),
        }
    }

    pub fn input_channels(&self) -> usize {
        match self {
            Architecture::Atcn(c) => c.input_channels,
            Architecture::Gtcn(g) => g.input_channels,
        }
    }

    pub fn output_size(&self) -> usize {
        match self {
            Architecture::Atcn(c) => c.output_size,
            Architecture::Gtcn(g) => g.output_size,
        }
    }

    /// `1 + sum (k - 1) * d` over every temporal convolution.
    pub fn receptive_field(&self) -> usize {
        1 + self.block_specs().iter().map(|s| s.rf_contribution()).sum::<usize>()
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub arch: Architecture,
    pub blocks: Vec<Block<T>>,
    pub head: Head<T>,
}

impl<T: Scalar> Model<T> {
    pub(crate) fn from_parts(arch: Architecture, blocks: Vec<Block<T>>, head: Head<T>) -> Self {
        Model { arch, blocks, head }
    }

    pub fn specs(&self) -> Vec<BlockSpec> {
        self.blocks.iter().map(|b| b.spec).collect()
    }

    /// Trainable parameter count.
    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.param_count()).sum::<usize>() + self.head.param_count()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Parameters and buffers keyed by a stable dotted name.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, stage) in &b.stages {
                stage_params(stage, &format!("blocks.{i}.{name}"), &mut out);
            }
            if let Some(crate::blocks::Skip::Project(c)) = &b.skip {
                out.push((format!("blocks.{i}.skip.weight"), &c.weight));
                if let Some(bias) = &c.bias {
                    out.push((format!("blocks.{i}.skip.bias"), bias));
                }
            }
        }
        out.push(("head.weight".into(), &self.head.linear.weight));
        out.push(("head.bias".into(), &self.head.linear.bias));
        out
    }

    /// Copies every parameter into a model of another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut m = crate::builder::build::<U>(&self.arch, &mut crate::tensor::Prng::new(0))
            .expect("architecture already built once");
        let src: Vec<Param<U>> = self.named_params().into_iter().map(|(_, p)| p.cast()).collect();
        for ((_, dst), s) in m.params_mut().into_iter().zip(src) {
            *dst = s;
        }
        m
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let c = self.arch.input_channels();
        if x.shape().c != c {
            return Err(Error::ShapeMismatch(format!(
                "model expects {c} input channels, got {}",
                x.shape().c
            )));
        }
        Ok(())
    }
}

fn stage_params<'a, T: Scalar>(
    stage: &'a crate::blocks::Stage<T>,
    prefix: &str,
    out: &mut Vec<(String, &'a Param<T>)>,
) {
    use crate::blocks::Stage;
    match stage {
        Stage::Conv(c) => {
            out.push((format!("{prefix}.weight"), &c.weight));
            if let Some(b) = &c.bias {
                out.push((format!("{prefix}.bias"), b));
            }
        }
        Stage::Norm(b) => {
            out.push((format!("{prefix}.gamma"), &b.gamma));
            out.push((format!("{prefix}.beta"), &b.beta));
            out.push((format!("{prefix}.running_mean"), &b.running_mean));
            out.push((format!("{prefix}.running_var"), &b.running_var));
        }
        _ => {}
    }
}

impl<T: Scalar> Layer<T> for Model<T> {
    /// `(n, c_in, t)` to `(n, output_size, 1)`.
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for b in self.blocks.iter_mut() {
            h = b.forward(&h, ctx)?;
        }
        self.head.forward(&h, ctx)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let mut d = self.head.backward(g)?;
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d)?;
        }
        Ok(d)
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (n, p) in b.params_mut() {
                v.push((format!("blocks.{i}.{n}"), p));
            }
        }
        for (n, p) in self.head.params_mut() {
            v.push((format!("head.{n}"), p));
        }
        v
    }

    fn last_ops(&self) -> OpCount {
        let mut ops = OpCount::default();
        for b in &self.blocks {
            ops += b.last_ops();
        }
        ops += self.head.last_ops();
        ops
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{build_atcn, build_gtcn, preset};
    use crate::tensor::Prng;

    #[test]
    fn names_agree_between_views() {
        let mut m = build_gtcn::<f32>(&GtcnConfig::new(2, 4, 3, 1, 2), &mut Prng::new(0)).unwrap();
        let a: Vec<String> = m.named_params().into_iter().map(|(n, _)| n).collect();
        let b: Vec<String> = m.params_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(a, b);
        assert!(a.contains(&"blocks.0.skip.weight".to_string()));
        let mut m = build_atcn::<f32>(&preset("mnist").unwrap(), &mut Prng::new(0)).unwrap();
        let a: Vec<String> = m.named_params().into_iter().map(|(n, _)| n).collect();
        let b: Vec<String> = m.params_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(a, b);
        assert_eq!(a[0], "blocks.0.conv.weight");
    }

    #[test]
    fn receptive_fields() {
        assert_eq!(Architecture::Atcn(preset("mnist").unwrap()).receptive_field(), 169);
        assert_eq!(Architecture::Atcn(preset("mosfet").unwrap()).receptive_field(), 35);
        assert_eq!(Architecture::Gtcn(GtcnConfig::new(1, 4, 1, 1, 1)).receptive_field(), 1);
    }

    #[test]
    fn cast_preserves_values() {
        let m = build_atcn::<f32>(&preset("mosfet").unwrap(), &mut Prng::new(3)).unwrap();
        let d: Model<f64> = m.cast();
        for ((na, a), (nb, b)) in m.named_params().into_iter().zip(d.named_params()) {
            assert_eq!(na, nb);
            assert!(a.value.iter().zip(&b.value).all(|(x, y)| *x as f64 == *y));
        }
    }
}

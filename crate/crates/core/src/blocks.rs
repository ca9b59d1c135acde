//! The ATCN blocks (RCB, LCB, STCB), the generic TCN residual layer, and
//! the pooling + linear head. Each block is an ordered list of named
//! primitive stages plus an optional skip path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::xavier_uniform;
use crate::nn::{
    Activation, ActivationKind, AdaptiveAvgPool, BatchNorm1d, Conv1d, ConvGeom, Ctx, Dropout, Layer,
    Linear, MaxPool1d, OpCount, Pad, PaddingMode, Param,
};
use crate::scalar::Scalar;
use crate::tensor::{Prng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Rcb,
    Lcb,
    Stcb,
    GtcnLayer,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Rcb => "RCB",
            BlockKind::Lcb => "LCB",
            BlockKind::Stcb => "STCB",
            BlockKind::GtcnLayer => "GTCN",
        }
    }
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub k: usize,
    pub d: usize,
    pub c_in: usize,
    pub c_out: usize,
    /// Output/input length ratio, 1 or 0.5.
    pub r: f64,
    /// Groups of the STCB middle convolution; ignored by other kinds.
    pub group: usize,
    /// Expansion factor of LCB/STCB.
    pub alpha: usize,
    pub activation: ActivationKind,
    pub dropout_rate: f64,
    pub padding_mode: PaddingMode,
}

impl BlockSpec {
    pub fn halves(&self) -> bool {
        self.r < 1.0
    }

    pub fn expanded(&self) -> usize {
        self.alpha * self.c_in
    }

    /// `(k - 1) * d` summed over the block's temporal convolutions.
    pub fn rf_contribution(&self) -> usize {
        let one = (self.k - 1) * self.d;
        match self.kind {
            BlockKind::GtcnLayer => 2 * one,
            _ => one,
        }
    }

    pub fn has_skip(&self) -> bool {
        match self.kind {
            BlockKind::Lcb => self.c_in == self.c_out && !self.halves(),
            BlockKind::GtcnLayer => true,
            _ => false,
        }
    }

    pub fn out_len(&self, t: usize) -> usize {
        if self.halves() {
            t / 2
        } else {
            t
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 || self.c_in == 0 || self.c_out == 0 {
            return Err(Error::Config(format!("{} has a zero size field", self.kind)));
        }
        if self.r != 1.0 && self.r != 0.5 {
            return Err(Error::Config(format!("ratio must be 1 or 1/2, got {}", self.r)));
        }
        if matches!(self.kind, BlockKind::Lcb | BlockKind::Stcb) && self.alpha == 0 {
            return Err(Error::Config("expansion factor must be at least 1".into()));
        }
        if self.kind == BlockKind::Stcb {
            let e = self.expanded();
            if self.group == 0 || e % self.group != 0 {
                return Err(Error::Config(format!(
                    "STCB group {} does not divide {e} expanded channels",
                    self.group
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Range(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

/// One primitive inside a block.
#[derive(Debug, Clone)]
pub enum Stage<T> {
    Pad(Pad),
    Conv(Conv1d<T>),
    Norm(BatchNorm1d<T>),
    Act(Activation<T>),
    Drop(Dropout<T>),
    Pool(MaxPool1d),
}

macro_rules! each_stage {
    ($s:expr, $l:ident => $e:expr) => {
        match $s {
            Stage::Pad($l) => $e,
            Stage::Conv($l) => $e,
            Stage::Norm($l) => $e,
            Stage::Act($l) => $e,
            Stage::Drop($l) => $e,
            Stage::Pool($l) => $e,
        }
    };
}

impl<T: Scalar> Layer<T> for Stage<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        each_stage!(self, l => l.forward(x, ctx))
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        each_stage!(self, l => l.backward(g))
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        each_stage!(self, l => l.params_mut())
    }

    fn last_ops(&self) -> OpCount {
        each_stage!(self, l => Layer::<T>::last_ops(l))
    }
}

/// Static cost of one stage for a single batch item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageCost {
    pub params: u64,
    pub macs: u64,
    pub elementwise: u64,
    pub c_out: usize,
    pub t_out: usize,
}

impl<T: Scalar> Stage<T> {
    /// Trainable parameter count.
    pub fn param_count(&self) -> usize {
        match self {
            Stage::Conv(c) => c.param_count(),
            Stage::Norm(b) => b.param_count(),
            _ => 0,
        }
    }

    pub fn cost(&self, c: usize, t: usize) -> Result<StageCost> {
        let same = |elementwise: u64| StageCost {
            params: 0,
            macs: 0,
            elementwise,
            c_out: c,
            t_out: t,
        };
        Ok(match self {
            Stage::Pad(p) => same(0).with_t(t + p.left + p.right),
            Stage::Conv(conv) => {
                let g = conv.geom;
                if g.c_in != c {
                    return Err(Error::Config(format!("conv expects {} channels, got {c}", g.c_in)));
                }
                let t_out = g.out_len(t)?;
                StageCost {
                    params: conv.param_count() as u64,
                    macs: g.macs(t_out),
                    elementwise: if conv.bias.is_some() { (g.c_out * t_out) as u64 } else { 0 },
                    c_out: g.c_out,
                    t_out,
                }
            }
            Stage::Norm(b) => StageCost {
                params: b.param_count() as u64,
                ..same(2 * (c * t) as u64)
            },
            Stage::Act(_) => same((c * t) as u64),
            Stage::Drop(_) => same(0),
            Stage::Pool(p) => {
                if t < p.kernel {
                    return Err(Error::Length(format!("max-pool window {} longer than {t}", p.kernel)));
                }
                same((c * t) as u64).with_t((t - p.kernel) / p.stride + 1)
            }
        })
    }
}

impl StageCost {
    fn with_t(mut self, t: usize) -> Self {
        self.t_out = t;
        self
    }
}

#[derive(Debug, Clone)]
pub enum Skip<T> {
    Identity,
    /// Pointwise convolution matching channel counts.
    Project(Conv1d<T>),
}

fn conv<T: Scalar>(geom: ConvGeom, bias: bool, rng: &mut Prng) -> Result<Stage<T>> {
    geom.validate()?;
    let fan_in = geom.cin_per_group() * geom.k;
    let fan_out = geom.c_out * geom.k;
    let w = xavier_uniform(fan_in, fan_out, geom.weight_len(), rng);
    let b = bias.then(|| vec![T::zero(); geom.c_out]);
    Ok(Stage::Conv(Conv1d::new(geom, w, b)?))
}

#[derive(Debug, Clone)]
pub struct Block<T> {
    pub spec: BlockSpec,
    pub stages: Vec<(&'static str, Stage<T>)>,
    pub skip: Option<Skip<T>>,
}

impl<T: Scalar> Block<T> {
    /// Builds a block with Xavier-uniform weights drawn from `rng`.
    pub fn new(spec: BlockSpec, rng: &mut Prng) -> Result<Self> {
        spec.validate()?;
        let BlockSpec {
            kind,
            k,
            d,
            c_in,
            c_out,
            ..
        } = spec;
        let pad = || Stage::Pad(Pad::same(k, d, spec.padding_mode));
        let bn = |c| Stage::Norm(BatchNorm1d::new(c));
        let act = || Stage::Act(Activation::new(spec.activation));
        let drop = Stage::Drop(Dropout::new(spec.dropout_rate)?);
        let mut stages: Vec<(&'static str, Stage<T>)> = Vec::new();
        let mut skip = None;
        match kind {
            BlockKind::Rcb => {
                stages.push(("pad", pad()));
                stages.push(("conv", conv(ConvGeom::new(c_in, c_out, k).dilation(d), false, rng)?));
                stages.push(("bn", bn(c_out)));
                stages.push(("act", act()));
                stages.push(("drop", drop));
            }
            BlockKind::Lcb | BlockKind::Stcb => {
                let e = spec.expanded();
                let (name, groups) = if kind == BlockKind::Lcb {
                    ("depthwise", e)
                } else {
                    ("group", spec.group)
                };
                stages.push(("pad", pad()));
                stages.push(("expand", conv(ConvGeom::pointwise(c_in, e), false, rng)?));
                stages.push(("expand_bn", bn(e)));
                stages.push(("expand_act", act()));
                stages.push((name, conv(ConvGeom::new(e, e, k).dilation(d).groups(groups), false, rng)?));
                stages.push((
                    if kind == BlockKind::Lcb { "depthwise_bn" } else { "group_bn" },
                    bn(e),
                ));
                stages.push((
                    if kind == BlockKind::Lcb { "depthwise_act" } else { "group_act" },
                    act(),
                ));
                stages.push(("project", conv(ConvGeom::pointwise(e, c_out), false, rng)?));
                stages.push(("project_bn", bn(c_out)));
                stages.push(("project_act", act()));
                stages.push(("drop", drop));
                if spec.has_skip() {
                    skip = Some(Skip::Identity);
                }
            }
            BlockKind::GtcnLayer => {
                stages.push(("pad1", pad()));
                stages.push(("conv1", conv(ConvGeom::new(c_in, c_out, k).dilation(d), true, rng)?));
                stages.push(("act1", act()));
                stages.push(("pad2", pad()));
                stages.push(("conv2", conv(ConvGeom::new(c_out, c_out, k).dilation(d), true, rng)?));
                stages.push(("act2", act()));
                stages.push(("drop", drop));
                skip = Some(if c_in == c_out {
                    Skip::Identity
                } else {
                    match conv(ConvGeom::pointwise(c_in, c_out), true, rng)? {
                        Stage::Conv(c) => Skip::Project(c),
                        _ => unreachable!(),
                    }
                });
            }
        }
        if spec.halves() {
            stages.push(("pool", Stage::Pool(MaxPool1d::halve())));
        }
        Ok(Block { spec, stages, skip })
    }

    pub fn param_count(&self) -> usize {
        let skip = match &self.skip {
            Some(Skip::Project(c)) => c.param_count(),
            _ => 0,
        };
        self.stages.iter().map(|(_, s)| s.param_count()).sum::<usize>() + skip
    }

    /// Per-stage static costs for one batch item entering with length `t`.
    pub fn stage_costs(&self, t: usize) -> Result<Vec<(&'static str, StageCost)>> {
        let mut c = self.spec.c_in;
        let mut t = t;
        let mut out = Vec::with_capacity(self.stages.len() + 1);
        for (name, s) in &self.stages {
            let sc = s.cost(c, t)?;
            c = sc.c_out;
            t = sc.t_out;
            out.push((*name, sc));
        }
        if let Some(Skip::Project(p)) = &self.skip {
            let sc = Stage::Conv(p.clone()).cost(self.spec.c_in, t)?;
            out.push(("skip", sc));
        }
        Ok(out)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().c != self.spec.c_in {
            return Err(Error::Config(format!(
                "{} expects {} input channels, got {}",
                self.spec.kind,
                self.spec.c_in,
                x.shape().c
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> Layer<T> for Block<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut y = x.clone();
        for (_, s) in self.stages.iter_mut() {
            y = s.forward(&y, ctx)?;
        }
        match &mut self.skip {
            None => {}
            Some(Skip::Identity) => y.add_assign(x)?,
            Some(Skip::Project(p)) => y.add_assign(&p.forward(x, ctx)?)?,
        }
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let mut dx = g.clone();
        for (_, s) in self.stages.iter_mut().rev() {
            dx = s.backward(&dx)?;
        }
        match &mut self.skip {
            None => {}
            Some(Skip::Identity) => dx.add_assign(g)?,
            Some(Skip::Project(p)) => dx.add_assign(&p.backward(g)?)?,
        }
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v = Vec::new();
        for (name, s) in self.stages.iter_mut() {
            for (pn, p) in s.params_mut() {
                v.push((format!("{name}.{pn}"), p));
            }
        }
        if let Some(Skip::Project(c)) = &mut self.skip {
            for (pn, p) in c.params_mut() {
                v.push((format!("skip.{pn}"), p));
            }
        }
        v
    }

    fn last_ops(&self) -> OpCount {
        let mut ops = OpCount::default();
        for (_, s) in &self.stages {
            ops += s.last_ops();
        }
        if let Some(Skip::Project(c)) = &self.skip {
            ops += Layer::<T>::last_ops(c);
        }
        ops
    }
}

/// Adaptive average pooling to one step, then a linear map to the outputs.
#[derive(Debug, Clone)]
pub struct Head<T> {
    pub pool: AdaptiveAvgPool,
    pub linear: Linear<T>,
}

impl<T: Scalar> Head<T> {
    pub fn new(c_in: usize, out: usize, rng: &mut Prng) -> Result<Self> {
        if c_in == 0 || out == 0 {
            return Err(Error::Config("head needs nonzero input and output sizes".into()));
        }
        let w = xavier_uniform(c_in, out, c_in * out, rng);
        Ok(Head {
            pool: AdaptiveAvgPool::new(),
            linear: Linear::new(c_in, out, w, vec![T::zero(); out])?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.linear.param_count()
    }
}

impl<T: Scalar> Layer<T> for Head<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        if x.shape().c != self.linear.fan_in {
            return Err(Error::Config(format!(
                "head expects {} channels, got {}",
                self.linear.fan_in,
                x.shape().c
            )));
        }
        let p = self.pool.forward(x, ctx)?;
        self.linear.forward(&p, ctx)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let dp = self.linear.backward(g)?;
        Layer::<T>::backward(&mut self.pool, &dp)
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        self.linear.params_mut()
    }

    fn last_ops(&self) -> OpCount {
        let mut ops = Layer::<T>::last_ops(&self.pool);
        ops += self.linear.last_ops();
        ops
    }
}

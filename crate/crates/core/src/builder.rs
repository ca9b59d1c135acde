//! Model configuration, validation, the three reference presets and the
//! builders that turn a configuration into a [`Model`].
//!
//! Block kinds follow from the ratio vector: the first block is always an
//! RCB (pooling iff `r < 1`); later blocks are STCBs when `r < 1` and LCBs
//! otherwise.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::blocks::{Block, BlockKind, BlockSpec, Head};
use crate::error::{Error, Result};
use crate::model::{Architecture, Model};
use crate::nn::{ActivationKind, PaddingMode};
use crate::scalar::Scalar;
use crate::tensor::Prng;

/// How the STCB middle convolution chooses its group count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GroupRule {
    /// Half the block's input channels.
    HalfCin,
    /// Half the expanded (`alpha * c_in`) channels.
    #[default]
    HalfExpanded,
    /// One entry per block; only STCB entries are used.
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Output channels of each block.
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub dilations: Vec<usize>,
    /// Each 1 or 0.5.
    pub ratios: Vec<f64>,
    pub input_channels: usize,
    pub output_size: usize,
    pub activation: ActivationKind,
    pub dropout_rate: f64,
    pub alpha: usize,
    #[serde(default)]
    pub group_rule: GroupRule,
    #[serde(default)]
    pub padding_mode: PaddingMode,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Validation {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(self.errors))
        }
    }
}

impl ModelConfig {
    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn block_kind(&self, l: usize) -> BlockKind {
        if l == 0 {
            BlockKind::Rcb
        } else if self.ratios[l] < 1.0 {
            BlockKind::Stcb
        } else {
            BlockKind::Lcb
        }
    }

    fn group_for(&self, l: usize, c_in: usize) -> usize {
        match &self.group_rule {
            GroupRule::HalfCin => (c_in / 2).max(1),
            GroupRule::HalfExpanded => (self.alpha * c_in / 2).max(1),
            GroupRule::Explicit(v) => v.get(l).copied().unwrap_or(0),
        }
    }

    /// Hard errors and advisory warnings. Never fails.
    pub fn validate(&self) -> Validation {
        let mut v = Validation::default();
        let l = self.channels.len();
        if l == 0 {
            v.errors.push("at least one block is required".into());
        }
        for (name, n) in [
            ("kernels", self.kernels.len()),
            ("dilations", self.dilations.len()),
            ("ratios", self.ratios.len()),
        ] {
            if n != l {
                v.errors.push(format!("{name} has {n} entries but channels has {l}"));
            }
        }
        if let GroupRule::Explicit(g) = &self.group_rule {
            if g.len() != l {
                v.errors.push(format!("explicit group vector has {} entries, expected {l}", g.len()));
            }
        }
        if self.input_channels == 0 {
            v.errors.push("input_channels must be positive".into());
        }
        if self.output_size == 0 {
            v.errors.push("output_size must be positive".into());
        }
        if self.alpha == 0 {
            v.errors.push("alpha must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            v.errors.push(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        for (i, &c) in self.channels.iter().enumerate() {
            if c == 0 {
                v.errors.push(format!("block {i}: channel count must be positive"));
            }
        }
        for (i, &k) in self.kernels.iter().enumerate() {
            if k == 0 {
                v.errors.push(format!("block {i}: kernel size must be positive"));
            }
        }
        for (i, &d) in self.dilations.iter().enumerate() {
            if d == 0 {
                v.errors.push(format!("block {i}: dilation must be positive"));
            }
        }
        for (i, &r) in self.ratios.iter().enumerate() {
            if r != 1.0 && r != 0.5 {
                v.errors.push(format!("block {i}: ratio {r} is not 1 or 1/2"));
            }
        }
        if !v.errors.is_empty() {
            return v;
        }
        for i in 0..l {
            if self.block_kind(i) == BlockKind::Stcb {
                let c_in = self.block_input_channels(i);
                let e = self.alpha * c_in;
                let g = self.group_for(i, c_in);
                if g == 0 || e % g != 0 {
                    v.errors.push(format!(
                        "block {i}: group {g} does not divide {e} expanded channels"
                    ));
                }
            }
        }
        for i in 1..l {
            if self.kernels[i] > self.kernels[i - 1] {
                v.warnings.push(format!(
                    "block {i}: kernel grows from {} to {}; later layers usually shrink it",
                    self.kernels[i - 1],
                    self.kernels[i]
                ));
            }
            if self.dilations[i] < self.dilations[i - 1] {
                v.warnings.push(format!(
                    "block {i}: dilation shrinks from {} to {}",
                    self.dilations[i - 1],
                    self.dilations[i]
                ));
            }
        }
        v
    }

    fn block_input_channels(&self, l: usize) -> usize {
        if l == 0 {
            self.input_channels
        } else {
            self.channels[l - 1]
        }
    }

    /// Block specs in order. Assumes the config validated.
    pub fn block_specs(&self) -> Vec<BlockSpec> {
        (0..self.depth())
            .map(|l| {
                let c_in = self.block_input_channels(l);
                BlockSpec {
                    kind: self.block_kind(l),
                    k: self.kernels[l],
                    d: self.dilations[l],
                    c_in,
                    c_out: self.channels[l],
                    r: self.ratios[l],
                    group: self.group_for(l, c_in),
                    alpha: self.alpha,
                    activation: self.activation,
                    dropout_rate: self.dropout_rate,
                    padding_mode: self.padding_mode,
                }
            })
            .collect()
    }

    /// Rebuilds a config from block specs and head size (inverse of
    /// [`ModelConfig::block_specs`] for group rule `Explicit`).
    pub fn from_specs(specs: &[BlockSpec], output_size: usize) -> Result<Self> {
        let first = specs
            .first()
            .ok_or_else(|| Error::Config("no blocks to extract".into()))?;
        Ok(ModelConfig {
            channels: specs.iter().map(|s| s.c_out).collect(),
            kernels: specs.iter().map(|s| s.k).collect(),
            dilations: specs.iter().map(|s| s.d).collect(),
            ratios: specs.iter().map(|s| s.r).collect(),
            input_channels: first.c_in,
            output_size,
            activation: first.activation,
            dropout_rate: first.dropout_rate,
            alpha: first.alpha,
            group_rule: GroupRule::Explicit(specs.iter().map(|s| s.group).collect()),
            padding_mode: first.padding_mode,
        })
    }

    /// Length entering the head for an input of length `t`.
    pub fn final_len(&self, t: usize) -> usize {
        self.ratios
            .iter()
            .fold(t, |t, &r| if r < 1.0 { t / 2 } else { t })
    }
}

/// Generic TCN: `levels` residual layers of two dilated convolutions each,
/// dilation `2^(l-1)` at level `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtcnConfig {
    pub levels: usize,
    pub hidden: usize,
    pub k: usize,
    pub input_channels: usize,
    pub output_size: usize,
    pub activation: ActivationKind,
    pub dropout_rate: f64,
    #[serde(default = "causal")]
    pub padding_mode: PaddingMode,
}

fn causal() -> PaddingMode {
    PaddingMode::Causal
}

impl GtcnConfig {
    pub fn new(levels: usize, hidden: usize, k: usize, input_channels: usize, output_size: usize) -> Self {
        GtcnConfig {
            levels,
            hidden,
            k,
            input_channels,
            output_size,
            activation: ActivationKind::Relu,
            dropout_rate: 0.0,
            padding_mode: PaddingMode::Causal,
        }
    }

    pub fn dilations(&self) -> Vec<usize> {
        (0..self.levels).map(|l| 1usize << l).collect()
    }

    pub fn block_specs(&self) -> Vec<BlockSpec> {
        self.dilations()
            .into_iter()
            .enumerate()
            .map(|(l, d)| BlockSpec {
                kind: BlockKind::GtcnLayer,
                k: self.k,
                d,
                c_in: if l == 0 { self.input_channels } else { self.hidden },
                c_out: self.hidden,
                r: 1.0,
                group: 1,
                alpha: 1,
                activation: self.activation,
                dropout_rate: self.dropout_rate,
                padding_mode: self.padding_mode,
            })
            .collect()
    }

    pub fn validate(&self) -> Validation {
        let mut v = Validation::default();
        if self.levels == 0 {
            v.errors.push("levels must be at least 1".into());
        }
        if self.hidden == 0 || self.k == 0 || self.input_channels == 0 || self.output_size == 0 {
            v.errors.push("hidden, k, input_channels and output_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            v.errors.push(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        v
    }
}

fn assemble<T: Scalar>(arch: Architecture, rng: &mut Prng) -> Result<Model<T>> {
    let (specs, c_last, out) = match &arch {
        Architecture::Atcn(c) => {
            c.validate().into_result()?;
            (c.block_specs(), *c.channels.last().unwrap_or(&0), c.output_size)
        }
        Architecture::Gtcn(g) => {
            g.validate().into_result()?;
            (g.block_specs(), g.hidden, g.output_size)
        }
    };
    let blocks = specs
        .into_iter()
        .map(|s| Block::new(s, rng))
        .collect::<Result<Vec<_>>>()?;
    let head = Head::new(c_last, out, rng)?;
    Ok(Model::from_parts(arch, blocks, head))
}

/// Builds an ATCN with Xavier-uniform weights drawn from `rng`.
pub fn build_atcn<T: Scalar>(config: &ModelConfig, rng: &mut Prng) -> Result<Model<T>> {
    assemble(Architecture::Atcn(config.clone()), rng)
}

pub fn build_gtcn<T: Scalar>(config: &GtcnConfig, rng: &mut Prng) -> Result<Model<T>> {
    assemble(Architecture::Gtcn(config.clone()), rng)
}

pub fn build<T: Scalar>(arch: &Architecture, rng: &mut Prng) -> Result<Model<T>> {
    assemble(arch.clone(), rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Mnist,
    Ecg,
    Mosfet,
}

impl PresetName {
    pub const ALL: [PresetName; 3] = [PresetName::Mnist, PresetName::Ecg, PresetName::Mosfet];

    pub fn name(self) -> &'static str {
        match self {
            PresetName::Mnist => "mnist",
            PresetName::Ecg => "ecg",
            PresetName::Mosfet => "mosfet",
        }
    }

    /// Input sequence length the preset was designed for.
    pub fn input_length(self) -> usize {
        match self {
            PresetName::Mnist => 784,
            PresetName::Ecg => 18_000,
            PresetName::Mosfet => 21,
        }
    }

    /// Published parameter and op counts the cost model is compared with.
    pub fn reference_costs(self) -> (f64, f64) {
        match self {
            PresetName::Mnist => (8.47e3, 3.98e6),
            PresetName::Ecg => (1.80e6, 14.70e9),
            PresetName::Mosfet => (7.67e3, 103.5e3),
        }
    }

    pub fn config(self) -> ModelConfig {
        match self {
            PresetName::Mnist => ModelConfig {
                channels: vec![8, 16, 16, 24, 24, 32, 32],
                kernels: vec![25, 13, 13, 7, 7, 5, 5],
                dilations: vec![1, 2, 2, 4, 4, 6, 6],
                ratios: vec![1.0, 1.0, 1.0, 0.5, 1.0, 0.5, 1.0],
                input_channels: 1,
                output_size: 10,
                activation: ActivationKind::Swish,
                dropout_rate: 0.2,
                alpha: 1,
                group_rule: GroupRule::HalfExpanded,
                padding_mode: PaddingMode::Symmetric,
            },
            PresetName::Ecg => ModelConfig {
                channels: vec![320, 256, 256, 256, 256, 128, 128, 128, 128, 128, 64, 64, 64],
                kernels: vec![24, 16, 16, 16, 16, 8, 8, 8, 8, 8, 8, 8, 8],
                dilations: vec![1, 2, 4, 4, 4, 4, 6, 6, 6, 6, 8, 8, 8],
                // the RCB pools here; only the MOSFET model switches it off
                ratios: vec![0.5, 1.0, 1.0, 1.0, 1.0, 0.5, 1.0, 1.0, 1.0, 1.0, 0.5, 1.0, 1.0],
                input_channels: 1,
                output_size: 3,
                activation: ActivationKind::Relu,
                dropout_rate: 0.3,
                alpha: 2,
                group_rule: GroupRule::HalfExpanded,
                padding_mode: PaddingMode::Symmetric,
            },
            PresetName::Mosfet => ModelConfig {
                channels: vec![8, 16, 16, 32],
                kernels: vec![11, 5, 5, 3],
                dilations: vec![1, 2, 2, 4],
                ratios: vec![1.0; 4],
                input_channels: 1,
                output_size: 104,
                activation: ActivationKind::Swish,
                dropout_rate: 0.2,
                alpha: 2,
                group_rule: GroupRule::HalfExpanded,
                padding_mode: PaddingMode::Symmetric,
            },
        }
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(PresetName::Mnist),
            "ecg" => Ok(PresetName::Ecg),
            "mosfet" => Ok(PresetName::Mosfet),
            _ => Err(Error::UnknownPreset(s.to_string())),
        }
    }
}

pub fn preset(name: &str) -> Result<ModelConfig> {
    Ok(name.parse::<PresetName>()?.config())
}

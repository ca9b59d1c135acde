//! Static cost model: parameters, multiply-accumulates and receptive field.
//!
//! `macs` counts only convolution and linear multiply-accumulates.
//! `elementwise` counts the remaining per-element work the way layer-wise
//! profilers do: two ops per batch-norm output, one per activation output,
//! one per pooled input element and one per bias add. `total_ops` is their
//! sum. Published "Ops" figures do not say which convention they use, so
//! [`compare_ops`] reports all three readings side by side.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::builder::{build, ModelConfig};
use crate::error::{Error, Result};
use crate::model::{Architecture, Model};
use crate::scalar::Scalar;
use crate::tensor::Prng;

pub const CONVENTION: &str = "macs = conv + linear multiply-accumulates; \
elementwise = 2/BN output + 1/activation output + 1/pooled input + 1/bias add; \
total_ops = macs + elementwise; BN running statistics are not parameters";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRow {
    pub name: String,
    pub kind: String,
    pub k: usize,
    pub d: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub params: u64,
    pub macs: u64,
    pub elementwise: u64,
    pub t_in: usize,
    pub t_out: usize,
    pub rf_contribution: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub params: u64,
    pub macs: u64,
    pub elementwise: u64,
    pub total_ops: u64,
    pub receptive_field: usize,
    /// Receptive field with later layers scaled by the downsampling that
    /// precedes them. Not part of the plain formula.
    pub effective_receptive_field: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub input_length: usize,
    pub convention: String,
    pub rows: Vec<LayerRow>,
    pub totals: Totals,
}

pub fn receptive_field(config: &ModelConfig) -> usize {
    1 + config
        .kernels
        .iter()
        .zip(&config.dilations)
        .map(|(&k, &d)| (k - 1) * d)
        .sum::<usize>()
}

/// Per-sample cost of `model` on an input of length `input_length`.
pub fn analyze<T: Scalar>(model: &Model<T>, input_length: usize) -> Result<CostReport> {
    if input_length == 0 {
        return Err(Error::Length("input length must be at least 1".into()));
    }
    let mut rows = Vec::new();
    let mut t = input_length;
    let mut stride = 1usize;
    let mut eff = 1usize;
    for (i, b) in model.blocks.iter().enumerate() {
        let s = b.spec;
        let costs = b.stage_costs(t)?;
        let t_out = costs
            .iter()
            .rev()
            .find(|(n, _)| *n != "skip")
            .map_or(t, |(_, c)| c.t_out);
        let mut row = LayerRow {
            name: format!("{}", i + 1),
            kind: s.kind.name().to_string(),
            k: s.k,
            d: s.d,
            c_in: s.c_in,
            c_out: s.c_out,
            params: 0,
            macs: 0,
            elementwise: 0,
            t_in: t,
            t_out,
            rf_contribution: s.rf_contribution(),
        };
        for (_, c) in &costs {
            row.params += c.params;
            row.macs += c.macs;
            row.elementwise += c.elementwise;
        }
        eff += s.rf_contribution() * stride;
        if s.halves() {
            stride *= 2;
        }
        t = t_out;
        rows.push(row);
    }
    if t == 0 {
        return Err(Error::Length(format!(
            "input of length {input_length} is pooled away before the head"
        )));
    }
    let lin = &model.head.linear;
    let c = lin.fan_in;
    rows.push(LayerRow {
        name: "head".into(),
        kind: "AvgPool+Linear".into(),
        k: 0,
        d: 0,
        c_in: c,
        c_out: lin.fan_out,
        params: lin.param_count() as u64,
        macs: (lin.fan_in * lin.fan_out) as u64,
        elementwise: (c * t + lin.fan_out) as u64,
        t_in: t,
        t_out: 1,
        rf_contribution: 0,
    });
    let params = rows.iter().map(|r| r.params).sum();
    let macs = rows.iter().map(|r| r.macs).sum();
    let elementwise = rows.iter().map(|r| r.elementwise).sum();
    let totals = Totals {
        params,
        macs,
        elementwise,
        total_ops: macs + elementwise,
        receptive_field: 1 + rows.iter().map(|r| r.rf_contribution).sum::<usize>(),
        effective_receptive_field: eff,
    };
    Ok(CostReport {
        input_length,
        convention: CONVENTION.to_string(),
        rows,
        totals,
    })
}

/// Builds the architecture (weights are irrelevant) and analyzes it.
pub fn analyze_arch(arch: &Architecture, input_length: usize) -> Result<CostReport> {
    let model: Model<f32> = build(arch, &mut Prng::new(0))?;
    analyze(&model, input_length)
}

impl CostReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:<15} {:>3} {:>3} {:>5} {:>5} {:>7} {:>7} {:>11} {:>15} {:>15} {:>4}",
            "layer", "kind", "k", "d", "c_in", "c_out", "t_in", "t_out", "params", "macs", "elementwise", "rf+"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6} {:<15} {:>3} {:>3} {:>5} {:>5} {:>7} {:>7} {:>11} {:>15} {:>15} {:>4}",
                r.name,
                r.kind,
                r.k,
                r.d,
                r.c_in,
                r.c_out,
                r.t_in,
                r.t_out,
                r.params,
                r.macs,
                r.elementwise,
                r.rf_contribution
            );
        }
        let t = &self.totals;
        let _ = writeln!(s, "input length        {}", self.input_length);
        let _ = writeln!(s, "parameters          {} ({:.2}K)", t.params, t.params as f64 / 1e3);
        let _ = writeln!(s, "macs                {} ({})", t.macs, human(t.macs as f64));
        let _ = writeln!(s, "elementwise ops     {} ({})", t.elementwise, human(t.elementwise as f64));
        let _ = writeln!(s, "total ops           {} ({})", t.total_ops, human(t.total_ops as f64));
        let _ = writeln!(s, "receptive field     {}", t.receptive_field);
        let _ = writeln!(s, "effective rf        {} (pooling-aware extension)", t.effective_receptive_field);
        let _ = writeln!(s, "convention: {}", self.convention);
        s
    }
}

fn human(v: f64) -> String {
    if v >= 1e9 {
        format!("{:.2}G", v / 1e9)
    } else if v >= 1e6 {
        format!("{:.2}M", v / 1e6)
    } else if v >= 1e3 {
        format!("{:.2}K", v / 1e3)
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpsReading {
    Macs,
    TwiceMacs,
    TotalOps,
}

impl OpsReading {
    pub fn name(self) -> &'static str {
        match self {
            OpsReading::Macs => "MACs",
            OpsReading::TwiceMacs => "2 x MACs",
            OpsReading::TotalOps => "MACs + elementwise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpsMatch {
    pub reading: OpsReading,
    pub value: u64,
    /// `value / reference`
    pub ratio: f64,
}

/// Each op-count reading against a published figure, best match first.
pub fn compare_ops(totals: &Totals, reference: f64) -> Vec<OpsMatch> {
    let mut v: Vec<OpsMatch> = [
        (OpsReading::Macs, totals.macs),
        (OpsReading::TwiceMacs, 2 * totals.macs),
        (OpsReading::TotalOps, totals.total_ops),
    ]
    .into_iter()
    .map(|(reading, value)| OpsMatch {
        reading,
        value,
        ratio: value as f64 / reference,
    })
    .collect();
    v.sort_by(|a, b| a.ratio.ln().abs().total_cmp(&b.ratio.ln().abs()));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaCandidate {
    pub alpha: usize,
    pub params: u64,
    pub macs: u64,
    pub total_ops: u64,
    pub params_ratio: f64,
    pub ops_ratio: f64,
    /// `|ln params_ratio| + |ln ops_ratio|`, lower is better.
    pub score: f64,
}

/// Evaluates every expansion factor in `alphas` against published
/// parameter and op counts; the op side uses the best-matching reading.
/// Returns the candidates in input order and the index of the best.
pub fn calibrate_alpha(
    config: &ModelConfig,
    input_length: usize,
    ref_params: f64,
    ref_ops: f64,
    alphas: &[usize],
) -> Result<(Vec<AlphaCandidate>, usize)> {
    let mut out = Vec::new();
    for &alpha in alphas {
        let mut c = config.clone();
        c.alpha = alpha;
        let rep = analyze_arch(&Architecture::Atcn(c), input_length)?;
        let params_ratio = rep.totals.params as f64 / ref_params;
        let ops_ratio = compare_ops(&rep.totals, ref_ops)[0].ratio;
        out.push(AlphaCandidate {
            alpha,
            params: rep.totals.params,
            macs: rep.totals.macs,
            total_ops: rep.totals.total_ops,
            params_ratio,
            ops_ratio,
            score: params_ratio.ln().abs() + ops_ratio.ln().abs(),
        });
    }
    let best = (0..out.len())
        .min_by(|&a, &b| out[a].score.total_cmp(&out[b].score))
        .ok_or_else(|| Error::Config("no alpha candidates".into()))?;
    Ok((out, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{preset, GtcnConfig};

    #[test]
    fn receptive_field_values() {
        assert_eq!(receptive_field(&preset("mnist").unwrap()), 169);
        assert_eq!(receptive_field(&preset("ecg").unwrap()), 598);
        let mut one = preset("mosfet").unwrap();
        one.kernels = vec![2];
        one.dilations = vec![1];
        one.channels = vec![4];
        one.ratios = vec![1.0];
        assert_eq!(receptive_field(&one), 2);
    }

    #[test]
    fn closed_form_counts() {
        let mut c = preset("mosfet").unwrap();
        c.channels = vec![8];
        c.kernels = vec![25];
        c.dilations = vec![1];
        c.ratios = vec![1.0];
        c.output_size = 10;
        let r = analyze_arch(&Architecture::Atcn(c), 784).unwrap();
        // conv 1 -> 8, k = 25 over 784 steps
        assert_eq!(r.rows[0].macs, 156_800);
        assert_eq!(r.rows[0].params, 8 * 25 + 16);
        assert_eq!(r.rows[1].params, 8 * 10 + 10);
    }

    #[test]
    fn totals_are_column_sums() {
        let r = analyze_arch(&Architecture::Atcn(preset("mnist").unwrap()), 784).unwrap();
        assert_eq!(r.totals.params, r.rows.iter().map(|x| x.params).sum::<u64>());
        assert_eq!(r.totals.macs, r.rows.iter().map(|x| x.macs).sum::<u64>());
        assert_eq!(r.rows[6].t_out, 196);
        assert_eq!(r.rows[3].kind, "STCB");
        // blocks after the first STCB see doubled steps, after the second quadrupled
        assert_eq!(r.totals.effective_receptive_field, 1 + 24 * 4 + 24 * 2 * 2 + 24 * 4);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<CostReport>(&json).unwrap(), r);
    }

    #[test]
    fn rf_ignores_channels() {
        let mut a = preset("mnist").unwrap();
        let base = receptive_field(&a);
        a.channels = vec![4, 4, 4, 4, 4, 4, 4];
        assert_eq!(receptive_field(&a), base);
    }

    #[test]
    fn gtcn_counts_both_convolutions() {
        let g = GtcnConfig::new(3, 4, 2, 1, 1);
        let r = analyze_arch(&Architecture::Gtcn(g), 32).unwrap();
        assert_eq!(r.totals.receptive_field, 1 + 2 * (1 + 2 + 4));
    }
}

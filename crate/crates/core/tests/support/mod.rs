//! Oracles and random case generators shared by the integration suites.
#![allow(dead_code)]

use atcn::blocks::{Block, BlockKind, BlockSpec};
use atcn::nn::gradcheck::{check_layer, gradcheck, OpSpec};
use atcn::nn::{ActivationKind, ConvGeom, Ctx, Layer, Mode, PaddingMode};
use atcn::tensor::rand_uniform;
use atcn::{build_atcn, build_gtcn, preset, GtcnConfig, Model64, ModelConfig, Prng, Shape, Tensor, Tensor64};

pub const OP_KINDS: usize = 8;

pub fn pick<T: Copy>(rng: &mut Prng, items: &[T]) -> T {
    items[rng.below(items.len())]
}

pub fn random_op(rng: &mut Prng, kind: usize) -> OpSpec {
    let shape = |rng: &mut Prng| Shape::new(1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(12));
    match kind {
        0 => {
            let g = pick(rng, &[1, 2, 4]);
            let c_in = g * (1 + rng.below(2));
            let c_out = g * (1 + rng.below(3));
            let k = 1 + rng.below(5);
            let d = 1 + rng.below(3);
            let s = 1 + rng.below(2);
            OpSpec::Conv {
                geom: ConvGeom::new(c_in, c_out, k).dilation(d).groups(g).stride(s),
                n: 1 + rng.below(3),
                t: (k - 1) * d + 1 + rng.below(8),
                bias: rng.bernoulli(0.5),
            }
        }
        1 => OpSpec::BatchNorm {
            n: 2 + rng.below(3),
            c: 1 + rng.below(4),
            t: 2 + rng.below(8),
            mode: if rng.bernoulli(0.5) { Mode::Train } else { Mode::Eval },
        },
        2 => OpSpec::Activation {
            kind: pick(rng, &ActivationKind::ALL),
            shape: shape(rng),
        },
        3 => {
            let k = 1 + rng.below(3);
            let mut s = shape(rng);
            s.t = k + rng.below(10);
            OpSpec::MaxPool {
                k,
                s: 1 + rng.below(2),
                shape: s,
            }
        }
        4 => OpSpec::AvgPool { shape: shape(rng) },
        5 => OpSpec::Linear {
            fan_in: 1 + rng.below(6),
            fan_out: 1 + rng.below(6),
            n: 1 + rng.below(3),
        },
        6 => OpSpec::Dropout {
            rate: pick(rng, &[0.0, 0.2, 0.5]),
            shape: shape(rng),
        },
        _ => OpSpec::Pad {
            left: rng.below(4),
            right: rng.below(4),
            shape: shape(rng),
        },
    }
}

pub fn random_block(rng: &mut Prng, kind: BlockKind) -> BlockSpec {
    let c_in = pick(rng, &[1, 2, 4]);
    let alpha = 1 + rng.below(2);
    let c_out = match kind {
        BlockKind::Lcb if rng.bernoulli(0.5) => c_in,
        _ => pick(rng, &[2, 4]),
    };
    let group = match kind {
        BlockKind::Stcb => {
            let e = alpha * c_in;
            let opts: Vec<usize> = (1..=e).filter(|g| e % g == 0).collect();
            pick(rng, &opts)
        }
        _ => 1,
    };
    let halves = kind != BlockKind::GtcnLayer && (kind == BlockKind::Stcb || rng.bernoulli(0.3));
    BlockSpec {
        kind,
        k: 1 + rng.below(4),
        d: 1 + rng.below(3),
        c_in,
        c_out,
        r: if halves { 0.5 } else { 1.0 },
        group,
        alpha,
        activation: pick(
            rng,
            &[ActivationKind::Swish, ActivationKind::MishPaper, ActivationKind::MishStandard, ActivationKind::Relu],
        ),
        dropout_rate: pick(rng, &[0.0, 0.2]),
        padding_mode: pick(rng, &[PaddingMode::Symmetric, PaddingMode::Causal]),
    }
}

/// Fresh shifts and biases are zero, so zero-padded or clamped positions land
/// exactly on the ReLU kink. Moving them off zero keeps every probe smooth.
pub fn jitter_shifts(layer: &mut dyn Layer<f64>, rng: &mut Prng) {
    for (name, p) in layer.params_mut() {
        if name.ends_with("beta") || name.ends_with("bias") {
            for v in p.value.iter_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
    }
}

/// Direct evaluation of
/// `y[n, o, j] = b[o] + sum_{i in group(o)} sum_m w[o, i, m] * x[n, i, j*s + m*d]`.
pub fn naive(x: &Tensor<f64>, w: &[f64], b: Option<&[f64]>, c_out: usize, k: usize, d: usize, g: usize, s: usize) -> Vec<f64> {
    let sh = x.shape();
    let cig = sh.c / g;
    let cog = c_out / g;
    let span = (k - 1) * d + 1;
    let t_out = (sh.t - span) / s + 1;
    let mut y = vec![0.0; sh.n * c_out * t_out];
    for n in 0..sh.n {
        for o in 0..c_out {
            let grp = o / cog;
            for j in 0..t_out {
                let mut acc = b.map_or(0.0, |b| b[o]);
                for il in 0..cig {
                    let i = grp * cig + il;
                    for m in 0..k {
                        acc += w[(o * cig + il) * k + m] * x.at(n, i, j * s + m * d);
                    }
                }
                y[(n * c_out + o) * t_out + j] = acc;
            }
        }
    }
    y
}

/// Runs every block before the first downsampling one.
pub fn pre_pool(m: &mut Model64, x: &Tensor64) -> Tensor64 {
    let mut h = x.clone();
    let mut ctx = Ctx::eval();
    for b in m.blocks.iter_mut() {
        if b.spec.halves() {
            break;
        }
        h = b.forward(&h, &mut ctx).unwrap();
    }
    h
}

pub fn random_causal(rng: &mut Prng) -> Model64 {
    if rng.bernoulli(0.25) {
        let mut g = GtcnConfig::new(1 + rng.below(3), 2 + rng.below(3), 1 + rng.below(3), 1 + rng.below(2), 2);
        g.padding_mode = PaddingMode::Causal;
        return build_gtcn(&g, rng).unwrap();
    }
    let depth = 1 + rng.below(4);
    let mut channels = Vec::new();
    for _ in 0..depth {
        channels.push([2, 4, 8][rng.below(3)]);
    }
    let cfg = ModelConfig {
        channels,
        kernels: (0..depth).map(|_| 2 + rng.below(5)).collect(),
        dilations: (0..depth).map(|_| 1 + rng.below(4)).collect(),
        ratios: vec![1.0; depth],
        input_channels: 1 + rng.below(2),
        output_size: 3,
        activation: [ActivationKind::Relu, ActivationKind::Swish, ActivationKind::MishPaper][rng.below(3)],
        dropout_rate: 0.2,
        alpha: 1 + rng.below(3),
        group_rule: Default::default(),
        padding_mode: PaddingMode::Causal,
    };
    build_atcn(&cfg, rng).unwrap()
}

pub const GRAD_TOL: f64 = 1e-3;
pub const BLOCK_KINDS: [BlockKind; 4] = [BlockKind::Rcb, BlockKind::Lcb, BlockKind::Stcb, BlockKind::GtcnLayer];

/// Case `i` of op family `kind` against central differences.
pub fn op_case(kind: usize, i: u64) -> Result<(), String> {
    let seed = 100 * kind as u64 + i;
    let spec = random_op(&mut Prng::new(seed), kind);
    let r = gradcheck(&spec, seed).map_err(|e| format!("seed {seed}: {e}"))?;
    if r.max_rel_error < GRAD_TOL {
        Ok(())
    } else {
        Err(format!("seed {seed} {spec:?}: {} at {}", r.max_rel_error, r.worst))
    }
}

/// Case `i` of block kind `BLOCK_KINDS[ki]` against central differences.
pub fn block_case(ki: usize, i: u64) -> Result<(), String> {
    let seed = 1000 * ki as u64 + i;
    let mut rng = Prng::new(seed);
    let spec = random_block(&mut rng, BLOCK_KINDS[ki]);
    let mut block = Block::<f64>::new(spec, &mut rng).map_err(|e| e.to_string())?;
    jitter_shifts(&mut block, &mut rng);
    let t = 4 + 2 * rng.below(5);
    let x = rand_uniform(&mut rng, Shape::new(2, spec.c_in, t), -1.0, 1.0).map_err(|e| e.to_string())?;
    let mode = if rng.bernoulli(0.7) { Mode::Train } else { Mode::Eval };
    let r = check_layer(&mut block, &x, mode, seed).map_err(|e| e.to_string())?;
    if r.max_rel_error < GRAD_TOL {
        Ok(())
    } else {
        Err(format!("seed {seed} {spec:?} {mode:?}: {} at {}", r.max_rel_error, r.worst))
    }
}

/// Perturbs inputs after a random position and requires every earlier
/// pre-pooling output to stay bit-identical. Cases 0..3 are the presets.
pub fn causal_case(case: u64) -> Result<(), String> {
    let mut rng = Prng::new(case);
    let mut m = if case < 3 {
        let mut cfg = preset(["mnist", "ecg", "mosfet"][case as usize]).map_err(|e| e.to_string())?;
        cfg.padding_mode = PaddingMode::Causal;
        build_atcn(&cfg, &mut rng).map_err(|e| e.to_string())?
    } else {
        random_causal(&mut rng)
    };
    let c = m.arch.input_channels();
    let len = 24 + rng.below(40);
    let x = rand_uniform(&mut rng, Shape::new(2, c, len), -1.0, 1.0).map_err(|e| e.to_string())?;
    let t = rng.below(len - 1);
    let mut xp = x.clone();
    for n in 0..2 {
        for ch in 0..c {
            for j in t + 1..len {
                xp.data_mut()[(n * c + ch) * len + j] += rng.uniform(-3.0, 3.0);
            }
        }
    }
    let a = pre_pool(&mut m, &x);
    let b = pre_pool(&mut m, &xp);
    let s = a.shape();
    if s.t != len {
        return Err(format!("case {case}: length {} != {len}", s.t));
    }
    let mut changed_later = false;
    for n in 0..s.n {
        for ch in 0..s.c {
            for j in 0..s.t {
                let same = a.at(n, ch, j) == b.at(n, ch, j);
                if j <= t && !same {
                    return Err(format!("case {case}: output {j} moved after perturbing inputs > {t}"));
                }
                changed_later |= j > t && !same;
            }
        }
    }
    if !changed_later {
        return Err(format!("case {case}: perturbation had no effect at all"));
    }
    Ok(())
}

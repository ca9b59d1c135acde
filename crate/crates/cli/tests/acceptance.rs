//! Runs every acceptance criterion and prints one PASS/FAIL line for each.
//! `ATCN_ACCEPT_ONLY=1,5,9` restricts the run to the listed criteria.
//! MNIST files are read from `ATCN_MNIST_DIR`, else `<workspace>/data/mnist`.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use atcn::analyzer::{analyze_arch, calibrate_alpha, compare_ops, receptive_field, OpsReading};
use atcn::data::{checkpoint_bytes, checkpoint_from_bytes, CheckpointMeta};
use atcn::nn::{conv1d, ConvParams, Ctx, Layer};
use atcn::tensor::rand_uniform;
use atcn::training::{evaluate, fit, history_csv, Scheduler, TrainConfig};
use atcn::{build_atcn, Architecture, Model32, PresetName, Prng, Shape, Tensor};
use atcn_cli::pipeline::{last_value_mse, leave_one_out, mnist_split, synthetic_series, windows_per_series};

type Verdict = Result<String, String>;

fn pass_if(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(value: f64, reference: f64, tol: f64) -> bool {
    (value / reference - 1.0).abs() <= tol
}

/// Wall time of the `analyze` subcommand itself.
fn analyze_cli_seconds(preset: &str, len: usize) -> Result<f64, String> {
    let start = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_atcn"))
        .args(["analyze", "--preset", preset, "--len", &len.to_string()])
        .output()
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    Ok(secs)
}

fn cost(preset: PresetName, params_tol: f64, calibrate: bool) -> Verdict {
    let cfg = preset.config();
    let len = preset.input_length();
    let (ref_params, ref_ops) = preset.reference_costs();
    let secs = analyze_cli_seconds(preset.name(), len)?;
    let r = analyze_arch(&Architecture::Atcn(cfg.clone()), len).map_err(|e| e.to_string())?;
    let t = &r.totals;
    let mut detail = format!(
        "params {} ({:.3} of {:.0}), MACs {} ({:.3} of {:.3e}), analyze {:.2} s",
        t.params,
        t.params as f64 / ref_params,
        ref_params,
        t.macs,
        t.macs as f64 / ref_ops,
        ref_ops,
        secs
    );
    for m in compare_ops(t, ref_ops) {
        if m.reading != OpsReading::Macs {
            detail.push_str(&format!("; {} {:.3}", m.reading.name(), m.ratio));
        }
    }
    let mut ok = within(t.params as f64, ref_params, params_tol) && within(t.macs as f64, ref_ops, 0.15) && secs < 1.0;
    if calibrate {
        let (cands, best) =
            calibrate_alpha(&cfg, len, ref_params, ref_ops, &[1, 2, 4, 6]).map_err(|e| e.to_string())?;
        detail.push_str(&format!("; alpha calibration picks {} (preset {})", cands[best].alpha, cfg.alpha));
        ok &= cands[best].alpha == cfg.alpha;
    }
    pass_if(ok, detail)
}

fn receptive_fields() -> Verdict {
    let fixture: serde_json::Value =
        serde_json::from_str(include_str!("../../core/tests/fixtures/receptive_field.json")).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for (p, want) in [(PresetName::Mnist, 169), (PresetName::Mosfet, 35)] {
        let cfg = p.config();
        let layers = fixture[p.name()]["layers"].as_array().ok_or("fixture layers missing")?;
        let hand = 1 + layers.iter().map(|l| l["contribution"].as_u64().unwrap_or(0) as usize).sum::<usize>();
        let taps_match = layers.len() == cfg.depth()
            && layers.iter().enumerate().all(|(i, l)| {
                l["k"].as_u64() == Some(cfg.kernels[i] as u64) && l["d"].as_u64() == Some(cfg.dilations[i] as u64)
            });
        let got = receptive_field(&cfg);
        ok &= got == want && hand == want && taps_match;
        parts.push(format!("{} rf {got} (hand sum {hand})", p.name()));
    }
    pass_if(ok, parts.join(", "))
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut cases = 0;
    let mut failures = Vec::new();
    for kind in 0..support::OP_KINDS {
        for i in 0..15 {
            cases += 1;
            if let Err(e) = support::op_case(kind, i) {
                failures.push(e);
            }
        }
    }
    for ki in 0..support::BLOCK_KINDS.len() {
        for i in 0..25 {
            cases += 1;
            if let Err(e) = support::block_case(ki, i) {
                failures.push(e);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let mut detail = format!("{cases} cases, {} failures, {secs:.1} s", failures.len());
    if let Some(f) = failures.first() {
        detail.push_str(&format!("; first: {f}"));
    }
    pass_if(failures.is_empty() && cases >= 100 && secs < 120.0, detail)
}

fn conv_oracle() -> Verdict {
    let c = 8;
    let mut rng = Prng::new(11);
    let mut worst = 0.0f64;
    let mut configs = 0;
    for k in [1, 3, 13, 25] {
        for d in [1, 2, 4, 6] {
            for g in [1, c / 2, c] {
                let t = (k - 1) * d + 1 + 17;
                let x = rand_uniform(&mut rng, Shape::new(2, c, t), -1.0, 1.0).map_err(|e| e.to_string())?;
                let w = rand_uniform(&mut rng, Shape::new(c, c / g, k), -1.0, 1.0).map_err(|e| e.to_string())?;
                let want = support::naive(&x, w.data(), None, c, k, d, g, 1);
                let p = ConvParams {
                    weight: Tensor::from_vec(Shape::new(c, c / g, k), w.into_vec()).map_err(|e| e.to_string())?,
                    bias: None,
                    stride: 1,
                    dilation: d,
                    groups: g,
                };
                let got = conv1d(&x, &p).map_err(|e| e.to_string())?;
                if got.len() != want.len() {
                    return Err(format!("k={k} d={d} g={g}: {} outputs, oracle {}", got.len(), want.len()));
                }
                for (a, e) in got.data().iter().zip(&want) {
                    worst = worst.max((a - e).abs());
                }
                configs += 1;
            }
        }
    }
    pass_if(worst <= 1e-6, format!("{configs} configurations, max abs difference {worst:.2e}"))
}

fn same_length() -> Verdict {
    let mut ok = true;
    let mut checked = 0;
    for p in PresetName::ALL {
        let cfg = p.config();
        let mut m: Model32 = build_atcn(&cfg, &mut Prng::new(0)).map_err(|e| e.to_string())?;
        for t in [64usize, 101, 256] {
            let mut h = rand_uniform(&mut Prng::new(t as u64), Shape::new(1, 1, t), -1.0f32, 1.0)
                .map_err(|e| e.to_string())?;
            for b in m.blocks.iter_mut() {
                let t_in = h.shape().t;
                if t_in < 2 {
                    break;
                }
                h = b.forward(&h, &mut Ctx::eval()).map_err(|e| e.to_string())?;
                let want = if b.spec.r < 1.0 { t_in / 2 } else { t_in };
                ok &= h.shape().t == want;
                checked += 1;
            }
        }
    }
    let mut m: Model32 = build_atcn(&PresetName::Mnist.config(), &mut Prng::new(0)).map_err(|e| e.to_string())?;
    let mut h = rand_uniform(&mut Prng::new(1), Shape::new(1, 1, 784), -1.0f32, 1.0).map_err(|e| e.to_string())?;
    for b in m.blocks.iter_mut() {
        h = b.forward(&h, &mut Ctx::eval()).map_err(|e| e.to_string())?;
    }
    ok &= h.shape().t == 196;
    pass_if(ok, format!("{checked} block passes; MNIST 784 -> {} before the head", h.shape().t))
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("ATCN_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist_training() -> Verdict {
    let dir = mnist_dir();
    let mut cfg = TrainConfig::recipe(PresetName::Mnist);
    cfg.epochs = 15;
    let split = mnist_split::<f32>(&dir, 10_000, 2_000, cfg.val_fraction)
        .map_err(|e| format!("MNIST files unavailable in {} ({e}); see scripts/fetch_mnist.sh", dir.display()))?;
    let start = Instant::now();
    let model: Model32 = build_atcn(&PresetName::Mnist.config(), &mut Prng::new(cfg.seed)).map_err(|e| e.to_string())?;
    let mut r = fit(model, &split.train, &split.val, &cfg).map_err(|e| e.to_string())?;
    let m = evaluate(&mut r.model, &split.test).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let acc = m.accuracy.unwrap_or(0.0);
    pass_if(
        acc >= 0.95 && secs <= 1800.0 && r.diverged.is_none(),
        format!(
            "test accuracy {acc:.4} on {} images after {} epochs (batch {}), {:.0} s on {} thread(s)",
            split.test.len(),
            r.history.len(),
            cfg.batch_size,
            secs,
            rayon::current_num_threads()
        ),
    )
}

fn synthetic_regression() -> Verdict {
    let start = Instant::now();
    let series = synthetic_series(11, 300, 7).map_err(|e| e.to_string())?;
    let windows = windows_per_series::<f32>(&series, 2).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::recipe(PresetName::Mosfet);
    cfg.epochs = 200;
    let mut ok = true;
    let mut folds = Vec::new();
    for device in 0..4 {
        let split = leave_one_out(&windows, device, cfg.val_fraction, cfg.seed).map_err(|e| e.to_string())?;
        let model: Model32 =
            build_atcn(&PresetName::Mosfet.config(), &mut Prng::new(cfg.seed)).map_err(|e| e.to_string())?;
        let mut r = fit(model, &split.train, &split.val, &cfg).map_err(|e| e.to_string())?;
        let got = evaluate(&mut r.model, &split.test).map_err(|e| e.to_string())?.log10_mse.unwrap_or(f64::NAN);
        let base = last_value_mse(&split.test).map_err(|e| e.to_string())?.log10();
        let h = &r.history;
        let descending = h.len() == 200 && h[199].train_loss < h[0].train_loss;
        ok &= base - got >= 1.0 && descending && r.diverged.is_none();
        folds.push(format!("device {device}: {got:.2} vs {base:.2}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs <= 600.0;
    pass_if(ok, format!("held-out log10 MSE vs last-value baseline: {}; {secs:.0} s", folds.join(", ")))
}

fn causal() -> Verdict {
    let failures: Vec<String> = (0..50).filter_map(|c| support::causal_case(c).err()).collect();
    pass_if(
        failures.is_empty(),
        match failures.first() {
            None => "50 perturbation cases, earlier outputs bit-identical".into(),
            Some(f) => format!("{} of 50 cases failed; first: {f}", failures.len()),
        },
    )
}

fn determinism() -> Verdict {
    let series = synthetic_series(3, 160, 1).map_err(|e| e.to_string())?;
    let windows = windows_per_series::<f32>(&series, 2).map_err(|e| e.to_string())?;
    let split = leave_one_out(&windows, 0, 0.1, 1).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::recipe(PresetName::Mosfet);
    cfg.epochs = 3;
    let run = || -> Result<(String, Model32), String> {
        let m: Model32 = build_atcn(&PresetName::Mosfet.config(), &mut Prng::new(5)).map_err(|e| e.to_string())?;
        let r = fit(m, &split.train, &split.val, &cfg).map_err(|e| e.to_string())?;
        Ok((history_csv(&r.history), r.model))
    };
    let (a, mut model) = run()?;
    let (b, _) = run()?;
    let meta = CheckpointMeta {
        arch: model.arch.clone(),
        seed: Some(5),
    };
    let bytes = checkpoint_bytes(&model, &meta).map_err(|e| e.to_string())?;
    let (mut back, _) = checkpoint_from_bytes::<f32>(&bytes, "memory".as_ref()).map_err(|e| e.to_string())?;
    let ya = model.forward(&split.test.x, &mut Ctx::eval()).map_err(|e| e.to_string())?;
    let yb = back.forward(&split.test.x, &mut Ctx::eval()).map_err(|e| e.to_string())?;
    let exact = ya.data().iter().zip(yb.data()).all(|(p, q)| p.to_bits() == q.to_bits());
    let resave = checkpoint_bytes(&back, &meta).map_err(|e| e.to_string())? == bytes;
    pass_if(
        a == b && exact && resave,
        format!("histories identical: {}; reloaded outputs bit-exact: {exact}; re-save identical: {resave}", a == b),
    )
}

fn schedules() -> Verdict {
    let drive = |p: PresetName, losses: &[f64]| -> Vec<f64> {
        let c = TrainConfig::recipe(p);
        let mut s = Scheduler::new(c.scheduler, c.base_lr);
        losses.iter().enumerate().map(|(e, &l)| s.step(e, l)).collect()
    };
    let mnist = drive(PresetName::Mnist, &[1.0; 7]);
    let improving: Vec<f64> = (0..30).map(|e| 1.0 / (e + 1) as f64).collect();
    let steady = drive(PresetName::Mnist, &improving);
    let ecg = drive(PresetName::Ecg, &[1.0; 71]);
    let mut seq = vec![0.5];
    seq.extend(std::iter::repeat(0.6).take(201));
    let mosfet = drive(PresetName::Mosfet, &seq);
    let checks = [
        mnist[5] == 1e-3 && mnist[6] == 5e-4,
        steady.iter().all(|&v| v == 1e-3),
        ecg[68] == 1e-3 && ecg[69] == 5e-4,
        mosfet[200] == 1e-2 && (mosfet[201] - 9e-3).abs() < 1e-15,
    ];
    pass_if(
        checks.iter().all(|&c| c),
        format!(
            "plateau(5, 0.5) -> {:.2e} after six flat epochs; step(70, 0.5) -> {:.2e} at epoch 70; plateau(200, 0.9) -> {:.2e} after 201 flat epochs",
            mnist[6], ecg[69], mosfet[201]
        ),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    atcn_cli::init_threads();
    let criteria: [Criterion; 12] = [
        ("cost, MNIST preset", || cost(PresetName::Mnist, 0.10, true)),
        ("cost, ECG preset", || cost(PresetName::Ecg, 0.15, false)),
        ("cost, MOSFET preset", || cost(PresetName::Mosfet, 0.15, false)),
        ("receptive field", receptive_fields),
        ("gradient suite", gradient_suite),
        ("convolution oracle", conv_oracle),
        ("same-length property", same_length),
        ("scaled MNIST training", mnist_training),
        ("synthetic regression", synthetic_regression),
        ("causal padding", causal),
        ("determinism and persistence", determinism),
        ("scheduler recipes", schedules),
    ];
    let only: Option<Vec<usize>> = std::env::var("ATCN_ACCEPT_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {tag}  {name}: {detail}  [{secs:.1} s]");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}


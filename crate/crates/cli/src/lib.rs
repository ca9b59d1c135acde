//! The `atcn` command line: analyze, build, train, eval, predict, sweep and
//! presets.

pub mod pipeline;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use atcn::analyzer::{analyze_arch, compare_ops, OpsReading};
use atcn::data::{load_checkpoint, load_series_csv, save_checkpoint, CheckpointMeta, MinMax};
use atcn::training::{evaluate, fit, history_csv, predict, sweep, Knob, Metrics, TrainConfig};
use atcn::{build, Architecture, Error, Model, ModelConfig, PresetName, Prng};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use pipeline::Split;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::NonFinite(_)) {
            EXIT_DIVERGED
        } else if e.is_data_error() {
            EXIT_DATA
        } else {
            EXIT_USAGE
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "atcn", version, about = "Build, analyze and train agile temporal convolutional networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer parameter, MAC and receptive-field report
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        /// Input sequence length (defaults to the preset's)
        #[arg(long)]
        len: Option<usize>,
        /// Also write the report as JSON to this path
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Initialize a model and write an untrained checkpoint
    Build {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and write the best checkpoint plus a per-epoch CSV
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Training settings JSON (defaults to the recipe for the data kind)
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Score a checkpoint on the test split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Write raw test-split predictions as CSV
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Output path; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train once per value of one knob and collect validation curves
    Sweep {
        /// activation or group
        #[arg(long)]
        knob: String,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in presets
    Presets,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// mnist, ecg or mosfet
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Model JSON: a builder config, or `{"atcn": ...}` / `{"gtcn": ...}`
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override applied after loading, e.g. model.alpha=4 or
    /// train.base_lr=0.0005; repeatable, last one wins
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding the four MNIST IDX files
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    /// Leading training images to use
    #[arg(long, default_value_t = 10_000)]
    pub subset: usize,
    /// Leading test images to use
    #[arg(long, default_value_t = 2_000)]
    pub test_subset: usize,
    /// Generate this many synthetic degradation series
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Samples per synthetic series
    #[arg(long, default_value_t = 300)]
    pub series_len: usize,
    /// Seed of the synthetic generator
    #[arg(long, default_value_t = 7)]
    pub data_seed: u64,
    /// Two-column (time, value) CSV series; repeatable
    #[arg(long)]
    pub series_csv: Vec<PathBuf>,
    /// Window stride for series data
    #[arg(long, default_value_t = 2)]
    pub stride: usize,
    /// Series held out as the test set
    #[arg(long, default_value_t = 0)]
    pub test_device: usize,
}

enum DataKind {
    Classification,
    Regression,
}

impl DataArgs {
    fn kind(&self) -> CliResult<DataKind> {
        let series = self.synthetic.is_some() || !self.series_csv.is_empty();
        match (self.mnist_dir.is_some(), series) {
            (true, false) => Ok(DataKind::Classification),
            (false, true) => Ok(DataKind::Regression),
            (true, true) => Err(CliError::usage("choose either --mnist-dir or series data, not both")),
            (false, false) => Err(CliError::usage(
                "no data given: pass --mnist-dir, --synthetic N or --series-csv",
            )),
        }
    }

    fn series(&self) -> CliResult<Vec<Vec<f64>>> {
        if let Some(n) = self.synthetic {
            if !self.series_csv.is_empty() {
                return Err(CliError::usage("--synthetic and --series-csv are exclusive"));
            }
            return Ok(pipeline::synthetic_series(n, self.series_len, self.data_seed)?);
        }
        Ok(self
            .series_csv
            .iter()
            .map(|p| load_series_csv(p))
            .collect::<atcn::Result<Vec<_>>>()?)
    }

    /// Test-split normalization, when the data is series.
    fn load(&self, val_fraction: f64, seed: u64) -> CliResult<(Split<f32>, Option<MinMax>)> {
        match self.kind()? {
            DataKind::Classification => {
                let dir = self.mnist_dir.as_ref().expect("checked by kind");
                let s = pipeline::mnist_split(dir, self.subset, self.test_subset, val_fraction)?;
                Ok((s, None))
            }
            DataKind::Regression => {
                let windows = pipeline::windows_per_series::<f32>(&self.series()?, self.stride)?;
                let norm = windows.get(self.test_device).and_then(|w| w.norm);
                let s = pipeline::leave_one_out(&windows, self.test_device, val_fraction, seed)?;
                Ok((s, norm))
            }
        }
    }
}

/// Sets `root.a.b.c = value`, creating nothing: unknown keys are errors.
fn set_path(root: &mut Value, path: &[&str], value: Value, full: &str) -> CliResult<()> {
    let mut cur = root;
    for (i, key) in path.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::usage(format!("`{full}`: `{key}` is not inside an object")))?;
        if i + 1 == path.len() {
            if !obj.contains_key(*key) {
                return Err(CliError::usage(format!("`{full}`: unknown key `{key}`")));
            }
            obj.insert((*key).to_string(), value);
            return Ok(());
        }
        cur = obj
            .get_mut(*key)
            .ok_or_else(|| CliError::usage(format!("`{full}`: unknown key `{key}`")))?;
    }
    Err(CliError::usage(format!("`{full}`: empty key")))
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `model.*` and `train.*` overrides in order.
pub fn apply_overrides(
    arch: &mut Architecture,
    train: Option<&mut TrainConfig>,
    overrides: &[String],
) -> CliResult<()> {
    let to_usage = |e: serde_json::Error| CliError::usage(e.to_string());
    let mut a = serde_json::to_value(&*arch).map_err(to_usage)?;
    let mut t = match &train {
        Some(t) => Some(serde_json::to_value(&**t).map_err(to_usage)?),
        None => None,
    };
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("override `{o}` is not KEY=VALUE")))?;
        let path: Vec<&str> = key.split('.').collect();
        let value = parse_value(raw);
        match path.first().copied() {
            Some("model") => {
                let variant = a
                    .as_object_mut()
                    .and_then(|m| m.values_mut().next())
                    .expect("architecture serializes as a tagged object");
                set_path(variant, &path[1..], value, o)?;
            }
            Some("train") => match t.as_mut() {
                Some(t) => set_path(t, &path[1..], value, o)?,
                None => return Err(CliError::usage(format!("`{o}`: this command does not train"))),
            },
            _ => return Err(CliError::usage(format!("override `{o}` must start with model. or train."))),
        }
    }
    *arch = serde_json::from_value(a).map_err(to_usage)?;
    if let (Some(dst), Some(v)) = (train, t) {
        *dst = serde_json::from_value(v).map_err(to_usage)?;
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError {
        code: EXIT_DATA,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

impl ModelArgs {
    fn preset_name(&self) -> CliResult<Option<PresetName>> {
        self.preset.as_deref().map(|p| p.parse()).transpose().map_err(CliError::from)
    }

    fn base_arch(&self) -> CliResult<Architecture> {
        match (&self.preset, &self.config) {
            (Some(_), _) => Ok(Architecture::Atcn(self.preset_name()?.expect("set").config())),
            (None, Some(path)) => {
                let v: Value = read_json(path)?;
                if let Ok(c) = serde_json::from_value::<ModelConfig>(v.clone()) {
                    return Ok(Architecture::Atcn(c));
                }
                serde_json::from_value::<Architecture>(v)
                    .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
            }
            (None, None) => Err(CliError::usage("pass --preset or --config")),
        }
    }

    fn resolve(&self, train: Option<&mut TrainConfig>) -> CliResult<Architecture> {
        let mut arch = self.base_arch()?;
        apply_overrides(&mut arch, train, &self.overrides)?;
        let v = match &arch {
            Architecture::Atcn(c) => c.validate(),
            Architecture::Gtcn(g) => g.validate(),
        };
        for w in &v.warnings {
            log::warn!("{w}");
        }
        v.into_result()?;
        log::info!("resolved model: {}", serde_json::to_string(&arch).unwrap_or_default());
        Ok(arch)
    }
}

/// Recipe for the preset, or for the data kind when no preset is named.
fn base_recipe(preset: Option<PresetName>, data: &DataArgs) -> CliResult<TrainConfig> {
    Ok(match preset {
        Some(p) => TrainConfig::recipe(p),
        None => match data.kind()? {
            DataKind::Classification => TrainConfig::recipe(PresetName::Mnist),
            DataKind::Regression => TrainConfig::recipe(PresetName::Mosfet),
        },
    })
}

fn train_config(
    model: &ModelArgs,
    data: &DataArgs,
    file: Option<&Path>,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> CliResult<(Architecture, TrainConfig)> {
    let mut cfg = match file {
        Some(p) => read_json(p)?,
        None => base_recipe(model.preset_name()?, data)?,
    };
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let arch = model.resolve(Some(&mut cfg))?;
    cfg.validate()?;
    log::info!("resolved training: {}", serde_json::to_string(&cfg).unwrap_or_default());
    Ok((arch, cfg))
}

fn check_data_fits(arch: &Architecture, split: &Split<f32>) -> CliResult<()> {
    let c = split.train.x.shape().c;
    if c != arch.input_channels() {
        return Err(CliError {
            code: EXIT_DATA,
            message: format!("data has {c} channels, model expects {}", arch.input_channels()),
        });
    }
    let out = match &split.train.y {
        atcn::training::Targets::Classes(_) => None,
        atcn::training::Targets::Values(v) => Some(v.shape().c),
    };
    for d in [&split.train, &split.val, &split.test] {
        if let atcn::training::Targets::Classes(y) = &d.y {
            if let Some(&m) = y.iter().max().filter(|&&m| m >= arch.output_size()) {
                return Err(CliError {
                    code: EXIT_DATA,
                    message: format!("label {m} out of range for {} model outputs", arch.output_size()),
                });
            }
        }
    }
    if let Some(o) = out {
        if o != arch.output_size() {
            return Err(CliError {
                code: EXIT_DATA,
                message: format!("targets have {o} values, model outputs {}", arch.output_size()),
            });
        }
    }
    Ok(())
}

fn write_out(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError {
            code: EXIT_DATA,
            message: format!("cannot write {}: {e}", p.display()),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn format_metrics(m: &Metrics) -> String {
    let mut s = format!("loss        {:.6}\n", m.loss);
    if let Some(a) = m.accuracy {
        let _ = writeln!(s, "accuracy    {a:.4}");
    }
    if let Some(f) = m.macro_f1 {
        let _ = writeln!(s, "macro_f1    {f:.4}");
    }
    if let Some(f) = &m.per_class_f1 {
        let list: Vec<String> = f.iter().map(|v| format!("{v:.3}")).collect();
        let _ = writeln!(s, "class_f1    {}", list.join(" "));
    }
    if let Some(v) = m.mse {
        let _ = writeln!(s, "mse         {v:.6e}");
    }
    if let Some(v) = m.log10_mse {
        let _ = writeln!(s, "log10_mse   {v:.4}");
    }
    s
}

fn cmd_analyze(model: &ModelArgs, len: Option<usize>, json: Option<&Path>) -> CliResult<String> {
    let preset = model.preset_name()?;
    let arch = model.resolve(None)?;
    let len = match (len, preset) {
        (Some(l), _) => l,
        (None, Some(p)) => p.input_length(),
        (None, None) => return Err(CliError::usage("--len is required with --config")),
    };
    let report = analyze_arch(&arch, len)?;
    let mut out = report.to_table();
    if let Some(p) = preset {
        let (rp, ro) = p.reference_costs();
        let _ = writeln!(
            out,
            "published: {:.2}K params, {:.4e} ops; params ratio {:.3}",
            rp / 1e3,
            ro,
            report.totals.params as f64 / rp
        );
        for m in compare_ops(&report.totals, ro) {
            let tag = if m.reading == OpsReading::TotalOps { " (reported convention)" } else { "" };
            let _ = writeln!(out, "  {:<20} {:>15} ratio {:.3}{tag}", m.reading.name(), m.value, m.ratio);
        }
    }
    if let Some(p) = json {
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::usage(e.to_string()))?;
        write_out(Some(p), &text)?;
    }
    Ok(out)
}

fn cmd_build(model: &ModelArgs, seed: u64, out: &Path) -> CliResult<String> {
    let arch = model.resolve(None)?;
    let m: Model<f32> = build(&arch, &mut Prng::new(seed))?;
    let meta = CheckpointMeta {
        arch,
        seed: Some(seed),
    };
    save_checkpoint(&m, &meta, out)?;
    Ok(format!("{} parameters written to {}\n", m.param_count(), out.display()))
}

fn cmd_train(
    model: &ModelArgs,
    data: &DataArgs,
    epochs: Option<usize>,
    seed: Option<u64>,
    train_file: Option<&Path>,
    out_dir: &Path,
) -> CliResult<String> {
    let (arch, cfg) = train_config(model, data, train_file, epochs, seed)?;
    let (split, _) = data.load(cfg.val_fraction, cfg.seed)?;
    check_data_fits(&arch, &split)?;
    log::info!(
        "train {} / val {} / test {} items",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let m: Model<f32> = build(&arch, &mut Prng::new(cfg.seed))?;
    let r = fit(m, &split.train, &split.val, &cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError {
        code: EXIT_DATA,
        message: format!("cannot create {}: {e}", out_dir.display()),
    })?;
    let ckpt = out_dir.join("model.atcn");
    let meta = CheckpointMeta {
        arch,
        seed: Some(cfg.seed),
    };
    save_checkpoint(&r.model, &meta, &ckpt)?;
    write_out(Some(&out_dir.join("history.csv")), &history_csv(&r.history))?;
    if let Some(why) = r.diverged {
        return Err(CliError {
            code: EXIT_DIVERGED,
            message: format!("training diverged ({why}); best checkpoint kept at {}", ckpt.display()),
        });
    }
    let mut best = r.model;
    let test = evaluate(&mut best, &split.test)?;
    let mut s = format!(
        "best epoch {} of {}; checkpoint {}\n",
        r.best_epoch.unwrap_or(0),
        r.history.len(),
        ckpt.display()
    );
    s.push_str(&format_metrics(&test));
    if !matches!(split.test.y, atcn::training::Targets::Classes(_)) {
        let base = pipeline::last_value_mse(&split.test)?;
        let _ = writeln!(s, "last-value baseline log10_mse {:.4}", base.log10());
    }
    Ok(s)
}

fn load_for_data(checkpoint: &Path, data: &DataArgs) -> CliResult<(Model<f32>, Split<f32>, Option<MinMax>)> {
    let (model, meta) = load_checkpoint::<f32>(checkpoint)?;
    let (split, norm) = data.load(0.1, meta.seed.unwrap_or(0))?;
    check_data_fits(&model.arch, &split)?;
    Ok((model, split, norm))
}

fn cmd_eval(checkpoint: &Path, data: &DataArgs) -> CliResult<String> {
    let (mut model, split, _) = load_for_data(checkpoint, data)?;
    Ok(format_metrics(&evaluate(&mut model, &split.test)?))
}

fn cmd_predict(checkpoint: &Path, data: &DataArgs) -> CliResult<String> {
    let (mut model, split, norm) = load_for_data(checkpoint, data)?;
    let y = predict(&mut model, &split.test.x)?;
    let out = y.shape().c;
    let mut s = String::from("index");
    let regression = norm.is_some();
    if !regression {
        s.push_str(",class");
    }
    for j in 0..out {
        let _ = write!(s, ",{}{j}", if regression { "y" } else { "logit" });
    }
    s.push('\n');
    for i in 0..y.shape().n {
        let row = y.item(i);
        let _ = write!(s, "{i}");
        if let Some(m) = norm {
            for &v in row {
                let _ = write!(s, ",{:.9e}", m.invert(v as f64));
            }
        } else {
            let class = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            let _ = write!(s, ",{class}");
            for &v in row {
                let _ = write!(s, ",{v:.6e}");
            }
        }
        s.push('\n');
    }
    Ok(s)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    knob: &str,
    values: &[String],
    model: &ModelArgs,
    data: &DataArgs,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> CliResult<String> {
    let knob: Knob = knob.parse().map_err(|e: Error| CliError::usage(e.to_string()))?;
    let (arch, cfg) = train_config(model, data, None, epochs, seed)?;
    let Architecture::Atcn(base) = arch else {
        return Err(CliError::usage("sweeps run over ATCN configurations"));
    };
    let (split, _) = data.load(cfg.val_fraction, cfg.seed)?;
    check_data_fits(&Architecture::Atcn(base.clone()), &split)?;
    let r = sweep(knob, values, &base, &split.train, &split.val, &cfg)?;
    Ok(r.to_csv())
}

fn cmd_presets() -> CliResult<String> {
    let mut s = String::from("name     input_len  params   reference_params  reference_ops\n");
    for p in PresetName::ALL {
        let m: Model<f32> = build(&Architecture::Atcn(p.config()), &mut Prng::new(0))?;
        let (rp, ro) = p.reference_costs();
        let _ = writeln!(
            s,
            "{:<8} {:>9}  {:>7}  {:>16.0}  {:>13.4e}",
            p.name(),
            p.input_length(),
            m.param_count(),
            rp,
            ro
        );
    }
    Ok(s)
}

/// Configures the global thread pool from `ATCN_THREADS` (unset or 0 means
/// one thread).
pub fn init_threads() {
    let n = std::env::var("ATCN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1);
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("thread pool already initialized");
    }
}

pub fn execute(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Analyze { model, len, json } => cmd_analyze(model, *len, json.as_deref()),
        Command::Build { model, seed, out } => cmd_build(model, *seed, out),
        Command::Train {
            model,
            data,
            epochs,
            seed,
            train_config,
            out_dir,
        } => cmd_train(model, data, *epochs, *seed, train_config.as_deref(), out_dir),
        Command::Eval { checkpoint, data } => cmd_eval(checkpoint, data),
        Command::Predict { checkpoint, data, out } => {
            let csv = cmd_predict(checkpoint, data)?;
            match out {
                Some(p) => write_out(Some(p), &csv).map(|_| String::new()),
                None => Ok(csv),
            }
        }
        Command::Sweep {
            knob,
            values,
            model,
            data,
            epochs,
            seed,
            out,
        } => {
            let csv = cmd_sweep(knob, values, model, data, *epochs, *seed)?;
            match out {
                Some(p) => write_out(Some(p), &csv).map(|_| String::new()),
                None => Ok(csv),
            }
        }
        Command::Presets => cmd_presets(),
    }
}

/// Parses, runs and reports; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

//! Losses, Adam, learning-rate schedules, the fit/evaluate loop, metrics,
//! and the one-knob ablation sweep.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::builder::{build_atcn, GroupRule, ModelConfig, PresetName};
use crate::data::augment_polarity;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{ActivationKind, Ctx, Layer, Mode};
use crate::scalar::Scalar;
use crate::tensor::{Prng, Shape, Tensor};

pub use crate::init::{xavier_bound, xavier_uniform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulerConfig {
    /// Multiply by `gamma` once validation loss has failed to improve for
    /// more than `patience` consecutive epochs.
    Plateau { patience: usize, gamma: f64 },
    /// `lr = base * gamma^floor(epoch / period)`.
    Step { period: usize, gamma: f64 },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    pub scheduler: SchedulerConfig,
    pub loss: LossKind,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of the training set held out (from the end) for validation
    /// when no separate validation set is supplied.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Probability of negating each training item per batch.
    #[serde(default)]
    pub polarity_prob: f64,
    /// Global gradient-norm cap; off when `None`.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Before each validation pass, re-estimate batch-norm running
    /// statistics from this many training items with dropout off.
    #[serde(default)]
    pub bn_recalibration: Option<usize>,
}

fn default_val_fraction() -> f64 {
    0.1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.epochs == 0 {
            errs.push("epochs must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be at least 1".into());
        }
        if !(self.base_lr >= 0.0) {
            errs.push(format!("base_lr {} must be non-negative", self.base_lr));
        }
        match self.scheduler {
            SchedulerConfig::Plateau { patience: n, gamma } | SchedulerConfig::Step { period: n, gamma } => {
                if n == 0 {
                    errs.push("scheduler patience/period must be at least 1".into());
                }
                if !(gamma > 0.0 && gamma <= 1.0) {
                    errs.push(format!("scheduler gamma {gamma} outside (0, 1]"));
                }
            }
            SchedulerConfig::None => {}
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            errs.push(format!("val_fraction {} outside [0, 1)", self.val_fraction));
        }
        if !(0.0..=1.0).contains(&self.polarity_prob) {
            errs.push(format!("polarity_prob {} outside [0, 1]", self.polarity_prob));
        }
        if self.bn_recalibration == Some(0) {
            errs.push("bn_recalibration must be at least 1 item when set".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Training recipe attached to each preset. Batch sizes are not
    /// published; 16 for MNIST and MOSFET, 64 for ECG.
    pub fn recipe(preset: PresetName) -> Self {
        let base = TrainConfig {
            epochs: 50,
            batch_size: 16,
            base_lr: 1e-3,
            adam: AdamConfig::default(),
            scheduler: SchedulerConfig::Plateau {
                patience: 5,
                gamma: 0.5,
            },
            loss: LossKind::CrossEntropy,
            seed: 1,
            val_fraction: 0.1,
            polarity_prob: 0.0,
            grad_clip: None,
            bn_recalibration: Some(2048),
        };
        match preset {
            PresetName::Mnist => base,
            PresetName::Ecg => TrainConfig {
                epochs: 200,
                batch_size: 64,
                scheduler: SchedulerConfig::Step {
                    period: 70,
                    gamma: 0.5,
                },
                val_fraction: 0.3,
                polarity_prob: 0.5,
                ..base
            },
            PresetName::Mosfet => TrainConfig {
                epochs: 4000,
                base_lr: 1e-2,
                scheduler: SchedulerConfig::Plateau {
                    patience: 200,
                    gamma: 0.9,
                },
                loss: LossKind::Mse,
                ..base
            },
        }
    }
}

/// Adam with bias correction. Moments are kept in `f64`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every trainable parameter of `layer` from its accumulated
    /// gradient. Fails without touching anything if a gradient is not finite.
    pub fn step<T: Scalar, L: Layer<T> + ?Sized>(&mut self, layer: &mut L, lr: f64) -> Result<()> {
        let mut params = layer.params_mut();
        for (name, p) in &params {
            if p.trainable && p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::State("optimizer bound to a different model".into()));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.value.len() {
                let g = p.grad[j].as_f64();
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let upd = lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                p.value[j] -= T::lit(upd);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scheduler {
    pub config: SchedulerConfig,
    pub base_lr: f64,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig, base_lr: f64) -> Self {
        Scheduler {
            config,
            base_lr,
            lr: base_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Call once at the end of each (0-based) epoch; returns the rate for
    /// the next epoch.
    pub fn step(&mut self, epoch: usize, val_loss: f64) -> f64 {
        match self.config {
            SchedulerConfig::Plateau { patience, gamma } => {
                if val_loss < self.best {
                    self.best = val_loss;
                    self.bad_epochs = 0;
                } else {
                    self.bad_epochs += 1;
                    if self.bad_epochs > patience {
                        self.lr *= gamma;
                        self.bad_epochs = 0;
                    }
                }
            }
            SchedulerConfig::Step { period, gamma } => {
                self.lr = self.base_lr * gamma.powi(((epoch + 1) / period) as i32);
            }
            SchedulerConfig::None => {}
        }
        self.lr
    }

    /// Closed form of the step schedule at `epoch`.
    pub fn step_lr_at(base_lr: f64, period: usize, gamma: f64, epoch: usize) -> f64 {
        base_lr * gamma.powi((epoch / period) as i32)
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {} vs target {}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let mut g = pred.clone();
    for (gv, (&p, &t)) in g.data_mut().iter_mut().zip(pred.data().iter().zip(target.data())) {
        let d = (p - t).as_f64();
        loss += d * d;
        *gv = T::lit(2.0 * d / n);
    }
    Ok((loss / n, g))
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
/// `logits` is `(n, classes, 1)`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let s = logits.shape();
    let classes = s.c * s.t;
    if labels.len() != s.n {
        return Err(Error::ShapeMismatch(format!("{} labels for {} items", labels.len(), s.n)));
    }
    let mut g = logits.clone();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Range(format!("class {y} out of range for {classes} outputs")));
        }
        let z: Vec<f64> = logits.item(i).iter().map(|v| v.as_f64()).collect();
        let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        loss += lse - z[y];
        for (j, gv) in g.item_mut(i).iter_mut().enumerate() {
            let p = (z[j] - lse).exp();
            let ind = if j == y { 1.0 } else { 0.0 };
            *gv = T::lit((p - ind) / s.n as f64);
        }
    }
    Ok((loss / s.n as f64, g))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets<T> {
    Classes(Vec<usize>),
    /// `(n, out, 1)`
    Values(Tensor<T>),
}

/// Inputs `(n, c, t)` with one target per item.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub x: Tensor<T>,
    pub y: Targets<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: Tensor<T>, y: Targets<T>) -> Result<Self> {
        let n = match &y {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.shape().n,
        };
        if n != x.shape().n {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs but {n} targets",
                x.shape().n
            )));
        }
        Ok(Dataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let y = match &self.y {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(v.select_items(idx)?),
        };
        Ok(Dataset {
            x: self.x.select_items(idx)?,
            y,
        })
    }

    /// First `len - k` items and last `k` items, `k = round(fraction * len)`.
    pub fn split_tail(&self, fraction: f64) -> Result<(Self, Self)> {
        let n = self.len();
        let k = ((n as f64) * fraction).round() as usize;
        if k == 0 || k >= n {
            return Err(Error::Config(format!(
                "validation fraction {fraction} leaves an empty split of {n} items"
            )));
        }
        let head: Vec<usize> = (0..n - k).collect();
        let tail: Vec<usize> = (n - k..n).collect();
        Ok((self.select(&head)?, self.select(&tail)?))
    }

    fn loss(&self, pred: &Tensor<T>, kind: LossKind) -> Result<(f64, Tensor<T>)> {
        match (&self.y, kind) {
            (Targets::Classes(c), LossKind::CrossEntropy) => cross_entropy(pred, c),
            (Targets::Values(v), LossKind::Mse) => mse(pred, v),
            _ => Err(Error::Config("loss kind does not match the target type".into())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub per_class_f1: Option<Vec<f64>>,
    pub macro_f1: Option<f64>,
    pub mse: Option<f64>,
    pub log10_mse: Option<f64>,
}

/// Accuracy and one-vs-rest F1 per class; an undefined F1 counts as 0.
pub fn classification_metrics(pred: &[usize], truth: &[usize], classes: usize) -> Result<Metrics> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::EmptySequence("no predictions to score".into()));
    }
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    let mut f1 = vec![0.0; classes];
    for (c, f) in f1.iter_mut().enumerate() {
        let tp = pred.iter().zip(truth).filter(|&(&p, &t)| p == c && t == c).count() as f64;
        let fp = pred.iter().zip(truth).filter(|&(&p, &t)| p == c && t != c).count() as f64;
        let fne = pred.iter().zip(truth).filter(|&(&p, &t)| p != c && t == c).count() as f64;
        let denom = 2.0 * tp + fp + fne;
        *f = if denom == 0.0 || tp == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    let macro_f1 = f1.iter().sum::<f64>() / classes.max(1) as f64;
    Ok(Metrics {
        accuracy: Some(correct as f64 / pred.len() as f64),
        per_class_f1: Some(f1),
        macro_f1: Some(macro_f1),
        ..Metrics::default()
    })
}

pub fn regression_metrics(mse: f64) -> Metrics {
    Metrics {
        mse: Some(mse),
        log10_mse: Some(mse.log10()),
        ..Metrics::default()
    }
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

const EVAL_BATCH: usize = 256;

/// Eval-mode outputs for every item, in order.
pub fn predict<T: Scalar>(model: &mut Model<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let n = x.shape().n;
    let out = model.arch.output_size();
    let mut data = Vec::with_capacity(n * out);
    let mut ctx = Ctx::eval();
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let y = model.forward(&x.select_items(chunk)?, &mut ctx)?;
        data.extend_from_slice(y.data());
    }
    Tensor::from_vec(Shape::new(n, out, 1), data)
}

pub fn evaluate<T: Scalar>(model: &mut Model<T>, data: &Dataset<T>) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::EmptySequence("cannot evaluate on an empty dataset".into()));
    }
    let pred = predict(model, &data.x)?;
    match &data.y {
        Targets::Classes(truth) => {
            let (loss, _) = cross_entropy(&pred, truth)?;
            let p: Vec<usize> = (0..pred.shape().n).map(|i| argmax(pred.item(i))).collect();
            let mut m = classification_metrics(&p, truth, model.arch.output_size())?;
            m.loss = loss;
            Ok(m)
        }
        Targets::Values(v) => {
            let (loss, _) = mse(&pred, v)?;
            let mut m = regression_metrics(loss);
            m.loss = loss;
            Ok(m)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub val: Metrics,
}

pub struct FitResult<T> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model<T>,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

fn grad_norm_clip<T: Scalar>(model: &mut Model<T>, max_norm: f64) {
    let mut params = model.params_mut();
    let sq: f64 = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(_, p)| p.grad.iter())
        .map(|g| g.as_f64().powi(2))
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        for (_, p) in params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Replaces every batch-norm running mean and variance with the average of
/// the batch statistics over the first `items` inputs, taken in chunks of
/// `batch` with dropout off. Trainable parameters are untouched.
pub fn recalibrate_batchnorm<T: Scalar>(
    model: &mut Model<T>,
    x: &Tensor<T>,
    items: usize,
    batch: usize,
) -> Result<()> {
    let n = items.min(x.shape().n);
    let idx: Vec<usize> = (0..n).collect();
    for (k, chunk) in idx.chunks(batch.max(2)).enumerate() {
        // a lone trailing item carries no variance estimate
        if chunk.len() < 2 && k > 0 {
            break;
        }
        let mut ctx = Ctx {
            mode: Mode::Calibrate(k),
            rng: Prng::new(0),
        };
        model.forward(&x.select_items(chunk)?, &mut ctx)?;
    }
    Ok(())
}

/// Seeded epoch loop: shuffle, mini-batch Adam, schedule on validation
/// loss, keep the best-validation parameters.
pub fn fit<T: Scalar>(
    mut model: Model<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptySequence("training and validation sets must be non-empty".into()));
    }
    // shape problems surface here, before any update
    let probe: Vec<usize> = (0..train.len().min(2)).collect();
    let y = model.forward(&train.x.select_items(&probe)?, &mut Ctx::eval())?;
    train.select(&probe)?.loss(&y, cfg.loss)?;

    let mut rng = Prng::new(cfg.seed);
    let mut adam = Adam::new(cfg.adam);
    let mut sched = Scheduler::new(cfg.scheduler, cfg.base_lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model<T>)> = None;
    let mut diverged = None;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = sched.lr();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut b = train.select(batch)?;
            if cfg.polarity_prob > 0.0 {
                b.x = augment_polarity(&b.x, &mut rng, cfg.polarity_prob)?;
            }
            model.zero_grad();
            let mut ctx = Ctx::train(rng.fork());
            let y = model.forward(&b.x, &mut ctx)?;
            let (loss, g) = b.loss(&y, cfg.loss)?;
            if !loss.is_finite() {
                diverged = Some(format!("loss became {loss} in epoch {}", epoch + 1));
                break 'epochs;
            }
            model.backward(&g)?;
            if let Some(c) = cfg.grad_clip {
                grad_norm_clip(&mut model, c);
            }
            if let Err(e) = adam.step(&mut model, lr) {
                diverged = Some(format!("{e} in epoch {}", epoch + 1));
                break 'epochs;
            }
            total += loss * batch.len() as f64;
            seen += batch.len();
        }
        if let Some(items) = cfg.bn_recalibration {
            recalibrate_batchnorm(&mut model, &train.x, items, cfg.batch_size)?;
        }
        let val_m = evaluate(&mut model, val)?;
        if !val_m.loss.is_finite() {
            diverged = Some(format!("validation loss became {} in epoch {}", val_m.loss, epoch + 1));
            break;
        }
        let train_loss = total / seen as f64;
        log::info!(
            "epoch {:>3}  train {:.6}  val {:.6}  lr {:.3e}",
            epoch + 1,
            train_loss,
            val_m.loss,
            lr
        );
        if best.as_ref().map_or(true, |(b, _, _)| val_m.loss < *b) {
            best = Some((val_m.loss, epoch, model.clone()));
        }
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss: val_m.loss,
            lr,
            val: val_m.clone(),
        });
        sched.step(epoch, val_m.loss);
    }
    let (best_epoch, model) = match best {
        Some((_, e, m)) => (Some(e + 1), m),
        None => (None, model),
    };
    Ok(FitResult {
        model,
        best_epoch,
        history,
        diverged,
    })
}

/// `epoch,train_loss,val_loss,lr,` then `accuracy,macro_f1` or `log10_mse`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let classification = history.first().map_or(true, |r| r.val.accuracy.is_some());
    let mut s = String::from("epoch,train_loss,val_loss,lr,");
    s.push_str(if classification { "accuracy,macro_f1\n" } else { "log10_mse\n" });
    for r in history {
        let _ = write!(s, "{},{:.9e},{:.9e},{:.9e},", r.epoch, r.train_loss, r.val_loss, r.lr);
        if classification {
            let _ = writeln!(
                s,
                "{:.6},{:.6}",
                r.val.accuracy.unwrap_or(f64::NAN),
                r.val.macro_f1.unwrap_or(f64::NAN)
            );
        } else {
            let _ = writeln!(s, "{:.6}", r.val.log10_mse.unwrap_or(f64::NAN));
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    Activation,
    Group,
}

impl std::str::FromStr for Knob {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activation" => Ok(Knob::Activation),
            "group" => Ok(Knob::Group),
            _ => Err(Error::Config(format!("unknown sweep knob `{s}` (activation, group)"))),
        }
    }
}

/// Applies one knob value to a config.
pub fn apply_knob(config: &ModelConfig, knob: Knob, value: &str) -> Result<ModelConfig> {
    let mut c = config.clone();
    match knob {
        Knob::Activation => c.activation = value.parse::<ActivationKind>()?,
        Knob::Group => {
            let g: usize = value
                .parse()
                .map_err(|_| Error::Config(format!("group value `{value}` is not a positive integer")))?;
            if g == 0 {
                return Err(Error::Config("group must be at least 1".into()));
            }
            c.group_rule = GroupRule::Explicit(vec![g; c.depth()]);
        }
    }
    c.validate().into_result()?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub values: Vec<String>,
    /// One validation-loss curve per value.
    pub curves: Vec<Vec<f64>>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch");
        for v in &self.values {
            s.push(',');
            s.push_str(v);
        }
        s.push('\n');
        let epochs = self.curves.iter().map(|c| c.len()).max().unwrap_or(0);
        for e in 0..epochs {
            let _ = write!(s, "{}", e + 1);
            for c in &self.curves {
                match c.get(e) {
                    Some(v) => {
                        let _ = write!(s, ",{v:.9e}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Trains one model per knob value from the same seed and collects the
/// validation-loss curves in the order given.
pub fn sweep<T: Scalar>(
    knob: Knob,
    values: &[String],
    base: &ModelConfig,
    train: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| apply_knob(base, knob, v))
        .collect::<Result<Vec<_>>>()?;
    let mut curves = Vec::new();
    for c in configs {
        let model = build_atcn::<T>(&c, &mut Prng::new(cfg.seed))?;
        let r = fit(model, train, val, cfg)?;
        curves.push(r.history.iter().map(|h| h.val_loss).collect());
    }
    Ok(SweepResult {
        values: values.to_vec(),
        curves,
    })
}

/// Snapshot of every trainable parameter.
pub fn trainable_values<T: Scalar>(model: &mut Model<T>) -> Vec<Vec<T>> {
    model
        .params_mut()
        .into_iter()
        .filter(|(_, p)| p.trainable)
        .map(|(_, p)| p.value.clone())
        .collect()
}

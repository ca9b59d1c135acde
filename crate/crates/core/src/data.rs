//! Dataset ingestion and model persistence.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::builder::build;
use crate::error::{Error, Result};
use crate::model::{Architecture, Model};
use crate::nn::Layer;
use crate::scalar::Scalar;
use crate::tensor::{Prng, Shape, Tensor};
use crate::training::{Dataset, Targets};

const IDX_IMAGES: u32 = 2051;
const IDX_LABELS: u32 = 2049;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn be_u32(buf: &[u8], at: usize, path: &Path) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(path, format!("truncated header at byte {at}")))
}

/// Parses an IDX file, returning its dimensions and payload.
fn parse_idx<'a>(buf: &'a [u8], path: &Path, magic: u32) -> Result<(Vec<usize>, &'a [u8])> {
    let found = be_u32(buf, 0, path)?;
    if found != magic {
        return Err(Error::parse(path, format!("bad magic {found}, expected {magic}")));
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|i| be_u32(buf, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * rank;
    let len: usize = dims.iter().product();
    let body = &buf[start..];
    if body.len() != len {
        return Err(Error::parse(
            path,
            format!("payload has {} bytes, header declares {len}", body.len()),
        ));
    }
    Ok((dims, body))
}

/// Images become `(n, 1, rows * cols)` scaled to `[0, 1]`.
pub fn load_mnist_idx<T: Scalar>(images: &Path, labels: &Path) -> Result<Dataset<T>> {
    let ib = read_file(images)?;
    let lb = read_file(labels)?;
    let (idims, pixels) = parse_idx(&ib, images, IDX_IMAGES)?;
    let (ldims, lab) = parse_idx(&lb, labels, IDX_LABELS)?;
    if idims[0] != ldims[0] {
        return Err(Error::parse(
            labels,
            format!("{} labels for {} images", ldims[0], idims[0]),
        ));
    }
    if idims[0] == 0 {
        return Err(Error::parse(images, "file holds no images"));
    }
    let t = idims[1] * idims[2];
    let data = pixels.iter().map(|&p| T::lit(p as f64 / 255.0)).collect();
    let x = Tensor::from_vec(Shape::new(idims[0], 1, t), data)?;
    let y = lab.iter().map(|&l| l as usize).collect();
    Dataset::new(x, Targets::Classes(y))
}

/// Standard file names inside an MNIST directory.
pub fn load_mnist_dir<T: Scalar>(dir: &Path, train: bool) -> Result<Dataset<T>> {
    let prefix = if train { "train" } else { "t10k" };
    load_mnist_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Inputs `(count, 1, in_len)` and targets `(count, out_len, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesWindowSet<T> {
    pub inputs: Tensor<T>,
    pub targets: Tensor<T>,
    pub in_len: usize,
    pub out_len: usize,
    pub norm: Option<MinMax>,
}

impl<T: Scalar> SeriesWindowSet<T> {
    pub fn len(&self) -> usize {
        self.inputs.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_dataset(self) -> Result<Dataset<T>> {
        Dataset::new(self.inputs, Targets::Values(self.targets))
    }

    /// Concatenates sets with equal window sizes.
    pub fn concat(sets: &[SeriesWindowSet<T>]) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| Error::EmptySequence("no window sets to join".into()))?;
        let (il, ol) = (first.in_len, first.out_len);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in sets {
            if (s.in_len, s.out_len) != (il, ol) {
                return Err(Error::ShapeMismatch(format!(
                    "window sizes ({}, {}) and ({il}, {ol})",
                    s.in_len, s.out_len
                )));
            }
            xs.extend_from_slice(s.inputs.data());
            ys.extend_from_slice(s.targets.data());
        }
        let n = xs.len() / il;
        Ok(SeriesWindowSet {
            inputs: Tensor::from_vec(Shape::new(n, 1, il), xs)?,
            targets: Tensor::from_vec(Shape::new(n, ol, 1), ys)?,
            in_len: il,
            out_len: ol,
            norm: None,
        })
    }
}

pub fn window_series<T: Scalar>(
    series: &[T],
    in_len: usize,
    out_len: usize,
    stride: usize,
) -> Result<SeriesWindowSet<T>> {
    if in_len == 0 || out_len == 0 || stride == 0 {
        return Err(Error::Config("window lengths and stride must be positive".into()));
    }
    let span = in_len + out_len;
    if series.len() < span {
        return Err(Error::Length(format!(
            "series of length {} is shorter than one window ({span})",
            series.len()
        )));
    }
    let offsets: Vec<usize> = (0..=series.len() - span).step_by(stride).collect();
    let mut xs = Vec::with_capacity(offsets.len() * in_len);
    let mut ys = Vec::with_capacity(offsets.len() * out_len);
    for &o in &offsets {
        xs.extend_from_slice(&series[o..o + in_len]);
        ys.extend_from_slice(&series[o + in_len..o + span]);
    }
    Ok(SeriesWindowSet {
        inputs: Tensor::from_vec(Shape::new(offsets.len(), 1, in_len), xs)?,
        targets: Tensor::from_vec(Shape::new(offsets.len(), out_len, 1), ys)?,
        in_len,
        out_len,
        norm: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit<T: Scalar>(series: &[T]) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::EmptySequence("cannot normalize an empty series".into()));
        }
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in series {
            let v = v.as_f64();
            if !v.is_finite() {
                return Err(Error::NonFinite("series value".into()));
            }
            min = min.min(v);
            max = max.max(v);
        }
        if max <= min {
            return Err(Error::Range(format!("degenerate range: every value equals {min}")));
        }
        Ok(MinMax { min, max })
    }

    pub fn apply<T: Scalar>(&self, v: T) -> T {
        T::lit(2.0 * (v.as_f64() - self.min) / (self.max - self.min) - 1.0)
    }

    pub fn invert<T: Scalar>(&self, v: T) -> T {
        T::lit((v.as_f64() + 1.0) * 0.5 * (self.max - self.min) + self.min)
    }
}

/// Maps the series minimum to -1 and its maximum to +1.
pub fn normalize_minmax<T: Scalar>(series: &[T]) -> Result<(Vec<T>, MinMax)> {
    let m = MinMax::fit(series)?;
    Ok((series.iter().map(|&v| m.apply(v)).collect(), m))
}

pub fn denormalize<T: Scalar>(series: &[T], m: &MinMax) -> Vec<T> {
    series.iter().map(|&v| m.invert(v)).collect()
}

/// Negates each item independently with probability `prob`.
pub fn augment_polarity<T: Scalar>(batch: &Tensor<T>, rng: &mut Prng, prob: f64) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::Range(format!("probability {prob} outside [0, 1]")));
    }
    let mut out = batch.clone();
    for i in 0..batch.shape().n {
        if rng.bernoulli(prob) {
            out.item_mut(i).iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(out)
}

/// Per-device draw ranges for [`gen_synthetic_degradation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationRanges {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub noise: (f64, f64),
}

impl Default for DegradationRanges {
    /// `a` in [0.02, 0.1], `b` chosen so `b * length` lands in [2, 4],
    /// noise standard deviation in [0.002, 0.01].
    fn default() -> Self {
        DegradationRanges {
            a: (0.02, 0.1),
            b: (2.0, 4.0),
            noise: (0.002, 0.01),
        }
    }
}

/// `a (e^{b t} - 1) + noise` for `t = 0..length`, where `b` is drawn per
/// device as a total growth exponent and divided by `length`.
pub fn gen_synthetic_degradation(rng: &mut Prng, devices: usize, length: usize) -> Result<Vec<Vec<f64>>> {
    gen_synthetic_degradation_with(rng, devices, length, DegradationRanges::default())
}

pub fn gen_synthetic_degradation_with(
    rng: &mut Prng,
    devices: usize,
    length: usize,
    r: DegradationRanges,
) -> Result<Vec<Vec<f64>>> {
    if devices < 2 {
        return Err(Error::Config(format!("need at least 2 devices, got {devices}")));
    }
    if length == 0 {
        return Err(Error::Length("series length must be positive".into()));
    }
    let draw = |rng: &mut Prng, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.unit_f64();
    let mut out = Vec::with_capacity(devices);
    for _ in 0..devices {
        let a = draw(rng, r.a);
        let b = draw(rng, r.b) / length as f64;
        let s = draw(rng, r.noise);
        let series = (0..length)
            .map(|t| a * ((b * t as f64).exp() - 1.0) + s * rng.normal())
            .collect();
        out.push(series);
    }
    Ok(out)
}

/// Reads a two-column CSV (time, value) with a header row and returns the
/// values in file order.
pub fn load_series_csv(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.len() != 2 {
        return Err(Error::parse(
            path,
            format!("expected 2 header columns (time, value), found {}", headers.len()),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        for field in 0..2 {
            let v: f64 = rec[field]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, format!("line {line}: `{}` is not a number", &rec[field])))?;
            if !v.is_finite() {
                return Err(Error::parse(path, format!("line {line}: non-finite value")));
            }
            if field == 1 {
                out.push(v);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::parse(path, "no data rows"));
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ATCN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON header stored in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub arch: Architecture,
    /// Seed the weights were initialized and trained with.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Serializes every parameter and buffer as little-endian `f32`.
pub fn checkpoint_bytes<T: Scalar>(model: &Model<T>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    if meta.arch != model.arch {
        return Err(Error::Config("checkpoint metadata describes a different architecture".into()));
    }
    let json = serde_json::to_vec(meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, p) in model.named_params() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &p.value {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(e) => {
                let s = &self.buf[self.at..e];
                self.at = e;
                Ok(s)
            }
            None => Err(Error::parse(self.path, format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn checkpoint_from_bytes<T: Scalar>(buf: &[u8], path: &Path) -> Result<(Model<T>, CheckpointMeta)> {
    let mut c = Cursor { buf, at: 0, path };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::parse(path, "not an ATCN checkpoint (bad magic)"));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let jlen = c.u32("header length")? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(c.take(jlen, "header")?)
        .map_err(|e| Error::parse(path, format!("header: {e}")))?;
    let mut model = build::<T>(&meta.arch, &mut Prng::new(0))
        .map_err(|e| Error::parse(path, format!("embedded architecture: {e}")))?;
    for (name, p) in model.params_mut() {
        let nlen = {
            let b = c.take(2, "name length")?;
            u16::from_le_bytes([b[0], b[1]]) as usize
        };
        let found = std::str::from_utf8(c.take(nlen, "name")?)
            .map_err(|_| Error::parse(path, "parameter name is not UTF-8"))?;
        if found != name {
            return Err(Error::parse(path, format!("expected parameter `{name}`, found `{found}`")));
        }
        let rank = c.take(1, "rank")?[0] as usize;
        let shape = (0..rank)
            .map(|_| c.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != p.shape {
            return Err(Error::ShapeMismatch(format!(
                "{name}: checkpoint shape {shape:?}, architecture expects {:?}",
                p.shape
            )));
        }
        let raw = c.take(4 * p.len(), "values")?;
        for (v, b) in p.value.iter_mut().zip(raw.chunks_exact(4)) {
            *v = T::lit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        }
    }
    if c.at != buf.len() {
        return Err(Error::parse(path, format!("{} trailing bytes", buf.len() - c.at)));
    }
    Ok((model, meta))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Model<T>, CheckpointMeta)> {
    checkpoint_from_bytes(&read_file(path)?, path)
}

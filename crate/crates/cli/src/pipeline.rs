//! Data preparation shared by the subcommands and the acceptance suite.

use std::path::Path;

use atcn::data::{gen_synthetic_degradation, load_mnist_dir, normalize_minmax, window_series, SeriesWindowSet};
use atcn::training::{Dataset, Targets};
use atcn::{Error, Prng, Result, Scalar, Shape, Tensor};

/// Window sizes of the regression preset.
pub const IN_LEN: usize = 21;
pub const OUT_LEN: usize = 104;

pub struct Split<T> {
    pub train: Dataset<T>,
    pub val: Dataset<T>,
    pub test: Dataset<T>,
}

/// First `subset` training images (last `val_fraction` of them held out for
/// validation) and the first `test_subset` test images.
pub fn mnist_split<T: Scalar>(dir: &Path, subset: usize, test_subset: usize, val_fraction: f64) -> Result<Split<T>> {
    let full = load_mnist_dir::<T>(dir, true)?;
    let head = |d: &Dataset<T>, n: usize| -> Result<Dataset<T>> {
        if n > d.len() {
            return Err(Error::Length(format!("asked for {n} items, file holds {}", d.len())));
        }
        d.select(&(0..n).collect::<Vec<_>>())
    };
    let sub = head(&full, subset)?;
    let (train, val) = sub.split_tail(val_fraction)?;
    let test_full = load_mnist_dir::<T>(dir, false)?;
    let test = head(&test_full, test_subset)?;
    Ok(Split { train, val, test })
}

/// Each series normalized to `[-1, 1]` on its own range, then windowed.
pub fn windows_per_series<T: Scalar>(series: &[Vec<f64>], stride: usize) -> Result<Vec<SeriesWindowSet<T>>> {
    series
        .iter()
        .map(|s| {
            let (n, m) = normalize_minmax(s)?;
            let n: Vec<T> = n.into_iter().map(T::lit).collect();
            let mut w = window_series(&n, IN_LEN, OUT_LEN, stride)?;
            w.norm = Some(m);
            Ok(w)
        })
        .collect()
}

/// Series `test_device` is the test set; the rest are pooled, and a seeded
/// random `val_fraction` of their windows is held out for validation.
pub fn leave_one_out<T: Scalar>(
    windows: &[SeriesWindowSet<T>],
    test_device: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<Split<T>> {
    if test_device >= windows.len() {
        return Err(Error::Range(format!(
            "test device {test_device} out of range for {} series",
            windows.len()
        )));
    }
    if windows.len() < 2 {
        return Err(Error::Config("need at least two series to hold one out".into()));
    }
    let rest: Vec<SeriesWindowSet<T>> = windows
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != test_device)
        .map(|(_, w)| w.clone())
        .collect();
    let pooled = SeriesWindowSet::concat(&rest)?.into_dataset()?;
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    Prng::new(seed ^ 0x5eed).shuffle(&mut idx);
    let k = ((pooled.len() as f64) * val_fraction).round().max(1.0) as usize;
    if k >= pooled.len() {
        return Err(Error::Length("too few windows for a validation split".into()));
    }
    let (val_idx, train_idx) = idx.split_at(k);
    let mut train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok(Split {
        train: pooled.select(&train_idx)?,
        val: pooled.select(&val_idx)?,
        test: windows[test_device].clone().into_dataset()?,
    })
}

/// `devices` synthetic degradation curves of `length` samples.
pub fn synthetic_series(devices: usize, length: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    gen_synthetic_degradation(&mut Prng::new(seed), devices, length)
}

/// MSE of repeating each window's last input value across the horizon.
pub fn last_value_mse<T: Scalar>(data: &Dataset<T>) -> Result<f64> {
    let Targets::Values(y) = &data.y else {
        return Err(Error::Config("last-value baseline needs regression targets".into()));
    };
    let (n, out) = (y.shape().n, y.shape().c);
    let mut pred = Vec::with_capacity(n * out);
    for i in 0..n {
        let last = *data.x.item(i).last().expect("windows are non-empty");
        pred.extend(std::iter::repeat(last).take(out));
    }
    let p = Tensor::from_vec(Shape::new(n, out, 1), pred)?;
    Ok(atcn::training::mse(&p, y)?.0)
}

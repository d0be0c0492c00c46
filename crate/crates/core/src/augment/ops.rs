//! The individual augmentations as pure functions of their sampled parameters.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::types::{ClipRecord, FrameLabelGrid, Subset, WeakLabels};
use crate::vocab::ClassVocabulary;

pub const MIXSTYLE_EPS: f64 = 1e-8;

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "mixing weight {lambda} outside [0, 1]"
        )))
    }
}

fn same_geometry(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "cannot mix grids of shape {:?} and {:?}",
            a.dim(),
            b.dim()
        )))
    }
}

/// Loss mask of a mixed label set: both clips' native classes plus every
/// masked class whose mixed target is positive somewhere. A degenerate mix
/// (λ = 0 or 1) keeps the surviving clip's mask.
fn mixed_mask(
    lambda: f64,
    mask: (&[bool], &[bool]),
    native: (&[bool], &[bool]),
    positive: impl Fn(usize) -> bool,
) -> Vec<bool> {
    if lambda == 1.0 {
        return mask.0.to_vec();
    }
    if lambda == 0.0 {
        return mask.1.to_vec();
    }
    (0..mask.0.len())
        .map(|c| native.0[c] || native.1[c] || ((mask.0[c] || mask.1[c]) && positive(c)))
        .collect()
}

fn mix_grid(
    a: &FrameLabelGrid,
    b: &FrameLabelGrid,
    lambda: f64,
    native: (&[bool], &[bool]),
) -> Result<FrameLabelGrid> {
    same_geometry(&a.targets, &b.targets)?;
    let targets = &a.targets * lambda + &b.targets * (1.0 - lambda);
    let loss_mask = mixed_mask(lambda, (&a.loss_mask, &b.loss_mask), native, |c| {
        targets.row(c).iter().any(|&v| v > 0.0)
    });
    Ok(FrameLabelGrid { targets, loss_mask })
}

fn mix_weak(a: &WeakLabels, b: &WeakLabels, lambda: f64, native: (&[bool], &[bool])) -> WeakLabels {
    let targets: Vec<f64> = a
        .targets
        .iter()
        .zip(&b.targets)
        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
        .collect();
    let loss_mask = mixed_mask(lambda, (&a.loss_mask, &b.loss_mask), native, |c| {
        targets[c] > 0.0
    });
    WeakLabels { targets, loss_mask }
}

fn mix_optional<T>(
    a: &Option<T>,
    b: &Option<T>,
    what: &str,
    mix: impl Fn(&T, &T) -> Result<T>,
) -> Result<Option<T>> {
    match (a, b) {
        (Some(x), Some(y)) => Ok(Some(mix(x, y)?)),
        (None, None) => Ok(None),
        _ => Err(Error::Data(format!(
            "cannot mix a clip with {what} labels and one without"
        ))),
    }
}

/// Convex combination of two clips: features and every label grid use the
/// same weight `lambda` on `a`. The result keeps `a`'s id and subset.
pub fn mixup(
    a: &ClipRecord,
    b: &ClipRecord,
    lambda: f64,
    vocab: &ClassVocabulary,
) -> Result<ClipRecord> {
    check_lambda(lambda)?;
    same_geometry(&a.features, &b.features)?;
    let (na, nb) = (vocab.native_mask(a.origin()), vocab.native_mask(b.origin()));
    let native = (na.as_slice(), nb.as_slice());
    Ok(ClipRecord {
        clip_id: a.clip_id.clone(),
        features: &a.features * lambda + &b.features * (1.0 - lambda),
        subset: a.subset,
        strong: mix_optional(&a.strong, &b.strong, "strong", |x, y| {
            mix_grid(x, y, lambda, native)
        })?,
        weak: mix_optional(&a.weak, &b.weak, "weak", |x, y| {
            Ok(mix_weak(x, y, lambda, native))
        })?,
        pseudo: mix_optional(&a.pseudo, &b.pseudo, "pseudo", |x, y| {
            mix_grid(x, y, lambda, native)
        })?,
    })
}

/// Mixup restricted to strongly labeled clips, applied to raw features.
/// Any other input passes through unchanged.
pub fn wavmix(
    a: &ClipRecord,
    b: &ClipRecord,
    lambda: f64,
    vocab: &ClassVocabulary,
) -> Result<ClipRecord> {
    if !(a.subset.is_strong() && b.subset.is_strong()) {
        return Ok(a.clone());
    }
    mixup(a, b, lambda, vocab)
}

/// Per-bin mean and population standard deviation over time.
pub fn bin_statistics(x: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let t = x.ncols() as f64;
    x.axis_iter(Axis(0))
        .map(|row| {
            let mean = row.sum() / t;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
            (mean, var.sqrt())
        })
        .unzip()
}

/// Re-styles `a` with per-bin statistics interpolated towards those of `b`.
pub fn freq_mixstyle(a: &Array2<f64>, b: &Array2<f64>, lambda: f64) -> Result<Array2<f64>> {
    check_lambda(lambda)?;
    same_geometry(a, b)?;
    let (mu_a, sd_a) = bin_statistics(a);
    let (mu_b, sd_b) = bin_statistics(b);
    let mut out = a.clone();
    for (f, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let gamma = lambda * sd_a[f] + (1.0 - lambda) * sd_b[f];
        let beta = lambda * mu_a[f] + (1.0 - lambda) * mu_b[f];
        row.mapv_inplace(|v| gamma * (v - mu_a[f]) / (sd_a[f] + MIXSTYLE_EPS) + beta);
    }
    Ok(out)
}

/// Piecewise-linear per-bin gain in dB through `(bin, gain)` control points.
/// Bins outside the control range take the nearest endpoint gain.
pub fn filter_gain_curve(n_bins: usize, points: &[usize], gains_db: &[f64]) -> Result<Vec<f64>> {
    if points.is_empty() || points.len() != gains_db.len() {
        return Err(Error::Config(
            "filter bands need one gain per control point".into(),
        ));
    }
    if points.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "filter control points must be strictly increasing".into(),
        ));
    }
    Ok((0..n_bins)
        .map(|f| {
            if f <= points[0] {
                return gains_db[0];
            }
            let last = points.len() - 1;
            if f >= points[last] {
                return gains_db[last];
            }
            let k = points.partition_point(|&p| p <= f) - 1;
            let (p0, p1) = (points[k] as f64, points[k + 1] as f64);
            let frac = (f as f64 - p0) / (p1 - p0);
            gains_db[k] + frac * (gains_db[k + 1] - gains_db[k])
        })
        .collect())
}

/// Multiplies every bin by `10^(gain_dB / 20)`.
pub fn apply_bin_gains_db(features: &Array2<f64>, gains_db: &[f64]) -> Array2<f64> {
    let mut out = features.clone();
    for (mut row, g) in out.axis_iter_mut(Axis(0)).zip(gains_db) {
        let scale = 10f64.powf(g / 20.0);
        row.mapv_inplace(|v| v * scale);
    }
    out
}

/// Zeroes `len` feature frames starting at `start`, plus every strong or
/// pseudo label column overlapping them. Only DESED strong clips are masked.
pub fn time_mask(clip: &ClipRecord, start: usize, len: usize) -> Result<ClipRecord> {
    if !matches!(
        clip.subset,
        Subset::DesedRealStrong | Subset::DesedSynthStrong
    ) {
        return Ok(clip.clone());
    }
    let t_in = clip.features.ncols();
    if start + len > t_in {
        return Err(Error::Shape(format!(
            "mask [{start}, {}) exceeds {t_in} frames",
            start + len
        )));
    }
    let mut out = clip.clone();
    out.features
        .slice_mut(ndarray::s![.., start..start + len])
        .fill(0.0);
    for grid in [out.strong.as_mut(), out.pseudo.as_mut()]
        .into_iter()
        .flatten()
    {
        let t_out = grid.targets.ncols();
        for j in 0..t_out {
            // label frame j covers input frames [j·t_in/t_out, (j+1)·t_in/t_out)
            let (lo, hi) = (j * t_in, (j + 1) * t_in);
            if lo < (start + len) * t_out && start * t_out < hi && len > 0 {
                grid.targets.column_mut(j).fill(0.0);
            }
        }
    }
    Ok(out)
}

/// Number of frames masked for ratio `r` on a `t`-frame grid.
pub fn mask_length(r: f64, t: usize) -> usize {
    ((r * t as f64).round() as usize).min(t)
}

/// Stretches (`w > 1`) or squeezes (`w < 1`) the frequency axis: resample to
/// `round(w·F)` bins by endpoint-aligned linear interpolation, then
/// center-crop or pad with the boundary bins back to `F`.
pub fn freq_warp(features: &Array2<f64>, w: f64) -> Result<Array2<f64>> {
    if !(w > 0.0) {
        return Err(Error::Config(format!("warp factor {w} must be positive")));
    }
    let (f, t) = features.dim();
    let m = ((w * f as f64).round() as usize).max(1);
    if m == f {
        return Ok(features.clone());
    }
    let sample = |pos: f64, col: usize| -> f64 {
        let lo = (pos.floor() as usize).min(f - 1);
        let hi = (lo + 1).min(f - 1);
        let frac = pos - lo as f64;
        features[[lo, col]] * (1.0 - frac) + features[[hi, col]] * frac
    };
    let scale = if m > 1 {
        (f - 1) as f64 / (m - 1) as f64
    } else {
        0.0
    };
    let resampled = Array2::from_shape_fn((m, t), |(i, c)| sample(i as f64 * scale, c));
    Ok(if m > f {
        let offset = (m - f) / 2;
        resampled
            .slice(ndarray::s![offset..offset + f, ..])
            .to_owned()
    } else {
        let left = (f - m) / 2;
        Array2::from_shape_fn((f, t), |(i, c)| {
            let src = i.saturating_sub(left).min(m - 1);
            resampled[[src, c]]
        })
    })
}

/// Smooth device-like frequency response in dB: a Gaussian random walk with
/// the given steps, moving-average smoothed, clamped to `±max_db`.
pub fn dir_response_curve(steps_db: &[f64], smooth_bins: usize, max_db: f64) -> Vec<f64> {
    let mut walk = Vec::with_capacity(steps_db.len());
    let mut acc = 0.0;
    for s in steps_db {
        acc += s;
        walk.push(acc);
    }
    let n = walk.len();
    if n == 0 {
        return walk;
    }
    let mean = walk.iter().sum::<f64>() / n as f64;
    let half = smooth_bins / 2;
    (0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(half), (i + half + 1).min(n));
            let v = walk[lo..hi].iter().sum::<f64>() / (hi - lo) as f64 - mean;
            v.clamp(-max_db, max_db)
        })
        .collect()
}

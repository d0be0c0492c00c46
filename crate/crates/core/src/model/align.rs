//! Sequence-length alignment between the CNN and embedder branches.
//!
//! All three methods are fixed linear maps over the time axis, so they are
//! represented as an `L_out × L_in` weight table and applied either directly
//! or as a [`SparseMap`] on the autodiff tape.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::tape::SparseMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMethod {
    LinearInterpolation,
    NearestExact,
    AdaptiveAvgPool,
}

impl AlignMethod {
    pub const ALL: [AlignMethod; 3] = [
        AlignMethod::LinearInterpolation,
        AlignMethod::NearestExact,
        AlignMethod::AdaptiveAvgPool,
    ];
}

impl fmt::Display for AlignMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlignMethod::LinearInterpolation => "int-lin",
            AlignMethod::NearestExact => "int-nearest",
            AlignMethod::AdaptiveAvgPool => "avg-pool",
        })
    }
}

impl FromStr for AlignMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "int-lin" | "linear" | "linear-interpolation" => Ok(AlignMethod::LinearInterpolation),
            "int-nearest" | "nearest" | "nearest-exact" => Ok(AlignMethod::NearestExact),
            "avg-pool" | "adaptive-avg-pool" | "adaptive-average-pooling" => {
                Ok(AlignMethod::AdaptiveAvgPool)
            }
            other => Err(Error::Config(format!("unknown alignment method '{other}'"))),
        }
    }
}

/// Input frames and weights contributing to each output frame.
pub fn align_weights(
    len_in: usize,
    len_out: usize,
    method: AlignMethod,
) -> Result<Vec<Vec<(usize, f64)>>> {
    if len_in == 0 || len_out == 0 {
        return Err(Error::Config(format!(
            "alignment lengths must be positive (got {len_in} -> {len_out})"
        )));
    }
    let ratio = len_in as f64 / len_out as f64;
    let rows = (0..len_out)
        .map(|i| match method {
            AlignMethod::LinearInterpolation => {
                if len_in == 1 || len_out == 1 {
                    return vec![(0, 1.0)];
                }
                // endpoint-aligned: output 0 -> input 0, output L_out-1 -> input L_in-1
                let pos = i as f64 * (len_in - 1) as f64 / (len_out - 1) as f64;
                let lo = (pos.floor() as usize).min(len_in - 1);
                let frac = pos - lo as f64;
                if frac == 0.0 || lo + 1 >= len_in {
                    vec![(lo, 1.0)]
                } else {
                    vec![(lo, 1.0 - frac), (lo + 1, frac)]
                }
            }
            AlignMethod::NearestExact => {
                let idx = ((i as f64 + 0.5) * ratio).floor() as usize;
                vec![(idx.min(len_in - 1), 1.0)]
            }
            AlignMethod::AdaptiveAvgPool => {
                let start = (i * len_in) / len_out;
                let end = ((i + 1) * len_in).div_ceil(len_out);
                let w = 1.0 / (end - start) as f64;
                (start..end).map(|j| (j, w)).collect()
            }
        })
        .collect();
    Ok(rows)
}

/// Aligns a `D × L_in` sequence to `D × L_out`.
pub fn align_sequence(
    seq: &Array2<f64>,
    len_out: usize,
    method: AlignMethod,
) -> Result<Array2<f64>> {
    let (dims, len_in) = seq.dim();
    let rows = align_weights(len_in, len_out, method)?;
    Ok(Array2::from_shape_fn((dims, len_out), |(d, i)| {
        rows[i].iter().map(|&(j, w)| w * seq[[d, j]]).sum()
    }))
}

/// Tape map for a time-major `[L_in, D]` tensor.
pub fn align_map(
    len_in: usize,
    len_out: usize,
    dims: usize,
    method: AlignMethod,
) -> Result<SparseMap> {
    let rows = align_weights(len_in, len_out, method)?;
    let mut out = Vec::with_capacity(len_out * dims);
    for row in &rows {
        for d in 0..dims {
            out.push(row.iter().map(|&(j, w)| (j * dims + d, w)).collect());
        }
    }
    Ok(SparseMap::from_rows(vec![len_out, dims], out))
}

//! Real-valued, normalised, patched CSI representation.
//!
//! A trace of complex `N_r×N_t` snapshots becomes a `[T, N_r, N_t, 2]` real
//! tensor, is standardised with one global mean and population standard
//! deviation, and is cut into overlapping windows along time for each of the
//! `2·N_r·N_t` (antenna pair, component) rows.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mimo_channel::{CMatrix, ChannelTrace, ModelTag};

/// Global standardisation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: f64,
    pub sigma: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats { mu: 0.0, sigma: 1.0 };
}

/// `[T, N_r, N_t, 2]` real tensor, last axis = (real, imag).
#[derive(Debug, Clone, PartialEq)]
pub struct CsiTensorReal {
    data: Vec<f64>,
    pub t: usize,
    pub n_r: usize,
    pub n_t: usize,
    pub sample_interval_ms: f64,
    /// Set when the tensor is the output of [`normalize`].
    pub stats: Option<NormStats>,
}

impl CsiTensorReal {
    pub fn from_vec(
        data: Vec<f64>,
        t: usize,
        n_r: usize,
        n_t: usize,
        sample_interval_ms: f64,
    ) -> Result<Self> {
        if data.len() != t * n_r * n_t * 2 {
            return Err(Error::shape(format!(
                "tensor of {} entries cannot have shape [{t}, {n_r}, {n_t}, 2]",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("CSI tensor has non-finite entries".into()));
        }
        Ok(Self {
            data,
            t,
            n_r,
            n_t,
            sample_interval_ms,
            stats: None,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Number of flattened (antenna pair, component) rows, `2·N_r·N_t`.
    pub fn rows(&self) -> usize {
        2 * self.n_r * self.n_t
    }

    pub fn at(&self, t: usize, r: usize, c: usize, k: usize) -> f64 {
        self.data[((t * self.n_r + r) * self.n_t + c) * 2 + k]
    }

    /// Time series of one flattened row (`row = (r·N_t + c)·2 + k`).
    pub fn series(&self, row: usize) -> Vec<f64> {
        (0..self.t).map(|t| self.data[t * self.rows() + row]).collect()
    }
}

/// Split a complex trace into real and imaginary channels.
pub fn complex_to_real(trace: &ChannelTrace) -> Result<CsiTensorReal> {
    let (n_r, n_t) = trace
        .dims()
        .ok_or_else(|| Error::input("cannot convert an empty trace"))?;
    let mut data = Vec::with_capacity(trace.len() * n_r * n_t * 2);
    for real in trace.realizations() {
        for r in 0..n_r {
            for c in 0..n_t {
                let z = real.h[(r, c)];
                data.push(z.re);
                data.push(z.im);
            }
        }
    }
    CsiTensorReal::from_vec(
        data,
        trace.len(),
        n_r,
        n_t,
        trace.sample_interval_ms().unwrap_or(1.0),
    )
}

/// Inverse of [`complex_to_real`]; time indices restart at zero.
pub fn real_to_complex(t: &CsiTensorReal, model_tag: ModelTag) -> Result<ChannelTrace> {
    let mats = (0..t.t)
        .map(|ti| {
            CMatrix::from_fn(t.n_r, t.n_t, |r, c| {
                Complex64::new(t.at(ti, r, c, 0), t.at(ti, r, c, 1))
            })
        })
        .collect();
    ChannelTrace::from_matrices(mats, t.sample_interval_ms, model_tag)
}

/// Standardise with the global mean and population standard deviation.
///
/// A constant tensor has zero spread; it maps to all zeros with stats `(μ, 1)`
/// so that [`denormalize`] still recovers it exactly.
pub fn normalize(t: &CsiTensorReal) -> Result<(CsiTensorReal, NormStats)> {
    let n = t.data.len();
    if n < 2 {
        return Err(Error::input("normalisation needs at least two entries"));
    }
    let mu = t.data.iter().sum::<f64>() / n as f64;
    let var = t.data.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n as f64;
    let sigma = var.sqrt();
    let stats = if sigma > 0.0 && sigma.is_finite() {
        NormStats { mu, sigma }
    } else {
        NormStats { mu, sigma: 1.0 }
    };
    let data = t.data.iter().map(|x| (x - stats.mu) / stats.sigma).collect();
    let out = CsiTensorReal {
        data,
        stats: Some(stats),
        ..t.clone()
    };
    Ok((out, stats))
}

/// Exact affine inverse of [`normalize`].
pub fn denormalize(t: &CsiTensorReal, stats: NormStats) -> CsiTensorReal {
    CsiTensorReal {
        data: t.data.iter().map(|x| x * stats.sigma + stats.mu).collect(),
        stats: None,
        ..t.clone()
    }
}

/// Number of sliding windows, `floor((T - L)/S) + 1`.
pub fn patch_count(t_his: usize, l_patch: usize, stride: usize) -> Result<usize> {
    if l_patch == 0 || stride == 0 {
        return Err(Error::config("patch length and stride must be at least 1"));
    }
    if l_patch > t_his {
        return Err(Error::config(format!(
            "patch length {l_patch} exceeds history length {t_his}"
        )));
    }
    Ok((t_his - l_patch) / stride + 1)
}

/// `[2·N_r·N_t, N_patch, L_patch]` sliding-window patches of a (normalised) tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    data: Vec<f64>,
    pub rows: usize,
    pub n_patch: usize,
    pub l_patch: usize,
    pub stride: usize,
    pub stats: NormStats,
}

impl PatchSet {
    pub fn patch(&self, row: usize, n: usize) -> &[f64] {
        let start = (row * self.n_patch + n) * self.l_patch;
        &self.data[start..start + self.l_patch]
    }

    /// All patches of one row as consecutive `L_patch` slices.
    pub fn row(&self, row: usize) -> &[f64] {
        let len = self.n_patch * self.l_patch;
        &self.data[row * len..(row + 1) * len]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Cut every row's time series into windows of `l_patch` with the given stride.
pub fn patch(t: &CsiTensorReal, l_patch: usize, stride: usize) -> Result<PatchSet> {
    let n_patch = patch_count(t.t, l_patch, stride)?;
    let rows = t.rows();
    let mut data = Vec::with_capacity(rows * n_patch * l_patch);
    for row in 0..rows {
        let series = t.series(row);
        for n in 0..n_patch {
            data.extend_from_slice(&series[n * stride..n * stride + l_patch]);
        }
    }
    Ok(PatchSet {
        data,
        rows,
        n_patch,
        l_patch,
        stride,
        stats: t.stats.unwrap_or(NormStats::IDENTITY),
    })
}

/// Map head output back to complex CSI.
///
/// `flat` is laid out `[T_pre, N_r, N_t, 2]` in normalised units; it is
/// denormalised with `stats` and reshaped into a trace of `t_pre` snapshots.
pub fn to_csi(
    flat: &[f64],
    t_pre: usize,
    n_r: usize,
    n_t: usize,
    stats: NormStats,
    sample_interval_ms: f64,
) -> Result<ChannelTrace> {
    if t_pre == 0 || n_r == 0 || n_t == 0 {
        return Err(Error::config("to_csi dimensions must be positive"));
    }
    let want = t_pre * n_r * n_t * 2;
    if flat.len() != want {
        return Err(Error::shape(format!(
            "prediction has {} entries, expected {want}",
            flat.len()
        )));
    }
    let t = CsiTensorReal::from_vec(flat.to_vec(), t_pre, n_r, n_t, sample_interval_ms)?;
    real_to_complex(&denormalize(&t, stats), ModelTag::FromFile)
}

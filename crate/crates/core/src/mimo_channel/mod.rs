//! MIMO channel simulation.
//!
//! Time-varying Rician channels from a sum-of-sinusoids fading model, SVD
//! precoding and detection over `H = U Σ Vᴴ`, and a uniform quantiser for
//! precoder feedback.

mod feedback;
mod generator;
mod link;
mod svd;

pub use feedback::{feedback_bits_per_component, quantize_feedback};
pub use generator::{generate_trace, ChannelModelParams};
pub use link::{
    detect, effective_channel, precode, precode_with, transmit, Detection, NoiseModel, PrecodeConfig, WEAK_SINGULAR_VALUE,
};
pub use svd::{svd_decompose, SvdTriple};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Complex matrix type used for channel matrices.
pub type CMatrix = DMatrix<Complex64>;

/// Scenario family of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    /// Rician fading with a dominant line-of-sight component (UMi-LOS stand-in).
    LosLike,
    /// Rayleigh fading, no line-of-sight component (UMa-NLOS stand-in).
    NlosLike,
    /// Loaded from an external CSI file.
    FromFile,
}

/// One channel snapshot `H ∈ C^{N_r×N_t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: CMatrix,
    pub t_index: u64,
    pub sample_interval_ms: f64,
}

impl ChannelRealization {
    pub fn n_r(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.h.ncols()
    }
}

/// Ordered sequence of channel snapshots sharing antenna dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    realizations: Vec<ChannelRealization>,
    pub model_tag: ModelTag,
}

impl ChannelTrace {
    /// Build a trace, checking the ordering and shape invariants.
    pub fn new(realizations: Vec<ChannelRealization>, model_tag: ModelTag) -> Result<Self> {
        if let Some(first) = realizations.first() {
            let (n_r, n_t) = first.h.shape();
            if n_r == 0 || n_t == 0 {
                return Err(Error::config("channel matrices need at least one antenna"));
            }
            for (i, w) in realizations.windows(2).enumerate() {
                if w[1].t_index <= w[0].t_index {
                    return Err(Error::input(format!(
                        "t_index must be strictly increasing (violated at position {})",
                        i + 1
                    )));
                }
            }
            for r in &realizations {
                if r.h.shape() != (n_r, n_t) {
                    return Err(Error::shape(format!(
                        "realization {} has shape {:?}, expected {:?}",
                        r.t_index,
                        r.h.shape(),
                        (n_r, n_t)
                    )));
                }
                if r.h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "realization {} has non-finite entries",
                        r.t_index
                    )));
                }
            }
        }
        Ok(Self {
            realizations,
            model_tag,
        })
    }

    /// Build a trace from consecutive matrices starting at `t_index = 0`.
    pub fn from_matrices(
        mats: Vec<CMatrix>,
        sample_interval_ms: f64,
        model_tag: ModelTag,
    ) -> Result<Self> {
        let realizations = mats
            .into_iter()
            .enumerate()
            .map(|(i, h)| ChannelRealization {
                h,
                t_index: i as u64,
                sample_interval_ms,
            })
            .collect();
        Self::new(realizations, model_tag)
    }

    pub fn realizations(&self) -> &[ChannelRealization] {
        &self.realizations
    }

    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }

    /// Antenna dimensions `(N_r, N_t)`, or `None` for an empty trace.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.realizations.first().map(|r| r.h.shape())
    }

    pub fn sample_interval_ms(&self) -> Option<f64> {
        self.realizations.first().map(|r| r.sample_interval_ms)
    }

    pub fn get(&self, i: usize) -> Option<&CMatrix> {
        self.realizations.get(i).map(|r| &r.h)
    }

    /// Sub-trace over `range`, keeping the original time indices.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.start >= range.end {
            return Err(Error::input(format!(
                "slice {:?} out of bounds for trace of length {}",
                range,
                self.len()
            )));
        }
        Ok(Self {
            realizations: self.realizations[range].to_vec(),
            model_tag: self.model_tag,
        })
    }

    /// Squared Frobenius norm summed over all snapshots.
    pub fn energy(&self) -> f64 {
        self.realizations
            .iter()
            .map(|r| r.h.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }
}

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CMatrix, ChannelTrace, ModelTag};
use crate::error::{Error, Result};
use crate::seed;

/// Parameters of the Rician sum-of-sinusoids channel generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModelParams {
    pub model_tag: ModelTag,
    pub n_r: usize,
    pub n_t: usize,
    /// Maximum Doppler frequency in Hz.
    pub doppler_hz: f64,
    /// Number of scattered paths per antenna pair.
    pub n_paths: usize,
    /// Rician K-factor in dB; `inf` gives a pure line-of-sight channel.
    /// Ignored (K = 0) for `NlosLike`.
    pub k_factor_db: f64,
    pub sample_interval_ms: f64,
    /// Departure angle of the line-of-sight ray; drawn from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub los_aod_rad: Option<f64>,
}

impl Default for ChannelModelParams {
    fn default() -> Self {
        Self {
            model_tag: ModelTag::LosLike,
            n_r: 16,
            n_t: 16,
            doppler_hz: 50.0,
            n_paths: 16,
            k_factor_db: 10.0,
            sample_interval_ms: 1.0,
            los_aod_rad: None,
        }
    }
}

impl ChannelModelParams {
    /// Linear Rician K-factor (`∞` for pure line of sight).
    pub fn k_linear(&self) -> f64 {
        match self.model_tag {
            ModelTag::NlosLike => 0.0,
            _ => 10f64.powf(self.k_factor_db / 10.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 || self.n_t == 0 {
            return Err(Error::config("antenna counts must be at least 1"));
        }
        if !(self.sample_interval_ms.is_finite() && self.sample_interval_ms > 0.0) {
            return Err(Error::config("sample_interval_ms must be positive"));
        }
        if !(self.doppler_hz.is_finite() && self.doppler_hz >= 0.0) {
            return Err(Error::config("doppler_hz must be finite and non-negative"));
        }
        if self.k_factor_db.is_nan() {
            return Err(Error::config("k_factor_db must not be NaN"));
        }
        if self.model_tag == ModelTag::FromFile {
            return Err(Error::config("the generator cannot produce from_file traces"));
        }
        if self.k_linear().is_finite() && self.n_paths == 0 {
            return Err(Error::config("n_paths must be at least 1 when K is finite"));
        }
        Ok(())
    }
}

struct Scatterer {
    freq_hz: f64,
    phase: f64,
}

/// Generate `length` consecutive snapshots of a Rician sum-of-sinusoids channel.
///
/// The line-of-sight part is a rank-one uniform-linear-array response rotating
/// at a Doppler shift set by the direction of motion; every antenna pair gets
/// its own set of `n_paths` scattered sinusoids with random arrival angles
/// and phases. Both parts have unit per-entry power so the composite entry
/// power is one for any K.
pub fn generate_trace(params: &ChannelModelParams, seed: u64, length: usize) -> Result<ChannelTrace> {
    params.validate()?;
    if length == 0 {
        return Err(Error::config("trace length must be positive"));
    }
    let (n_r, n_t) = (params.n_r, params.n_t);
    let k = params.k_linear();
    let (los_amp, nlos_amp) = if k.is_infinite() {
        (1.0, 0.0)
    } else {
        ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt())
    };

    let mut rng = seed::rng(seed, &[seed::label("channel-trace")]);
    let aod = params
        .los_aod_rad
        .unwrap_or_else(|| rng.random_range(-PI / 2.0..PI / 2.0));
    let aoa: f64 = rng.random_range(-PI / 2.0..PI / 2.0);
    let los_phase: f64 = rng.random_range(0.0..2.0 * PI);
    let motion: f64 = rng.random_range(0.0..2.0 * PI);
    let los_freq = params.doppler_hz * motion.cos();

    let los = CMatrix::from_fn(n_r, n_t, |r, c| {
        Complex64::from_polar(
            1.0,
            PI * (r as f64) * aoa.sin() - PI * (c as f64) * aod.sin() + los_phase,
        )
    });

    let n_paths = if nlos_amp > 0.0 { params.n_paths } else { 0 };
    let scatter: Vec<Vec<Scatterer>> = (0..n_r * n_t)
        .map(|_| {
            (0..n_paths)
                .map(|_| {
                    let alpha: f64 = rng.random_range(0.0..2.0 * PI);
                    let phase: f64 = rng.random_range(0.0..2.0 * PI);
                    Scatterer {
                        freq_hz: params.doppler_hz * alpha.cos(),
                        phase,
                    }
                })
                .collect()
        })
        .collect();
    let path_norm = if n_paths > 0 {
        1.0 / (n_paths as f64).sqrt()
    } else {
        0.0
    };

    let dt = params.sample_interval_ms / 1000.0;
    let mats = (0..length)
        .map(|ti| {
            let t = ti as f64 * dt;
            let rot = Complex64::from_polar(los_amp, 2.0 * PI * los_freq * t);
            CMatrix::from_fn(n_r, n_t, |r, c| {
                let mut h = los[(r, c)] * rot;
                if n_paths > 0 {
                    let s: Complex64 = scatter[r * n_t + c]
                        .iter()
                        .map(|p| Complex64::from_polar(1.0, 2.0 * PI * p.freq_hz * t + p.phase))
                        .sum();
                    h += s * (nlos_amp * path_norm);
                }
                h
            })
        })
        .collect();
    ChannelTrace::from_matrices(mats, params.sample_interval_ms, params.model_tag)
}

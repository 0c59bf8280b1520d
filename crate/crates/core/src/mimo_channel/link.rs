use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CMatrix, SvdTriple};
use crate::error::{Error, Result};
use crate::seed;

/// Singular values below this are treated as zero by the equalising detector.
pub const WEAK_SINGULAR_VALUE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecodeConfig {
    /// Number of spatial streams.
    pub d: usize,
    /// Divide detected streams by their singular values.
    #[serde(default)]
    pub equalize: bool,
}

impl PrecodeConfig {
    pub fn validate_for(&self, n_r: usize, n_t: usize) -> Result<()> {
        if self.d == 0 || self.d > n_r.min(n_t) {
            return Err(Error::config(format!(
                "stream count d = {} must lie in 1..={}",
                self.d,
                n_r.min(n_t)
            )));
        }
        Ok(())
    }
}

/// Additive white Gaussian noise at a given SNR.
///
/// The noise variance per receive antenna is
/// `σ² = reference_power / (N_r · 10^(snr_db/10))`, where `reference_power`
/// is the expected transmit energy `E‖x‖²` (one per unit-power stream).
/// `snr_db = +∞` disables noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub snr_db: f64,
    pub rng_seed: u64,
    pub reference_power: f64,
}

impl NoiseModel {
    /// Noise for `d` unit-power streams.
    pub fn for_streams(snr_db: f64, rng_seed: u64, d: usize) -> Self {
        Self {
            snr_db,
            rng_seed,
            reference_power: d as f64,
        }
    }

    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
            rng_seed: 0,
            reference_power: 1.0,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.snr_db == f64::INFINITY
    }

    /// Complex noise variance per receive antenna.
    pub fn variance(&self, n_r: usize) -> f64 {
        if self.is_noiseless() {
            0.0
        } else {
            self.reference_power / (n_r as f64 * 10f64.powf(self.snr_db / 10.0))
        }
    }

    /// Draw an `n_r`-length circularly-symmetric Gaussian noise vector.
    pub fn draw(&self, n_r: usize) -> DVector<Complex64> {
        let var = self.variance(n_r);
        if var == 0.0 {
            return DVector::from_element(n_r, Complex64::new(0.0, 0.0));
        }
        let std = (var / 2.0).sqrt();
        let mut rng = seed::rng(self.rng_seed, &[seed::label("awgn")]);
        DVector::from_fn(n_r, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * std, im * std)
        })
    }
}

/// `x = V_d z`.
pub fn precode(z: &DVector<Complex64>, triple: &SvdTriple, cfg: &PrecodeConfig) -> Result<DVector<Complex64>> {
    cfg.validate_for(triple.n_r(), triple.n_t())?;
    if z.len() != cfg.d {
        return Err(Error::shape(format!(
            "precoder expects {} symbols, got {}",
            cfg.d,
            z.len()
        )));
    }
    Ok(triple.v.columns(0, cfg.d) * z)
}

/// Precode with an explicit (for example quantised) precoder matrix.
pub fn precode_with(z: &DVector<Complex64>, v_d: &CMatrix) -> Result<DVector<Complex64>> {
    if z.len() != v_d.ncols() {
        return Err(Error::shape(format!(
            "precoder has {} columns, got {} symbols",
            v_d.ncols(),
            z.len()
        )));
    }
    Ok(v_d * z)
}

/// `y = H x + n`.
pub fn transmit(x: &DVector<Complex64>, h: &CMatrix, noise: &NoiseModel) -> Result<DVector<Complex64>> {
    if x.len() != h.ncols() {
        return Err(Error::shape(format!(
            "channel has {} transmit antennas, signal has {} entries",
            h.ncols(),
            x.len()
        )));
    }
    let mut y = h * x;
    if !noise.is_noiseless() {
        y += noise.draw(h.nrows());
    }
    Ok(y)
}

/// Output of the SVD detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub streams: DVector<Complex64>,
    /// Streams zeroed because their singular value was below
    /// [`WEAK_SINGULAR_VALUE`] (equalising mode only).
    pub weak_streams: Vec<usize>,
}

/// First `d` entries of `Uᴴ y`, optionally divided by the singular values.
pub fn detect(y: &DVector<Complex64>, triple: &SvdTriple, cfg: &PrecodeConfig) -> Result<Detection> {
    cfg.validate_for(triple.n_r(), triple.n_t())?;
    if y.len() != triple.n_r() {
        return Err(Error::shape(format!(
            "detector expects {} receive samples, got {}",
            triple.n_r(),
            y.len()
        )));
    }
    let mut streams = triple.u.columns(0, cfg.d).adjoint() * y;
    let mut weak_streams = Vec::new();
    if cfg.equalize {
        for i in 0..cfg.d {
            let s = triple.sigma[i];
            if s < WEAK_SINGULAR_VALUE {
                streams[i] = Complex64::new(0.0, 0.0);
                weak_streams.push(i);
            } else {
                streams[i] /= s;
            }
        }
    }
    Ok(Detection {
        streams,
        weak_streams,
    })
}

/// The `d×d` complex map from precoded symbols to detector output,
/// `D U_dᴴ H P` where `P` is the precoder and `D` the optional equaliser.
pub fn effective_channel(h: &CMatrix, precoder: &CMatrix, triple: &SvdTriple, equalize: bool) -> CMatrix {
    let d = precoder.ncols();
    let mut m = triple.u.columns(0, d).adjoint() * h * precoder;
    if equalize {
        for i in 0..d {
            let s = triple.sigma[i];
            let scale = if s < WEAK_SINGULAR_VALUE { 0.0 } else { 1.0 / s };
            m.row_mut(i).scale_mut(scale);
        }
    }
    m
}

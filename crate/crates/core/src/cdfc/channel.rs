use nalgebra::DVector;
use num_complex::Complex64;

use super::codec::Feature;
use crate::mimo_channel::{
    detect, effective_channel, precode_with, quantize_feedback, svd_decompose, transmit, CMatrix, NoiseModel,
    PrecodeConfig, SvdTriple,
};
use crate::{seed, Error, Result};

/// One link instance: the true channel and the CSI both ends act on.
///
/// The precoder is `V̂_d` from the SVD of the CSI matrix (optionally
/// quantised for feedback) and detection uses `Û_d` from the same SVD.
#[derive(Debug, Clone)]
pub struct ChannelContext {
    pub h: CMatrix,
    pub csi: SvdTriple,
    pub precoder: CMatrix,
    pub link: PrecodeConfig,
    effective: CMatrix,
}

impl ChannelContext {
    pub fn new(h: CMatrix, h_csi: &CMatrix, link: PrecodeConfig, feedback_bits: Option<u32>) -> Result<Self> {
        if h.shape() != h_csi.shape() {
            return Err(Error::shape(format!(
                "true channel {:?} and CSI {:?} differ in shape",
                h.shape(),
                h_csi.shape()
            )));
        }
        link.validate_for(h.nrows(), h.ncols())?;
        let csi = svd_decompose(h_csi)?;
        let v_d = csi.v_d(link.d);
        let precoder = match feedback_bits {
            Some(bits) => quantize_feedback(&v_d, bits)?,
            None => v_d,
        };
        let effective = effective_channel(&h, &precoder, &csi, link.equalize);
        Ok(Self {
            h,
            csi,
            precoder,
            link,
            effective,
        })
    }

    /// Perfect CSI at both ends.
    pub fn ideal(h: CMatrix, link: PrecodeConfig) -> Result<Self> {
        let csi = h.clone();
        Self::new(h, &csi, link, None)
    }

    /// The `d×d` map from precoded symbols to detector output.
    pub fn effective(&self) -> &CMatrix {
        &self.effective
    }

    /// Channel uses needed for `n_feat` real features.
    pub fn channel_uses(&self, n_feat: usize) -> usize {
        (n_feat / 2).div_ceil(self.link.d)
    }
}

/// Scale `z` to energy `power`; returns the scaled vector and `‖z‖`.
pub fn power_normalize(z: &[f64], power: f64) -> Result<(Feature, f64)> {
    let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Numeric(format!("cannot normalise a vector of norm {norm}")));
    }
    let c = power.sqrt() / norm;
    Ok((z.iter().map(|x| x * c).collect(), norm))
}

/// Backward pass of [`power_normalize`] given its output `x` and input norm.
pub fn power_normalize_backward(x: &[f64], norm: f64, power: f64, dx: &[f64]) -> Feature {
    let proj: f64 = x.iter().zip(dx).map(|(a, b)| a * b).sum::<f64>() / power;
    let c = power.sqrt() / norm;
    x.iter().zip(dx).map(|(a, g)| c * (g - a * proj)).collect()
}

fn chunk(features: &[f64], d: usize, use_index: usize) -> DVector<Complex64> {
    DVector::from_fn(d, |i, _| {
        let k = use_index * d + i;
        if 2 * k + 1 < features.len() {
            Complex64::new(features[2 * k], features[2 * k + 1])
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Send real features over the link: pairs become complex symbols, `d`
/// symbols per channel use, each use precoded, transmitted over the true
/// channel and detected. Noise for use `j` is seeded from `(noise_seed, j)`.
pub fn transmit_features(z: &[f64], ctx: &ChannelContext, snr_db: f64, noise_seed: u64) -> Result<Feature> {
    if z.len() % 2 != 0 {
        return Err(Error::shape("feature length must be even"));
    }
    let d = ctx.link.d;
    let mut out = vec![0.0; z.len()];
    for j in 0..ctx.channel_uses(z.len()) {
        let s = chunk(z, d, j);
        let x = precode_with(&s, &ctx.precoder)?;
        let noise = if snr_db == f64::INFINITY {
            NoiseModel::noiseless()
        } else {
            NoiseModel::for_streams(snr_db, seed::derive(noise_seed, &[j as u64]), d)
        };
        let y = transmit(&x, &ctx.h, &noise)?;
        let det = detect(&y, &ctx.csi, &ctx.link)?;
        for i in 0..d {
            let k = j * d + i;
            if 2 * k + 1 < out.len() {
                out[2 * k] = det.streams[i].re;
                out[2 * k + 1] = det.streams[i].im;
            }
        }
    }
    Ok(out)
}

/// `dL/dz` from `dL/dŷ`: each channel use is linear, `ŷ = M s + ñ`, so the
/// complex gradient is `Mᴴ g`.
pub fn transmit_backward(dy: &[f64], ctx: &ChannelContext) -> Feature {
    let d = ctx.link.d;
    let mh = ctx.effective.adjoint();
    let mut dz = vec![0.0; dy.len()];
    for j in 0..ctx.channel_uses(dy.len()) {
        let g = chunk(dy, d, j);
        let ds = &mh * g;
        for i in 0..d {
            let k = j * d + i;
            if 2 * k + 1 < dz.len() {
                dz[2 * k] = ds[i].re;
                dz[2 * k + 1] = ds[i].im;
            }
        }
    }
    dz
}

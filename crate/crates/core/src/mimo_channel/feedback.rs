use num_complex::Complex64;

use super::CMatrix;
use crate::error::{Error, Result};

/// Bits spent on each real component: `floor(bits_total / (2·N_t·d))`, at least one.
pub fn feedback_bits_per_component(bits_total: u32, n_t: usize, d: usize) -> u32 {
    let comps = (2 * n_t * d).max(1) as u64;
    ((bits_total as u64 / comps) as u32).max(1)
}

/// Quantise a precoder matrix for feedback.
///
/// Real and imaginary parts are scaled by the matrix-wide max-abs value into
/// `[-1, 1]` and rounded to a dyadic grid. With `b` bits the grid is
/// `{-1 + k·2^(2-b)}` (`2^(b-1) + 1` points), so every grid is a subset of the
/// next finer one and the reconstruction error can only shrink as the budget
/// grows. One bit per component reduces to a sign quantiser.
pub fn quantize_feedback(v_d: &CMatrix, bits_total: u32) -> Result<CMatrix> {
    if bits_total == 0 {
        return Err(Error::config("feedback bit budget must be positive"));
    }
    let (n_t, d) = v_d.shape();
    let bits = feedback_bits_per_component(bits_total, n_t, d).min(52);
    let scale = v_d
        .iter()
        .flat_map(|z| [z.re.abs(), z.im.abs()])
        .fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Ok(v_d.clone());
    }
    let intervals = (1u64 << (bits - 1)) as f64;
    let step = 2.0 / intervals;
    let q = |x: f64| -> f64 {
        let k = ((x / scale + 1.0) / step).round().clamp(0.0, intervals);
        (-1.0 + k * step) * scale
    };
    Ok(v_d.map(|z| Complex64::new(q(z.re), q(z.im))))
}

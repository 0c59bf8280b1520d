//! Dense building blocks with hand-written backward passes.

use nalgebra::DMatrix;
use rand::Rng;

/// Real matrix type used by all learned components.
pub type Matrix = DMatrix<f64>;

/// Uniform `±1/√fan_in` initialisation.
pub fn init_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

/// Add a `1×n` row vector to every row.
pub fn add_row(m: &Matrix, b: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        row += b.row(0);
    }
    out
}

/// Column sums as a `1×n` row vector.
pub fn col_sum(m: &Matrix) -> Matrix {
    Matrix::from_fn(1, m.ncols(), |_, c| m.column(c).sum())
}

/// Numerically stable softmax along each row.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        row /= sum;
    }
    out
}

/// Backward of a row softmax: given `p = softmax(s)` and `dL/dp`, return `dL/ds`.
pub fn softmax_rows_backward(p: &Matrix, dp: &Matrix) -> Matrix {
    let mut ds = p.component_mul(dp);
    for (i, mut row) in ds.row_iter_mut().enumerate() {
        let dot: f64 = p.row(i).dot(&dp.row(i));
        for (j, x) in row.iter_mut().enumerate() {
            *x -= p[(i, j)] * dot;
        }
    }
    ds
}

/// Fixed sinusoidal position encoding `[len, d]`.
pub fn positional_encoding(len: usize, d: usize) -> Matrix {
    Matrix::from_fn(len, d, |pos, i| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Cached intermediates of a layer norm.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

/// Row-wise layer norm with gain `g` and bias `b` (both `1×d`).
pub fn layer_norm(x: &Matrix, g: &Matrix, b: &Matrix) -> (Matrix, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(x.nrows());
    for mut row in xhat.row_iter_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * r;
        }
        rstd.push(r);
    }
    let mut y = xhat.clone();
    for mut row in y.row_iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v * g[(0, j)] + b[(0, j)];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

/// Returns `(dx, dg, db)`.
pub fn layer_norm_backward(dy: &Matrix, g: &Matrix, cache: &LayerNormCache) -> (Matrix, Matrix, Matrix) {
    let d = dy.ncols() as f64;
    let dg = col_sum(&dy.component_mul(&cache.xhat));
    let db = col_sum(dy);
    let mut dx = Matrix::zeros(dy.nrows(), dy.ncols());
    for i in 0..dy.nrows() {
        let dxhat: Vec<f64> = (0..dy.ncols()).map(|j| dy[(i, j)] * g[(0, j)]).collect();
        let mean_dxhat = dxhat.iter().sum::<f64>() / d;
        let mean_dxhat_xhat = dxhat
            .iter()
            .enumerate()
            .map(|(j, v)| v * cache.xhat[(i, j)])
            .sum::<f64>()
            / d;
        for j in 0..dy.ncols() {
            dx[(i, j)] = cache.rstd[i]
                * (dxhat[j] - mean_dxhat - cache.xhat[(i, j)] * mean_dxhat_xhat);
        }
    }
    (dx, dg, db)
}

/// A collection of learnable matrices in a fixed declaration order.
///
/// Gradient containers reuse the parameter type, so updates zip the two
/// flattened views.
pub trait Params {
    fn tensors(&self) -> Vec<&Matrix>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    /// `self += scale · other`.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        for (p, g) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *p += g * scale;
        }
    }

    fn fill_zero(&mut self) {
        for p in self.tensors_mut() {
            p.fill(0.0);
        }
    }

    fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|m| m.norm_squared()).sum()
    }

    /// Copy of `self` with every entry zeroed.
    fn zeros_like(&self) -> Self
    where
        Self: Sized + Clone,
    {
        let mut z = self.clone();
        z.fill_zero();
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_are_stochastic_and_shift_invariant() {
        let m = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 1000.0]);
        let p = softmax_rows(&m);
        for row in p.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let shifted = softmax_rows(&m.add_scalar(7.5));
        assert!((p - shifted).abs().max() < 1e-12);
    }

    #[test]
    fn layer_norm_gradient_matches_finite_difference() {
        let mut rng = crate::seed::rng(4, &[]);
        let x = init_uniform(3, 5, 1, &mut rng);
        let g = init_uniform(1, 5, 1, &mut rng);
        let b = init_uniform(1, 5, 1, &mut rng);
        let w = init_uniform(3, 5, 1, &mut rng);
        let loss = |x: &Matrix| layer_norm(x, &g, &b).0.component_mul(&w).sum();
        let (_, cache) = layer_norm(&x, &g, &b);
        let (dx, _, _) = layer_norm_backward(&w, &g, &cache);
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7, "{fd} vs {}", dx[i]);
        }
    }
}

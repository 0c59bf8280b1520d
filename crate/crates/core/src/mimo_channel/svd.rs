use nalgebra::{DMatrix, SVD};
use num_complex::Complex64;

use super::CMatrix;
use crate::error::{Error, Result};

/// Full singular value decomposition `H = U Σ Vᴴ`.
///
/// `u` is `N_r×N_r` and `v` is `N_t×N_t`, both unitary. `sigma` holds the
/// `min(N_r, N_t)` singular values in non-increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdTriple {
    pub u: CMatrix,
    pub sigma: Vec<f64>,
    pub v: CMatrix,
}

impl SvdTriple {
    pub fn n_r(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.v.nrows()
    }

    /// The `N_r×N_t` real diagonal matrix Σ.
    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.n_r(), self.n_t());
        for (i, &x) in self.sigma.iter().enumerate() {
            s[(i, i)] = x;
        }
        s
    }

    /// `U Σ Vᴴ`.
    pub fn reconstruct(&self) -> CMatrix {
        let s = self.sigma_matrix().map(|x| Complex64::new(x, 0.0));
        &self.u * s * self.v.adjoint()
    }

    /// First `d` columns of V.
    pub fn v_d(&self, d: usize) -> CMatrix {
        self.v.columns(0, d).into_owned()
    }
}

/// Decompose a complex channel matrix.
pub fn svd_decompose(h: &CMatrix) -> Result<SvdTriple> {
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numeric("SVD input has non-finite entries".into()));
    }
    let (n_r, n_t) = h.shape();
    if n_r == 0 || n_t == 0 {
        return Err(Error::shape("SVD input must be non-empty"));
    }
    let svd = SVD::try_new(h.clone(), true, true, 1e-15, 0)
        .ok_or_else(|| Error::Numeric("SVD failed to converge".into()))?;
    let u_thin = svd.u.expect("requested U");
    let v_thin = svd.v_t.expect("requested Vᴴ").adjoint();
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    Ok(SvdTriple {
        u: complete_unitary(u_thin),
        sigma,
        v: complete_unitary(v_thin),
    })
}

/// Extend orthonormal columns to a full unitary basis with modified Gram-Schmidt
/// against the canonical basis vectors.
fn complete_unitary(q: CMatrix) -> CMatrix {
    let n = q.nrows();
    if q.ncols() == n {
        return q;
    }
    let mut cols: Vec<nalgebra::DVector<Complex64>> =
        q.column_iter().map(|c| c.into_owned()).collect();
    for e in 0..n {
        if cols.len() == n {
            break;
        }
        let mut v = nalgebra::DVector::from_element(n, Complex64::new(0.0, 0.0));
        v[e] = Complex64::new(1.0, 0.0);
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dotc(&v);
                v -= c * proj;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            cols.push(v / Complex64::new(norm, 0.0));
        }
    }
    CMatrix::from_columns(&cols)
}

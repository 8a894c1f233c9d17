//! Thin wrappers over faer's dense decompositions.

use faer::{Mat, Side};
use num_complex::Complex64 as c64;

use crate::error::{Error, Result};

/// Eigenvalues (ascending) and orthonormal eigenvectors of a real symmetric
/// matrix.
pub fn eigh_real(m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinAlg(format!("symmetric eigendecomposition: {e:?}")))?;
    let s = evd.S().column_vector();
    let values: Vec<f64> = (0..s.nrows()).map(|i| s[i]).collect();
    Ok((values, evd.U().to_owned()))
}

/// Eigenvalues (ascending) of a Hermitian matrix.
pub fn eigvalsh_complex(m: &Mat<c64>) -> Result<Vec<f64>> {
    m.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::LinAlg(format!("hermitian eigenvalues: {e:?}")))
}

pub fn to_complex(m: &Mat<f64>) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| c64::new(m[(i, j)], 0.0))
}

/// `(m + m†)/2`.
pub fn hermitize(m: &mut Mat<c64>) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
}

pub fn max_abs_diff(a: &Mat<c64>, b: &Mat<c64>) -> f64 {
    let mut d: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            d = d.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    d
}

pub fn frobenius_diff(a: &Mat<c64>, b: &Mat<c64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += (a[(i, j)] - b[(i, j)]).norm_sqr();
        }
    }
    s.sqrt()
}

/// Trace norm `½‖a − b‖₁` of a Hermitian difference.
pub fn trace_distance(a: &Mat<c64>, b: &Mat<c64>) -> Result<f64> {
    let mut d = a - b;
    hermitize(&mut d);
    Ok(0.5 * eigvalsh_complex(&d)?.iter().map(|x| x.abs()).sum::<f64>())
}

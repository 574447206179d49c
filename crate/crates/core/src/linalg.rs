//! Small dense helpers shared by the estimators.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{CMat, Error, RMat, Result};

/// Draws one circularly-symmetric CN(0, var) sample; each of the real and
/// imaginary parts carries var/2.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Fills an `rows x cols` matrix with i.i.d. CN(0, var) entries, column by column.
pub fn complex_normal_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    var: f64,
) -> CMat {
    let mut out = CMat::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            out[(r, c)] = complex_normal(rng, var);
        }
    }
    out
}

pub fn abs2(m: &CMat) -> RMat {
    m.map(|z| z.norm_sqr())
}

pub fn frobenius_sqr(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Lifts a real matrix to complex so it can join complex products.
pub fn to_complex(m: &RMat) -> CMat {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Keeps only the columns in `cols`, in order.
pub fn select_columns(m: &CMat, cols: &[usize]) -> CMat {
    CMat::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

/// Keeps only the rows in `rows`, in order.
pub fn select_rows(m: &CMat, rows: &[usize]) -> CMat {
    CMat::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

/// Condition number of a Hermitian positive semidefinite matrix from its
/// eigenvalues. Returns infinity when the smallest eigenvalue is not positive.
pub fn hermitian_condition(m: &CMat) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `a x = b` for Hermitian positive definite `a`.
pub fn hermitian_solve(a: &CMat, b: &CMat) -> Result<CMat> {
    let chol = a.clone().cholesky().ok_or(Error::SingularPilotGram {
        condition: f64::INFINITY,
    })?;
    Ok(chol.solve(b))
}

pub fn identity(n: usize) -> CMat {
    DMatrix::identity(n, n)
}

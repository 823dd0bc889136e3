//! Dense linear-algebra helpers shared by the posterior engine.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Jitter used on the first retry and for every sampling factorization.
pub const BASE_JITTER: f64 = 1e-8;
/// Largest diagonal jitter tried before a factorization is reported as failed.
pub const MAX_JITTER: f64 = 1e-4;

/// A Cholesky factor together with the diagonal jitter that made it succeed.
#[derive(Clone, Debug)]
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factor {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Cholesky factorization of a symmetric matrix.
///
/// With `initial_jitter == 0` the matrix is first factored as given; on
/// failure the diagonal is loaded with 1e-8, escalating by x10 up to 1e-4.
pub fn cholesky_with_jitter(a: &DMatrix<f64>, initial_jitter: f64) -> Result<Factor> {
    if !a.is_square() {
        return Err(Error::dims("cholesky", a.nrows(), a.ncols()));
    }
    let mut jitter = initial_jitter;
    loop {
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok(Factor { chol, jitter });
        }
        jitter = if jitter == 0.0 { BASE_JITTER } else { jitter * 10.0 };
        if jitter > MAX_JITTER * 1.000_001 {
            return Err(Error::Numerical(format!(
                "matrix of order {} is not positive definite after jitter {:e}; {}",
                a.nrows(),
                MAX_JITTER,
                diagnostics(a)
            )));
        }
    }
}

/// Condition diagnostics attached to factorization failures.
pub fn diagnostics(a: &DMatrix<f64>) -> String {
    if a.nrows() == 0 {
        return "empty matrix".into();
    }
    let sym = symmetrize(a);
    let eig = sym.symmetric_eigenvalues();
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let asym = (a - a.transpose()).amax();
    format!(
        "eigenvalue range [{min:e}, {max:e}], condition estimate {:e}, max asymmetry {asym:e}",
        if min > 0.0 { max / min } else { f64::INFINITY }
    )
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Symmetric inverse via Cholesky; fails for indefinite or singular input.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let f = cholesky_with_jitter(a, 0.0)?;
    Ok(symmetrize(&f.chol.inverse()))
}

/// One joint draw from `N(mean, cov)` using a jittered Cholesky factor.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = mean.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::dims("sample_mvn", n, cov.nrows()));
    }
    let z = standard_normals(n, rng);
    if n == 0 {
        return Ok(mean.clone());
    }
    let f = cholesky_with_jitter(&symmetrize(cov), BASE_JITTER)?;
    Ok(mean + f.lower() * z)
}

pub fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// `max |a - b|` scaled by `max(1, |b|)` elementwise.
pub fn mixed_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_factorization_uses_no_jitter() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = cholesky_with_jitter(&a, 0.0).unwrap();
        assert_eq!(f.jitter, 0.0);
        let l = f.lower();
        assert!((&l * l.transpose() - &a).amax() < 1e-14);
    }

    #[test]
    fn singular_matrix_escalates_jitter() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = cholesky_with_jitter(&a, 0.0).unwrap();
        assert!(f.jitter >= BASE_JITTER);
    }

    #[test]
    fn indefinite_matrix_reports_diagnostics() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let err = cholesky_with_jitter(&a, 0.0).unwrap_err().to_string();
        assert!(err.contains("eigenvalue range"), "{err}");
    }
}

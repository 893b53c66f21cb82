//! Dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a covariance is treated as
/// singular.
const RCOND_FLOOR: f64 = 1e-12;

pub fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, d, |i, j| rows[i][j])
}

pub fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows.first().map_or(0, Vec::len);
    let mut m = vec![0.0; d];
    for r in rows {
        for (acc, x) in m.iter_mut().zip(r) {
            *acc += x;
        }
    }
    let n = rows.len() as f64;
    m.iter_mut().for_each(|x| *x /= n);
    m
}

/// Sample covariance with Bessel's correction.
pub fn sample_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let mean = column_means(rows);
    let d = mean.len();
    let mut c = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in 0..d {
                c[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    c / (rows.len() as f64 - 1.0)
}

/// A validated symmetric positive-definite covariance with cached inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl Covariance {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Shape("covariance must be a non-empty square matrix".into()));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        if (&matrix - matrix.transpose()).amax() > 1e-10 * scale {
            return Err(Error::SingularCovariance("matrix is not symmetric".into()));
        }
        let eig = matrix.clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(max > 0.0) || min <= RCOND_FLOOR * max {
            return Err(Error::SingularCovariance(format!(
                "eigenvalues range [{min:e}, {max:e}]"
            )));
        }
        let inverse = matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularCovariance("inversion failed".into()))?;
        Ok(Covariance { matrix, inverse })
    }

    pub fn estimate(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InsufficientData(
                "covariance needs at least 2 rows".into(),
            ));
        }
        Self::new(sample_covariance(rows))
    }

    pub fn identity(dim: usize) -> Self {
        Covariance {
            matrix: DMatrix::identity(dim, dim),
            inverse: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `dᵀ S⁻¹ d`.
    pub fn quad_form(&self, diff: &[f64]) -> f64 {
        let v = DVector::from_column_slice(diff);
        (v.transpose() * &self.inverse * &v)[(0, 0)]
    }
}

/// Least-squares solution of `A x ≈ b` via SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-12).ok()
}

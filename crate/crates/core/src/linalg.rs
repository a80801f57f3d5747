//! Dense linear-algebra helpers over faer.

use crate::error::{Error, Result};
use faer::linalg::solvers::DenseSolveCore;
use faer::prelude::*;
use faer::{Mat, Side};

/// Diagonal jitter added once before every covariance factorization.
pub const COVARIANCE_JITTER: f64 = 1e-10;

/// Cholesky factor of `cov + jitter·I`; failure is reported, never patched.
pub fn cholesky_jittered(cov: &Mat<f64>) -> Result<Mat<f64>> {
    let n = cov.nrows();
    let jittered = Mat::from_fn(n, n, |i, j| {
        cov[(i, j)] + if i == j { COVARIANCE_JITTER } else { 0.0 }
    });
    let llt = jittered
        .llt(Side::Lower)
        .map_err(|e| Error::Factorization(format!("{n}x{n} covariance not positive definite after jitter: {e:?}")))?;
    Ok(llt.L().to_owned())
}

/// Lower-triangular matrix stored row by row (row i holds i+1 entries).
#[derive(Debug, Clone)]
pub struct PackedLower {
    n: usize,
    data: Vec<f64>,
}

impl PackedLower {
    pub fn from_lower(l: &Mat<f64>) -> Self {
        let n = l.nrows();
        let mut data = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                data.push(l[(i, j)]);
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.data[start..start + i + 1]
    }

    /// Computes L·z for a batch of vectors stored interleaved: `z[j * batch + c]`
    /// is entry j of vector c. Each output is accumulated in the same order
    /// regardless of the batch size, so results are bit-identical to single
    /// vector products.
    pub fn mul_interleaved(&self, z: &[f64], batch: usize) -> Vec<f64> {
        assert_eq!(z.len(), self.n * batch);
        let mut out = vec![0.0; self.n * batch];
        let mut acc = vec![0.0; batch];
        for i in 0..self.n {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (j, &lij) in self.row(i).iter().enumerate() {
                let zj = &z[j * batch..(j + 1) * batch];
                for (a, &zv) in acc.iter_mut().zip(zj) {
                    *a += lij * zv;
                }
            }
            out[i * batch..(i + 1) * batch].copy_from_slice(&acc);
        }
        out
    }
}

/// log|Σ| and zᵀΣ⁻¹z from a lower Cholesky factor of Σ.
pub fn log_det_and_quadratic(l: &Mat<f64>, z: &[f64]) -> (f64, f64) {
    let n = l.nrows();
    let log_det = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    // Forward substitution L y = z.
    let mut y = z.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for j in 0..i {
            s -= l[(i, j)] * y[j];
        }
        y[i] = s / l[(i, i)];
    }
    (log_det, y.iter().map(|v| v * v).sum())
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: &Mat<f64>) -> Result<Mat<f64>> {
    let llt = a
        .llt(Side::Lower)
        .map_err(|e| Error::Factorization(format!("matrix not positive definite: {e:?}")))?;
    Ok(llt.inverse())
}

/// Solves A x = b for symmetric positive-definite A.
pub fn spd_solve(a: &Mat<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let llt = a
        .llt(Side::Lower)
        .map_err(|e| Error::Factorization(format!("matrix not positive definite: {e:?}")))?;
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = llt.solve(&rhs);
    Ok((0..b.len()).map(|i| x[(i, 0)]).collect())
}

/// Square-root factor of the nearest positive-semidefinite correlation matrix.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    /// n × r matrix F with F Fᵀ equal to the repaired correlation.
    pub factor: Mat<f64>,
    /// Sum of |λ| over eigenvalues raised to the clip floor.
    pub repair: f64,
    /// Most negative eigenvalue before repair.
    pub min_eigenvalue: f64,
}

/// Clips eigenvalues at `floor`, rescales to unit diagonal and returns a
/// factor that keeps only the non-negligible eigen-directions.
pub fn psd_correlation_factor(cor: &Mat<f64>, floor: f64) -> Result<PsdFactor> {
    let n = cor.nrows();
    let evd = cor
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Factorization(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let mut repair = 0.0;
    let mut min_eigenvalue = f64::INFINITY;
    let mut kept = Vec::new();
    for k in 0..n {
        let lambda = s[k];
        min_eigenvalue = min_eigenvalue.min(lambda);
        if lambda < floor {
            repair += (floor - lambda).abs();
        }
        let clipped = lambda.max(floor);
        if clipped > floor {
            kept.push((k, clipped.sqrt()));
        }
    }
    let mut diag = vec![0.0; n];
    for &(k, root) in &kept {
        for (i, d) in diag.iter_mut().enumerate() {
            *d += root * root * u[(i, k)] * u[(i, k)];
        }
    }
    let factor = Mat::from_fn(n, kept.len(), |i, c| {
        let (k, root) = kept[c];
        u[(i, k)] * root / diag[i].sqrt()
    });
    Ok(PsdFactor {
        factor,
        repair,
        min_eigenvalue,
    })
}

use crate::error::{Error, Result};
use crate::qmc::RichtmyerLattice;
use crate::rng::derive_seed;
use crate::special::{norm_cdf, norm_quantile};
use faer::Mat;
use serde::{Deserialize, Serialize};

/// Randomized shifts behind every estimate; the standard error comes from
/// their spread.
pub const ORTHANT_SHIFTS: usize = 10;

/// Largest supported dimension.
pub const ORTHANT_MAX_DIM: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthantEstimate {
    pub probability: f64,
    pub std_error: f64,
}

/// Lower Cholesky factor of a positive semi-definite matrix; directions
/// with (numerically) zero variance get a zero column.
fn semidefinite_cholesky(cov: &Mat<f64>) -> Result<Vec<Vec<f64>>> {
    let m = cov.nrows();
    let scale = (0..m).map(|i| cov[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-10 * scale;
    let mut l = vec![vec![0.0; m]; m];
    for j in 0..m {
        let d = cov[(j, j)] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d < -1e-8 * scale {
            return Err(Error::Factorization(format!(
                "covariance is not positive semi-definite (pivot {j} = {d:.3e})"
            )));
        }
        if d <= tol {
            continue;
        }
        let root = d.sqrt();
        l[j][j] = root;
        for i in j + 1..m {
            let s = cov[(i, j)] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = s / root;
        }
    }
    Ok(l)
}

/// pr(Z_i > threshold for all i) for Z ~ N(mean, cov), by sequential
/// conditioning on the unit cube with randomly shifted lattice points.
pub fn mvn_upper_orthant(mean: &[f64], cov: &Mat<f64>, threshold: f64, samples: usize, seed: u64) -> Result<OrthantEstimate> {
    let m = mean.len();
    if cov.nrows() != m || cov.ncols() != m {
        return Err(Error::domain(format!(
            "mean has {m} entries but covariance is {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if m == 0 {
        return Ok(OrthantEstimate { probability: 1.0, std_error: 0.0 });
    }
    if m > ORTHANT_MAX_DIM {
        return Err(Error::domain(format!("orthant dimension {m} exceeds {ORTHANT_MAX_DIM}")));
    }
    for i in 0..m {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * (1.0 + cov[(i, j)].abs()) {
                return Err(Error::domain("covariance matrix is not symmetric"));
            }
        }
    }
    // With Y = mean − Z ~ N(0, cov) the event is Y_i < mean_i − threshold.
    let b: Vec<f64> = mean.iter().map(|mu| mu - threshold).collect();
    let diagonal = (0..m).all(|i| (0..m).all(|j| i == j || cov[(i, j)] == 0.0));
    if diagonal {
        let probability = (0..m)
            .map(|i| {
                let sd = cov[(i, i)].max(0.0).sqrt();
                if sd > 0.0 {
                    norm_cdf(b[i] / sd)
                } else {
                    (0.0 < b[i]) as u8 as f64
                }
            })
            .product();
        return Ok(OrthantEstimate { probability, std_error: 0.0 });
    }
    let l = semidefinite_cholesky(cov)?;

    let first = |s: f64, i: usize| -> f64 {
        if l[i][i] > 0.0 {
            norm_cdf((b[i] - s) / l[i][i])
        } else if s < b[i] {
            1.0
        } else {
            0.0
        }
    };
    if m == 1 {
        return Ok(OrthantEstimate { probability: first(0.0, 0), std_error: 0.0 });
    }

    let per_shift = (samples / ORTHANT_SHIFTS).max(1);
    let mut estimates = [0.0; ORTHANT_SHIFTS];
    let mut w = vec![0.0; m - 1];
    let mut y = vec![0.0; m];
    for (r, est) in estimates.iter_mut().enumerate() {
        let lattice = RichtmyerLattice::new(m - 1, derive_seed(seed, &[r as u64]));
        let mut acc = 0.0;
        for k in 0..per_shift {
            lattice.tent_point_into(k, &mut w);
            let mut e = first(0.0, 0);
            let mut f = e;
            for i in 1..m {
                if f == 0.0 {
                    break;
                }
                let prev = i - 1;
                y[prev] = if l[prev][prev] > 0.0 { norm_quantile(w[prev] * e) } else { 0.0 };
                let s: f64 = (0..i).map(|j| l[i][j] * y[j]).sum();
                e = first(s, i);
                f *= e;
            }
            acc += f;
        }
        *est = acc / per_shift as f64;
    }
    let r = ORTHANT_SHIFTS as f64;
    let probability = estimates.iter().sum::<f64>() / r;
    let var = estimates.iter().map(|e| (e - probability).powi(2)).sum::<f64>() / (r - 1.0);
    Ok(OrthantEstimate {
        probability,
        std_error: (var / r).sqrt(),
    })
}

use super::matern::MaternParams;
use super::simulate::{covariance_matrix, DENSE_CELL_LIMIT};
use crate::error::{Error, Result};
use crate::lattice::LatticeField;
use crate::linalg::{cholesky_jittered, log_det_and_quadratic};
use crate::optim::NelderMead;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub lower: MaternParams,
    pub upper: MaternParams,
    /// Coarse starting grid.
    pub grid_eta: Vec<f64>,
    pub grid_nu: Vec<f64>,
    pub max_evals: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            lower: MaternParams { eta: 0.1, nu: 0.1 },
            upper: MaternParams { eta: 60.0, nu: 4.0 },
            grid_eta: vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0],
            grid_nu: vec![0.3, 0.6, 1.2, 2.4],
            max_evals: 600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub params: MaternParams,
    pub log_likelihood: f64,
    pub evaluations: usize,
    /// Improving iterates of the direct search with their log-likelihoods.
    pub trace: Vec<(MaternParams, f64)>,
    /// The small-range boundary was at least as likely as the interior fit.
    pub at_lower_eta: bool,
}

/// −½ log|Σ(θ)| − ½ zᵀΣ(θ)⁻¹z for a zero-mean field.
pub fn matern_log_likelihood(field: &LatticeField, p: MaternParams) -> Result<f64> {
    if field.len() > DENSE_CELL_LIMIT {
        return Err(Error::domain(format!(
            "likelihood needs at most {DENSE_CELL_LIMIT} cells, field has {}",
            field.len()
        )));
    }
    let cov = covariance_matrix(field.nrows(), field.ncols(), p)?;
    let l = cholesky_jittered(&cov)?;
    let (log_det, quad) = log_det_and_quadratic(&l, field.values());
    Ok(-0.5 * log_det - 0.5 * quad)
}

/// Maximum-likelihood Matérn parameters: coarse grid, then bounded direct
/// search over log-parameters with one restart.
pub fn fit_matern_mle(field: &LatticeField, options: &MleOptions) -> Result<MleFit> {
    options.lower.validate()?;
    options.upper.validate()?;
    let to_params = |x: &[f64]| MaternParams { eta: x[0].exp(), nu: x[1].exp() };
    let mut evaluations = 0usize;
    let mut neg_ll = |x: &[f64]| -> f64 {
        evaluations += 1;
        match matern_log_likelihood(field, to_params(x)) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };

    let lower = vec![options.lower.eta.ln(), options.lower.nu.ln()];
    let upper = vec![options.upper.eta.ln(), options.upper.nu.ln()];
    let mut start = vec![lower[0], lower[1]];
    let mut best = f64::INFINITY;
    for &eta in &options.grid_eta {
        for &nu in &options.grid_nu {
            let x = [eta.ln().clamp(lower[0], upper[0]), nu.ln().clamp(lower[1], upper[1])];
            let v = neg_ll(&x);
            if v < best {
                best = v;
                start = x.to_vec();
            }
        }
    }
    if !best.is_finite() {
        return Err(Error::Factorization(
            "covariance singular at every starting point after jitter".into(),
        ));
    }

    let nm = NelderMead {
        max_evals: options.max_evals,
        f_tol: 1e-10,
        x_tol: 1e-6,
        ..NelderMead::new(lower.clone(), upper.clone())
    };
    let mut trace = Vec::new();
    let mut x = start;
    for _ in 0..2 {
        let m = match nm.minimize(&x, &mut neg_ll) {
            Ok(m) => m,
            Err(Error::NonConvergence { iterations, best, detail }) => {
                let p = to_params(&best);
                return Err(Error::NonConvergence {
                    iterations,
                    best: vec![p.eta, p.nu],
                    detail: format!("Matérn likelihood search: {detail}; trace {:?}", trace),
                });
            }
            Err(e) => return Err(e),
        };
        trace.extend(m.trace.iter().map(|(x, v)| (to_params(x), -v)));
        x = m.x;
    }
    let mut value = -neg_ll(&x);
    let mut params = to_params(&x);

    let boundary = [lower[0], x[1]];
    let boundary_value = -neg_ll(&boundary);
    let at_lower_eta = boundary_value >= value;
    if at_lower_eta {
        params = MaternParams { eta: options.lower.eta, nu: params.nu };
        value = boundary_value;
    }
    Ok(MleFit {
        params,
        log_likelihood: value,
        evaluations,
        trace,
        at_lower_eta,
    })
}

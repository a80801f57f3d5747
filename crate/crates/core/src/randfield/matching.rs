use super::matern::MaternParams;
use super::simulate::{chi1_to_normal, f33_ratio, f33_to_normal, ModelKind};
use crate::error::{Error, Result};
use crate::optim::NelderMead;
use crate::qmc::RichtmyerLattice;
use crate::special::norm_quantile;
use serde::{Deserialize, Serialize};

/// Lattice lags at which correlations are matched.
pub const MATCH_LAGS: [f64; 10] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    /// Replicate pairs per lag and evaluation.
    pub pairs: usize,
    pub seed: u64,
    pub lower: MaternParams,
    pub upper: MaternParams,
    pub max_evals: usize,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            pairs: 1000,
            seed: 0,
            lower: MaternParams { eta: 0.01, nu: 0.05 },
            upper: MaternParams { eta: 200.0, nu: 20.0 },
            max_evals: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub kind: ModelKind,
    pub target: MaternParams,
    /// Inner Gaussian-field parameters produced by the matching procedure.
    pub params: MaternParams,
    pub target_correlations: Vec<f64>,
    pub achieved_correlations: Vec<f64>,
    pub max_discrepancy: f64,
    pub objective: f64,
    pub evaluations: usize,
}

/// Common random numbers for every evaluation: per pair, two normal values
/// per inner field.
struct PairDraws {
    kind: ModelKind,
    first: Vec<f64>,
    normals: Vec<[f64; 12]>,
}

impl PairDraws {
    fn new(kind: ModelKind, pairs: usize, seed: u64) -> Self {
        let g = kind.grf_count();
        let lattice = RichtmyerLattice::new(2 * g, seed);
        let normals: Vec<[f64; 12]> = (0..pairs)
            .map(|k| {
                let u = lattice.point(k);
                std::array::from_fn(|j| if j < u.len() { norm_quantile(u[j]) } else { 0.0 })
            })
            .collect();
        let first = normals
            .iter()
            .map(|n| transform(kind, std::array::from_fn(|m| n[2 * m])))
            .collect();
        Self { kind, first, normals }
    }

    fn correlation(&self, rho: f64) -> f64 {
        let g = self.kind.grf_count();
        let c = (1.0 - rho * rho).max(0.0).sqrt();
        let second: Vec<f64> = self
            .normals
            .iter()
            .map(|n| {
                let z: [f64; 6] = std::array::from_fn(|m| if m < g { rho * n[2 * m] + c * n[2 * m + 1] } else { 0.0 });
                transform(self.kind, z)
            })
            .collect();
        pearson(&self.first, &second)
    }
}

fn transform(kind: ModelKind, z: [f64; 6]) -> f64 {
    match kind {
        ModelKind::M1 => z[0],
        ModelKind::M2 => chi1_to_normal(z[0] * z[0]),
        ModelKind::M3 => f33_to_normal(f33_ratio(z)),
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Monte Carlo lag correlations of the transformed field whose inner
/// Gaussian fields have Matérn parameters `inner`.
pub fn lag_correlations(kind: ModelKind, inner: MaternParams, lags: &[f64], pairs: usize, seed: u64) -> Result<Vec<f64>> {
    inner.validate()?;
    let draws = PairDraws::new(kind, pairs, seed);
    Ok(lags.iter().map(|&u| draws.correlation(inner.cor(u))).collect())
}

/// Least-squares match of transformed-field lag correlations to a target
/// Matérn correlation, over log-parameters by direct search.
pub fn match_correlation(target: MaternParams, kind: ModelKind, options: &MatchOptions) -> Result<MatchResult> {
    target.validate()?;
    options.lower.validate()?;
    options.upper.validate()?;
    if options.pairs < 3 {
        return Err(Error::domain("correlation matching needs at least 3 pairs"));
    }
    let target_cor: Vec<f64> = MATCH_LAGS.iter().map(|&u| target.cor(u)).collect();
    let draws = PairDraws::new(kind, options.pairs, options.seed);
    let achieved = |p: MaternParams| -> Vec<f64> { MATCH_LAGS.iter().map(|&u| draws.correlation(p.cor(u))).collect() };
    let to_params = |x: &[f64]| MaternParams { eta: x[0].exp(), nu: x[1].exp() };
    let objective = |x: &[f64]| -> f64 {
        achieved(to_params(x))
            .iter()
            .zip(&target_cor)
            .map(|(a, t)| (a - t).powi(2))
            .sum()
    };

    let lower = vec![options.lower.eta.ln(), options.lower.nu.ln()];
    let upper = vec![options.upper.eta.ln(), options.upper.nu.ln()];
    let nm = NelderMead {
        max_evals: options.max_evals,
        f_tol: 1e-10,
        x_tol: 1e-4,
        ..NelderMead::new(lower, upper)
    };
    let start = [target.eta.ln(), target.nu.ln()];
    let min = match nm.minimize(&start, objective) {
        Ok(m) => m,
        Err(Error::NonConvergence { iterations, best, detail }) => {
            let p = to_params(&best);
            return Err(Error::NonConvergence {
                iterations,
                best: vec![p.eta, p.nu],
                detail: format!("correlation matching: {detail}"),
            });
        }
        Err(e) => return Err(e),
    };
    let params = to_params(&min.x);
    let achieved_correlations = achieved(params);
    let max_discrepancy = achieved_correlations
        .iter()
        .zip(&target_cor)
        .map(|(a, t)| (a - t).abs())
        .fold(0.0, f64::max);
    log::info!(
        "matched {kind:?} to eta={} nu={}: inner eta={:.4} nu={:.4}, max lag discrepancy {:.4}",
        target.eta,
        target.nu,
        params.eta,
        params.nu,
        max_discrepancy
    );
    Ok(MatchResult {
        kind,
        target,
        params,
        target_correlations: target_cor,
        achieved_correlations,
        max_discrepancy,
        objective: min.value,
        evaluations: min.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Plain pseudo-random Monte Carlo with many pairs, independent of the
    /// lattice point set used by the matcher.
    fn oracle_correlation(kind: ModelKind, rho: f64, pairs: usize) -> f64 {
        let mut rng = stream_rng(987_654, 3);
        let g = kind.grf_count();
        let c = (1.0 - rho * rho).sqrt();
        let mut x = Vec::with_capacity(pairs);
        let mut y = Vec::with_capacity(pairs);
        for _ in 0..pairs {
            let mut a = [0.0; 6];
            let mut b = [0.0; 6];
            for m in 0..g {
                let u: f64 = rng.sample(StandardNormal);
                let v: f64 = rng.sample(StandardNormal);
                a[m] = u;
                b[m] = rho * u + c * v;
            }
            x.push(transform(kind, a));
            y.push(transform(kind, b));
        }
        pearson(&x, &y)
    }

    #[test]
    fn m1_lag_correlation_is_identity() {
        let p = MaternParams::new(5.0, 1.0).unwrap();
        let c = lag_correlations(ModelKind::M1, p, &[1.0, 5.0], 1000, 1).unwrap();
        assert!((c[0] - p.cor(1.0)).abs() < 0.01);
        assert!((c[1] - p.cor(5.0)).abs() < 0.02);
    }

    #[test]
    fn m2_match_reaches_target() {
        let target = MaternParams::new(5.0, 1.0).unwrap();
        let r = match_correlation(target, ModelKind::M2, &MatchOptions::default()).unwrap();
        let worst = MATCH_LAGS
            .iter()
            .map(|&u| (oracle_correlation(ModelKind::M2, r.params.cor(u), 200_000) - target.cor(u)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.02, "max discrepancy {worst}, params {:?}", r.params);
        assert!(r.params.eta > target.eta);
    }

    #[test]
    fn near_independent_target_stays_independent() {
        let target = MaternParams::new(0.05, 1.0).unwrap();
        for kind in [ModelKind::M2, ModelKind::M3] {
            let r = match_correlation(target, kind, &MatchOptions::default()).unwrap();
            assert!(r.params.cor(1.0) < 0.05, "{kind:?} {:?}", r.params);
        }
    }

    #[test]
    fn deterministic() {
        let target = MaternParams::new(3.0, 0.7).unwrap();
        let o = MatchOptions { seed: 5, ..Default::default() };
        let a = match_correlation(target, ModelKind::M3, &o).unwrap();
        let b = match_correlation(target, ModelKind::M3, &o).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_exhaustion_carries_best_iterate() {
        let target = MaternParams::new(5.0, 1.0).unwrap();
        let o = MatchOptions { max_evals: 5, ..Default::default() };
        match match_correlation(target, ModelKind::M2, &o) {
            Err(Error::NonConvergence { best, .. }) => assert!(best.iter().all(|v| *v > 0.0)),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}

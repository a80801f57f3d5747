use crate::error::{Error, Result};
use crate::special::bessel_k_scaled;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::LN_2;

/// Matérn range η (lattice units) and smoothness ν.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub eta: f64,
    pub nu: f64,
}

impl MaternParams {
    pub fn new(eta: f64, nu: f64) -> Result<Self> {
        let p = Self { eta, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite() && self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::domain(format!(
                "Matérn parameters must be positive and finite (eta = {}, nu = {})",
                self.eta, self.nu
            )));
        }
        Ok(())
    }

    /// Correlation at distance u; parameters assumed valid.
    pub(crate) fn cor(&self, u: f64) -> f64 {
        let s = (2.0 * self.nu).sqrt() * u / self.eta;
        if s == 0.0 {
            return 1.0;
        }
        if s > 700.0 + 10.0 * self.nu {
            return 0.0;
        }
        let log = (1.0 - self.nu) * LN_2 - ln_gamma(self.nu) + self.nu * s.ln() + bessel_k_scaled(self.nu, s).ln() - s;
        log.exp().clamp(0.0, 1.0)
    }
}

/// (2^{1−ν}/Γ(ν)) s^ν K_ν(s) with s = √(2ν)·u/η; 1 at u = 0.
pub fn matern_cor(u: f64, p: MaternParams) -> Result<f64> {
    p.validate()?;
    if !(u >= 0.0) {
        return Err(Error::domain(format!("distance must be non-negative, got {u}")));
    }
    Ok(p.cor(u))
}

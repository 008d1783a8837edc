//! Contract data and model parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contract data given by the market: strike, rates and maturity of a
/// European put. These are inputs to the pricing problem, never calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    /// Strike K.
    pub strike: f64,
    /// Risk-free rate r (per year).
    pub rate: f64,
    /// Continuous dividend yield q (per year).
    pub dividend: f64,
    /// Maturity T (years).
    pub maturity: f64,
}

impl MarketSpec {
    pub fn new(strike: f64, rate: f64, dividend: f64, maturity: f64) -> Result<Self> {
        if !(strike > 0.0) {
            return Err(Error::InvalidConfig(format!("strike must be positive, got {strike}")));
        }
        if !(maturity > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "maturity must be positive, got {maturity}"
            )));
        }
        Ok(Self { strike, rate, dividend, maturity })
    }

    /// Log-strike, the centre of the spatial domain.
    pub fn log_strike(&self) -> f64 {
        self.strike.ln()
    }
}

/// The calibration vector u = (sigma_nu, rho, kappa_nu, mu_nu).
///
/// Component order is fixed throughout the crate: vol-of-variance,
/// correlation, mean-reversion rate, long-term variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    /// Volatility of variance.
    pub sigma_nu: f64,
    /// Correlation between asset and variance Brownian motions.
    pub rho: f64,
    /// Mean-reversion rate of the variance.
    pub kappa_nu: f64,
    /// Long-term variance level.
    pub mu_nu: f64,
}

impl HestonParams {
    pub fn new(sigma_nu: f64, rho: f64, kappa_nu: f64, mu_nu: f64) -> Self {
        Self { sigma_nu, rho, kappa_nu, mu_nu }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.sigma_nu, self.rho, self.kappa_nu, self.mu_nu]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { sigma_nu: a[0], rho: a[1], kappa_nu: a[2], mu_nu: a[3] }
    }

    /// 2 kappa mu >= sigma^2, positivity of the variance process.
    pub fn feller_satisfied(&self) -> bool {
        2.0 * self.kappa_nu * self.mu_nu >= self.sigma_nu * self.sigma_nu
    }

    /// Admissibility for a PDE solve: positive sigma, kappa, mu and
    /// |rho| <= 1. The Feller condition is enforced by the calibrator's
    /// projection, not here; the PDE itself remains well posed without it.
    pub fn validate_for_solve(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParams(format!("{msg} in {self:?}")))
            }
        };
        check(self.sigma_nu.is_finite() && self.sigma_nu > 0.0, "sigma_nu must be positive")?;
        check(self.rho.is_finite() && self.rho.abs() <= 1.0, "rho must lie in [-1, 1]")?;
        check(self.kappa_nu.is_finite() && self.kappa_nu > 0.0, "kappa_nu must be positive")?;
        check(self.mu_nu.is_finite() && self.mu_nu > 0.0, "mu_nu must be positive")?;
        Ok(())
    }

    /// Euclidean distance to another parameter vector.
    pub fn distance(&self, other: &Self) -> f64 {
        let a = self.as_array();
        let b = other.as_array();
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
}

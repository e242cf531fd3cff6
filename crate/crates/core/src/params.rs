use crate::error::{Error, Result};

/// Material and discretization parameters of the Biot model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub mu: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub c0: f64,
    pub kappa: f64,
    pub dt: f64,
}

impl PhysicalParams {
    /// Elasticity setting used by the elasticity experiments (`mu = 0.5`).
    pub fn elasticity(lambda: f64) -> Self {
        PhysicalParams {
            mu: 0.5,
            lambda,
            alpha: 1.0,
            c0: 1.0,
            kappa: 1.0,
            dt: 1.0,
        }
    }

    /// Poroelasticity setting (`c0 = kappa = mu = alpha = 1`).
    pub fn poro(lambda: f64, dt: f64) -> Self {
        PhysicalParams {
            mu: 1.0,
            lambda,
            alpha: 1.0,
            c0: 1.0,
            kappa: 1.0,
            dt,
        }
    }

    /// Locking parameter `mu / (lambda + mu)`.
    pub fn epsilon(&self) -> f64 {
        self.mu / (self.lambda + self.mu)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mu > 0.0
            && self.lambda >= 0.0
            && self.c0 > 0.0
            && self.kappa > 0.0
            && self.dt > 0.0
            && self.alpha > 0.0
            && self.alpha <= 1.0
            && [
                self.mu,
                self.lambda,
                self.alpha,
                self.c0,
                self.kappa,
                self.dt,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "physical parameters out of range: {self:?}"
            )))
        }
    }

    /// Only the elastic constants need to be valid for a pure elasticity solve.
    pub fn validate_elastic(&self) -> Result<()> {
        if self.mu > 0.0 && self.lambda >= 0.0 && self.mu.is_finite() && self.lambda.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "Lamé constants out of range: mu={} lambda={}",
                self.mu, self.lambda
            )))
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Supported exponent range. Outside it the degenerate/singular behaviour of
/// the operator is not resolvable at desk scale.
pub const P_MIN: f64 = 1.2;
pub const P_MAX: f64 = 6.0;

/// The physics of one scenario: exponent `p` and the phase constants λ±.
///
/// `eps_reg` regularizes the degenerate p-Laplacian: solvers use the
/// integrand `(|∇u|² + eps_reg²)^{p/2}`. A value of zero means "derive a
/// default at solve time" (1e-8 scaled by boundary oscillation over domain
/// diameter).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub p: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    #[serde(default)]
    pub eps_reg: f64,
}

impl ProblemParams {
    pub fn new(p: f64, lambda_plus: f64, lambda_minus: f64) -> Result<Self> {
        Self::with_regularization(p, lambda_plus, lambda_minus, 0.0)
    }

    pub fn with_regularization(
        p: f64,
        lambda_plus: f64,
        lambda_minus: f64,
        eps_reg: f64,
    ) -> Result<Self> {
        let params = ProblemParams {
            p,
            lambda_plus,
            lambda_minus,
            eps_reg,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.p.is_finite() || self.p < P_MIN || self.p > P_MAX {
            return Err(Error::config(format!(
                "exponent p = {} outside the supported range [{P_MIN}, {P_MAX}]",
                self.p
            )));
        }
        if !(self.lambda_plus > 0.0) || !self.lambda_plus.is_finite() {
            return Err(Error::config(format!(
                "lambda_plus = {} must be positive",
                self.lambda_plus
            )));
        }
        if !(self.lambda_minus > 0.0) || !self.lambda_minus.is_finite() {
            return Err(Error::config(format!(
                "lambda_minus = {} must be positive",
                self.lambda_minus
            )));
        }
        if !(self.eps_reg >= 0.0) || !self.eps_reg.is_finite() {
            return Err(Error::config(format!(
                "eps_reg = {} must be nonnegative",
                self.eps_reg
            )));
        }
        Ok(())
    }

    /// λ₊^p − λ₋^p, the slope-compatibility gap shared by all two-planes of
    /// this scenario.
    pub fn slope_gap(&self) -> f64 {
        self.lambda_plus.powf(self.p) - self.lambda_minus.powf(self.p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_supported_range() {
        assert!(ProblemParams::new(1.2, 1.0, 1.0).is_ok());
        assert!(ProblemParams::new(6.0, 0.5, 2.0).is_ok());
    }

    #[test]
    fn rejects_bad_exponent_and_constants() {
        assert!(ProblemParams::new(1.0, 1.0, 1.0).is_err());
        assert!(ProblemParams::new(0.5, 1.0, 1.0).is_err());
        assert!(ProblemParams::new(7.0, 1.0, 1.0).is_err());
        assert!(ProblemParams::new(2.0, 0.0, 1.0).is_err());
        assert!(ProblemParams::new(2.0, 1.0, -1.0).is_err());
        assert!(ProblemParams::with_regularization(2.0, 1.0, 1.0, -1e-9).is_err());
    }
}

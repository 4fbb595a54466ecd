use serde::{Deserialize, Serialize};

use crate::{dot, norm, Error, Point, ProblemParams, Result};

/// Tolerance for accepting an almost-unit direction (it is renormalized).
const UNIT_TOL: f64 = 1e-6;

/// A two-plane profile `H(x) = α (x·e)⁺ − β (x·e)⁻` with a unit direction
/// `e`. Built through [`make_two_plane`], the slopes satisfy the
/// compatibility relation `α^p − β^p = λ₊^p − λ₋^p` with `α ≥ λ₊`, `β ≥ λ₋`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPlane {
    pub alpha: f64,
    pub beta: f64,
    pub e: Point,
}

impl TwoPlane {
    /// Raw constructor for profiles with independently chosen slopes
    /// (model fields in tests, fit seeds). Only the direction is validated.
    pub fn with_slopes(alpha: f64, beta: f64, e: Point) -> Result<Self> {
        let e = normalize_direction(e)?;
        if !(alpha > 0.0) || !(beta > 0.0) {
            return Err(Error::domain(format!(
                "two-plane slopes must be positive (alpha = {alpha}, beta = {beta})"
            )));
        }
        Ok(TwoPlane { alpha, beta, e })
    }

    /// `α (x·e)⁺ − β (x·e)⁻`.
    pub fn eval(&self, x: &Point) -> f64 {
        let t = dot(x, &self.e);
        if t >= 0.0 {
            self.alpha * t
        } else {
            self.beta * t
        }
    }

    /// |α^p − β^p − (λ₊^p − λ₋^p)|, the compatibility defect under `params`.
    pub fn compatibility_defect(&self, params: &ProblemParams) -> f64 {
        let p = params.p;
        (self.alpha.powf(p) - self.beta.powf(p) - params.slope_gap()).abs()
    }
}

fn normalize_direction(e: Point) -> Result<Point> {
    let n = norm(&e);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::domain(format!(
            "direction has norm {n}, more than {UNIT_TOL} away from 1"
        )));
    }
    Ok([e[0] / n, e[1] / n, e[2] / n])
}

/// Build the two-plane with positive-phase slope `alpha` and direction `e`;
/// the negative slope is derived from the compatibility relation,
/// `β = (λ₋^p − λ₊^p + α^p)^{1/p}`.
pub fn make_two_plane(alpha: f64, e: Point, params: &ProblemParams) -> Result<TwoPlane> {
    params.validate()?;
    let e = normalize_direction(e)?;
    if !(alpha >= params.lambda_plus) {
        return Err(Error::domain(format!(
            "slope below λ₊: alpha = {alpha} < {}",
            params.lambda_plus
        )));
    }
    let p = params.p;
    let beta = (params.lambda_minus.powf(p) - params.lambda_plus.powf(p) + alpha.powf(p)).powf(1.0 / p);
    Ok(TwoPlane { alpha, beta, e })
}

/// Evaluate `H_{α,e}` at a point.
pub fn eval_two_plane(tp: &TwoPlane, x: &Point) -> f64 {
    tp.eval(x)
}

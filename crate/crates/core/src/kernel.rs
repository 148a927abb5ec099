//! Check loss and the η outcome transforms.
//!
//! Every bound objective in this crate is an iterated expectation of a
//! composition of these transforms, so they are kept small, pure and
//! allocation free. The public functions validate their inputs; the
//! `pub(crate)` fast paths are used inside the optimizers where the
//! parameters have already been checked.

use crate::error::{ensure_finite, Error, Result};

/// Direction of a sensitivity bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Upper,
    Lower,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Upper => "upper",
            Direction::Lower => "lower",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(Direction::Upper),
            "lower" => Ok(Direction::Lower),
            other => Err(Error::InvalidParameter(format!("unknown direction `{other}`"))),
        }
    }
}

/// Quantile level of a check loss, `0 < tau < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckParams {
    tau: f64,
}

impl CheckParams {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidParameter(format!("quantile level {tau} outside (0, 1)")));
        }
        Ok(Self { tau })
    }

    /// Check params at the level implied by a sensitivity parameter.
    pub fn from_lambda(lambda: f64) -> Result<Self> {
        Ok(Self { tau: tau_of(lambda)? })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// `tau (y - q)^+ + (1 - tau) (q - y)^+`.
pub fn check_loss(y: f64, q: f64, params: CheckParams) -> Result<f64> {
    ensure_finite(y, "check_loss y")?;
    ensure_finite(q, "check_loss q")?;
    Ok(rho(y, q, params.tau))
}

/// Quantile level `lambda / (1 + lambda)` paired with a sensitivity parameter.
pub fn tau_of(lambda: f64) -> Result<f64> {
    validate_lambda(lambda)?;
    Ok(lambda / (1.0 + lambda))
}

pub(crate) fn validate_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 1.0 {
        return Err(Error::InvalidParameter(format!("sensitivity parameter {lambda} must be finite and >= 1")));
    }
    Ok(())
}

pub(crate) fn validate_propensity(pi: f64) -> Result<()> {
    if !(pi > 0.0 && pi <= 1.0) {
        return Err(Error::InvalidParameter(format!("propensity {pi} outside (0, 1]")));
    }
    Ok(())
}

#[inline]
pub(crate) fn rho(y: f64, q: f64, tau: f64) -> f64 {
    let d = y - q;
    if d >= 0.0 {
        tau * d
    } else {
        (tau - 1.0) * d
    }
}

/// Parameters of one period's η transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaStepParams {
    pi: f64,
    lambda: f64,
    direction: Direction,
    tau: f64,
    coef: f64,
}

impl EtaStepParams {
    pub fn new(pi: f64, lambda: f64, direction: Direction) -> Result<Self> {
        validate_propensity(pi)?;
        let tau = tau_of(lambda)?;
        Ok(Self {
            pi,
            lambda,
            direction,
            tau,
            coef: (1.0 - pi) * (lambda - lambda.recip()),
        })
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `(1 - pi)(lambda - 1/lambda)`, the weight on the check term.
    pub fn coef(&self) -> f64 {
        self.coef
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    /// True when the transform is the identity in `y`.
    pub fn is_identity(&self) -> bool {
        self.coef == 0.0
    }

    /// Upper transform without input checks.
    #[inline]
    pub(crate) fn upper(&self, y: f64, q: f64) -> f64 {
        y + self.coef * rho(y, q, self.tau)
    }

    #[inline]
    pub(crate) fn apply(&self, y: f64, q: f64) -> f64 {
        match self.direction {
            Direction::Upper => self.upper(y, q),
            Direction::Lower => -self.upper(-y, -q),
        }
    }

    /// Slope of the upper transform in `y` on either side of `q`:
    /// `pi + (1 - pi) lambda` above and `pi + (1 - pi) / lambda` below.
    pub(crate) fn slopes(&self) -> (f64, f64) {
        let above = self.pi + (1.0 - self.pi) * self.lambda;
        let below = self.pi + (1.0 - self.pi) / self.lambda;
        (below, above)
    }
}

/// One period's η transform. The lower transform is the reflection
/// `eta_lower(y, q) = -eta_upper(-y, -q)`, which equals
/// `y - (1 - pi)(lambda - 1/lambda) rho_{1 - tau}(y, q)`.
pub fn eta_step(y: f64, q: f64, params: &EtaStepParams) -> Result<f64> {
    ensure_finite(y, "eta_step y")?;
    ensure_finite(q, "eta_step q")?;
    Ok(params.apply(y, q))
}

/// Composite transform `eta_{K-1}(... eta_0(y, q_0) ..., q_{K-1})`.
pub fn eta_composite(y: f64, q_values: &[f64], step_params: &[EtaStepParams]) -> Result<f64> {
    if q_values.is_empty() {
        return Err(Error::InvalidParameter("empty q sequence".into()));
    }
    if q_values.len() != step_params.len() {
        return Err(Error::InvalidParameter(format!(
            "{} thresholds for {} periods",
            q_values.len(),
            step_params.len()
        )));
    }
    let mut z = ensure_finite(y, "eta_composite y")?;
    for (q, p) in q_values.iter().zip(step_params) {
        z = p.apply(z, ensure_finite(*q, "eta_composite q")?);
    }
    Ok(z)
}

/// Parameters of one period of the product-model transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProdStepParams {
    pi: f64,
    lambda_l: f64,
    lambda_y: f64,
    tau_l: f64,
    tau_y: f64,
}

impl ProdStepParams {
    pub fn new(pi: f64, lambda_l: f64, lambda_y: f64) -> Result<Self> {
        validate_propensity(pi)?;
        let tau_l = tau_of(lambda_l)?;
        let tau_y = tau_of(lambda_y)?;
        Ok(Self { pi, lambda_l, lambda_y, tau_l, tau_y })
    }

    /// Final-period parameters: the covariate channel is fixed at 1.
    pub fn terminal(pi: f64, lambda_y: f64) -> Result<Self> {
        Self::new(pi, 1.0, lambda_y)
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn lambda_l(&self) -> f64 {
        self.lambda_l
    }

    pub fn lambda_y(&self) -> f64 {
        self.lambda_y
    }

    #[inline]
    pub(crate) fn y_channel(&self, y: f64, q_y: f64) -> f64 {
        y + (self.lambda_y - self.lambda_y.recip()) * rho(y, q_y, self.tau_y)
    }

    #[inline]
    pub(crate) fn combine(&self, y: f64, y_tilde: f64, q_l: f64) -> f64 {
        let inner = y_tilde + (self.lambda_l - self.lambda_l.recip()) * rho(y_tilde, q_l, self.tau_l);
        self.pi * y + (1.0 - self.pi) * inner
    }
}

/// Product-model step. Returns `(y + (Λ_Y - 1/Λ_Y) rho_{τ_Y}(y, q_Y),
/// π y + (1-π){ỹ + (Λ_L - 1/Λ_L) rho_{τ_L}(ỹ, q_L)})` with `ỹ = y_tilde`.
pub fn eta_prod_step(y: f64, y_tilde: f64, q_l: f64, q_y: f64, params: &ProdStepParams) -> Result<(f64, f64)> {
    ensure_finite(y, "eta_prod_step y")?;
    ensure_finite(y_tilde, "eta_prod_step y_tilde")?;
    ensure_finite(q_l, "eta_prod_step q_l")?;
    ensure_finite(q_y, "eta_prod_step q_y")?;
    Ok((params.y_channel(y, q_y), params.combine(y, y_tilde, q_l)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn check_loss_examples() {
        let half = CheckParams::new(0.5).unwrap();
        assert_eq!(check_loss(3.0, 3.0, CheckParams::new(0.9).unwrap()).unwrap(), 0.0);
        assert!(close(check_loss(1.0, 0.0, half).unwrap(), 0.5));
        let two_thirds = CheckParams::new(2.0 / 3.0).unwrap();
        assert!(close(check_loss(1.0, 0.0, two_thirds).unwrap(), 2.0 / 3.0));
    }

    #[test]
    fn check_loss_rejects_bad_inputs() {
        assert!(CheckParams::new(0.0).is_err());
        assert!(CheckParams::new(1.0).is_err());
        let p = CheckParams::new(0.5).unwrap();
        assert!(matches!(check_loss(f64::NAN, 0.0, p), Err(Error::NonFinite(_))));
        assert!(check_loss(0.0, f64::INFINITY, p).is_err());
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau_of(1.0).unwrap(), 0.5);
        assert!(close(tau_of(2.0).unwrap(), 2.0 / 3.0));
        assert!(close(tau_of(3.0).unwrap(), 0.75));
        assert!(tau_of(0.99).is_err());
        assert!(tau_of(f64::NAN).is_err());
    }

    #[test]
    fn eta_step_examples() {
        let id = EtaStepParams::new(0.5, 1.0, Direction::Upper).unwrap();
        assert_eq!(eta_step(1.0, 0.0, &id).unwrap(), 1.0);
        let up = EtaStepParams::new(0.5, 2.0, Direction::Upper).unwrap();
        assert!(close(eta_step(1.0, 0.0, &up).unwrap(), 1.5));
        let lo = up.with_direction(Direction::Lower);
        assert!(close(eta_step(-1.0, 0.0, &lo).unwrap(), -1.5));
    }

    #[test]
    fn lower_matches_explicit_formula() {
        // y - (1-π)(Λ-1/Λ) ρ_{1-τ}(y, q)
        let p = EtaStepParams::new(0.3, 2.5, Direction::Lower).unwrap();
        for &(y, q) in &[(1.0, 0.0), (-2.0, 0.5), (0.25, 0.25), (3.0, 7.0)] {
            let explicit = y - p.coef() * rho(y, q, 1.0 - p.tau());
            assert!(close(eta_step(y, q, &p).unwrap(), explicit));
        }
    }

    #[test]
    fn eta_step_params_validation() {
        assert!(EtaStepParams::new(0.0, 2.0, Direction::Upper).is_err());
        assert!(EtaStepParams::new(1.2, 2.0, Direction::Upper).is_err());
        assert!(EtaStepParams::new(0.5, 0.5, Direction::Upper).is_err());
        assert!(EtaStepParams::new(1.0, 2.0, Direction::Upper).unwrap().is_identity());
    }

    #[test]
    fn eta_composite_examples() {
        let id = EtaStepParams::new(0.5, 1.0, Direction::Upper).unwrap();
        assert_eq!(eta_composite(4.2, &[1.0, -3.0], &[id, id]).unwrap(), 4.2);
        let up = EtaStepParams::new(0.5, 2.0, Direction::Upper).unwrap();
        assert_eq!(
            eta_composite(1.0, &[0.0], &[up]).unwrap(),
            eta_step(1.0, 0.0, &up).unwrap()
        );
        assert!(close(eta_composite(1.0, &[0.0, 0.0], &[up, up]).unwrap(), 2.25));
        assert!(eta_composite(1.0, &[], &[]).is_err());
        assert!(eta_composite(1.0, &[0.0], &[up, up]).is_err());
    }

    #[test]
    fn eta_prod_step_relationships() {
        let lam_y = 2.0;
        let pi = 0.4;
        // Λ_L = 1 with ỹ from the y-channel reproduces the primary step at Λ_Y.
        let p = ProdStepParams::new(pi, 1.0, lam_y).unwrap();
        let prim = EtaStepParams::new(pi, lam_y, Direction::Upper).unwrap();
        for &(y, q_y, q_l) in &[(1.0, 0.0, 5.0), (-1.0, 0.5, -2.0), (2.0, 2.0, 0.0)] {
            let (yc, _) = eta_prod_step(y, y, q_l, q_y, &p).unwrap();
            let (_, combined) = eta_prod_step(y, yc, q_l, q_y, &p).unwrap();
            assert!(close(combined, eta_step(y, q_y, &prim).unwrap()));
        }
        // ỹ = y at any Λ_L reproduces the primary step at Λ_L.
        let p = ProdStepParams::new(pi, 3.0, lam_y).unwrap();
        let prim = EtaStepParams::new(pi, 3.0, Direction::Upper).unwrap();
        for &(y, q_l) in &[(1.0, 0.0), (-1.0, 0.5), (2.0, 2.0)] {
            let (_, combined) = eta_prod_step(y, y, q_l, 0.0, &p).unwrap();
            assert!(close(combined, eta_step(y, q_l, &prim).unwrap()));
        }
        // Identity case.
        let p = ProdStepParams::new(pi, 1.0, 1.0).unwrap();
        let (yc, combined) = eta_prod_step(1.5, 4.0, 0.0, 0.0, &p).unwrap();
        assert_eq!(yc, 1.5);
        assert!(close(combined, pi * 1.5 + (1.0 - pi) * 4.0));
        let (_, combined) = eta_prod_step(1.5, 1.5, 0.0, 0.0, &p).unwrap();
        assert!(close(combined, 1.5));
    }

    #[test]
    fn slopes_are_rho_factors() {
        let p = EtaStepParams::new(0.3, 2.0, Direction::Upper).unwrap();
        let (below, above) = p.slopes();
        let q = 0.0;
        assert!(close(p.upper(2.0, q) - p.upper(1.0, q), above));
        assert!(close(p.upper(-1.0, q) - p.upper(-2.0, q), below));
    }
}

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Vanishing weight `γ` of the white-noise coupling:
/// `γ(t) = (2-a)/r · (e^{r(T-t)} - 1)` with `r = (π² - λ)π²`.
///
/// It solves `γ' + rγ + 2 = a` with `γ(T) = 0`, so `∫_0^T dt/γ = ∞` and the
/// coupling drift forces the two paths together at `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaSchedule {
    horizon: f64,
    a: f64,
    lambda: f64,
}

impl GammaSchedule {
    pub fn new(horizon: f64, a: f64, lambda: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Validation(format!("horizon must be positive, got {horizon}")));
        }
        if !(a > 0.0 && a < 2.0) {
            return Err(Error::Validation(format!("a must lie in (0,2), got {a}")));
        }
        if !(PI * PI > lambda) {
            return Err(Error::Validation(format!(
                "white-noise coupling needs pi^2 > lambda, got lambda = {lambda}"
            )));
        }
        Ok(Self { horizon, a, lambda })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `r = (π² - λ)π²`.
    pub fn rate(&self) -> f64 {
        (PI * PI - self.lambda) * PI * PI
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Schedule(format!("time {t} is negative")));
        }
        if t >= self.horizon {
            return Err(Error::Schedule(format!(
                "gamma vanishes at the horizon {}; got t = {t}",
                self.horizon
            )));
        }
        let r = self.rate();
        let g = (2.0 - self.a) / r * (r * (self.horizon - t)).exp_m1();
        if !(g > 0.0) {
            return Err(Error::Schedule(format!("gamma({t}) = {g} is not positive")));
        }
        Ok(g)
    }

    /// `γ(0)`.
    pub fn initial(&self) -> f64 {
        let r = self.rate();
        (2.0 - self.a) / r * (r * self.horizon).exp_m1()
    }

    /// The boundary value `γ(T) = 0`.
    pub fn at_horizon(&self) -> f64 {
        0.0
    }
}

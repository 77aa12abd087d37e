//! Logarithmic nonlinearity, its primitive, and the odd polynomial
//! truncations of `log((1+u)/(1-u))` used by the approximating dynamics.

use crate::error::{Error, Result};

/// `λ` together with the polynomial index `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialParams {
    pub lambda: f64,
    pub n_poly: usize,
}

impl PotentialParams {
    pub fn new(lambda: f64, n_poly: usize) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Validation(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { lambda, n_poly })
    }

    pub fn f(&self, u: f64) -> f64 {
        f_log(u, self.lambda)
    }

    pub fn primitive(&self, u: f64) -> Result<f64> {
        big_f(u, self.lambda)
    }

    pub fn p(&self, u: f64) -> f64 {
        p_n(u, self.n_poly)
    }

    pub fn energy_density(&self, u: f64) -> f64 {
        f_n(u, self.n_poly, self.lambda)
    }
}

/// `f(u) = log((1-u)/(1+u)) + λu` on (-1,1), `+∞` for `u ≤ -1` and `-∞`
/// for `u ≥ 1`.
pub fn f_log(u: f64, lambda: f64) -> f64 {
    if u <= -1.0 {
        f64::INFINITY
    } else if u >= 1.0 {
        f64::NEG_INFINITY
    } else {
        (-u).ln_1p() - u.ln_1p() + lambda * u
    }
}

/// Primitive of `-f` vanishing at 0:
/// `(1+u)log(1+u) + (1-u)log(1-u) - (λ/2)u²`, extended continuously to ±1.
pub fn big_f(u: f64, lambda: f64) -> Result<f64> {
    if !(u.abs() <= 1.0) {
        return Err(Error::Domain(format!("F is defined on [-1,1], got {u}")));
    }
    let quad = 0.5 * lambda * u * u;
    if u.abs() == 1.0 {
        return Ok(2.0 * std::f64::consts::LN_2 - quad);
    }
    Ok((1.0 + u) * u.ln_1p() + (1.0 - u) * (-u).ln_1p() - quad)
}

/// `p_n(u) = 2 Σ_{i=0}^{n} u^{2i+1}/(2i+1)`, by Horner's rule in `u²`.
#[inline]
pub fn p_n(u: f64, n: usize) -> f64 {
    let s = u * u;
    let mut acc = 1.0 / (2 * n + 1) as f64;
    for i in (0..n).rev() {
        acc = acc * s + 1.0 / (2 * i + 1) as f64;
    }
    2.0 * u * acc
}

/// `p_n'(u) = 2 Σ_{i=0}^{n} u^{2i}`.
pub fn p_n_prime(u: f64, n: usize) -> f64 {
    let s = u * u;
    let mut acc = 1.0;
    for _ in 0..n {
        acc = acc * s + 1.0;
    }
    2.0 * acc
}

/// Finite-n energy density `2 Σ u^{2i+2}/((2i+1)(2i+2)) - (λ/2)u²`,
/// the primitive of `p_n(u) - λu` vanishing at 0.
#[inline]
pub fn f_n(u: f64, n: usize, lambda: f64) -> f64 {
    let s = u * u;
    let coef = |i: usize| 1.0 / ((2 * i + 1) * (2 * i + 2)) as f64;
    let mut acc = coef(n);
    for i in (0..n).rev() {
        acc = acc * s + coef(i);
    }
    2.0 * s * acc - 0.5 * lambda * s
}

//! Noise operators and the constants derived from them.
//!
//! Both supported noise operators are diagonal in the cosine basis. The
//! degenerate variant drives the modes `1..=N` (and possibly more) with
//! amplitudes `b_k`; the white variant is `B = (-A)^{1/2}`, amplitude `kπ`,
//! Galerkin-truncated at the field truncation.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::spectral::{eigen_mu, SpectralField};

/// Diagonal noise operator seen through its mode amplitudes.
pub trait DiagonalNoise {
    /// Amplitude of `B` on `e_k` (for `k ≤ m`).
    fn amplitude(&self, k: usize, m: usize) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    /// `B e_i = b_i e_i` for `i ≥ 1`, with `b_i > 0` on the first `active` modes.
    DegenerateDiagonal { b: Vec<f64>, active: usize },
    /// `B = (-A)^{1/2}`.
    WhiteSqrtLaplacian,
}

impl DiagonalNoise for NoiseSpec {
    fn amplitude(&self, k: usize, m: usize) -> f64 {
        if k == 0 || k > m {
            return 0.0;
        }
        match self {
            NoiseSpec::DegenerateDiagonal { b, .. } => b.get(k - 1).copied().unwrap_or(0.0),
            NoiseSpec::WhiteSqrtLaplacian => k as f64 * PI,
        }
    }
}

impl NoiseSpec {
    pub fn degenerate(b: Vec<f64>, active: usize) -> Self {
        NoiseSpec::DegenerateDiagonal { b, active }
    }

    pub fn is_white(&self) -> bool {
        matches!(self, NoiseSpec::WhiteSqrtLaplacian)
    }

    /// Number of active modes `N` of the degenerate variant.
    pub fn active_modes(&self) -> Result<usize> {
        match self {
            NoiseSpec::DegenerateDiagonal { active, .. } => Ok(*active),
            NoiseSpec::WhiteSqrtLaplacian => Err(Error::Variant(
                "white noise has no active-mode count".into(),
            )),
        }
    }

    /// Mode amplitudes `[0, σ_1, .., σ_M]`.
    pub fn amplitudes(&self, m: usize) -> Vec<f64> {
        (0..=m).map(|k| self.amplitude(k, m)).collect()
    }

    /// Structural checks that do not involve `λ`.
    pub fn check_structure(&self) -> Result<()> {
        if let NoiseSpec::DegenerateDiagonal { b, active } = self {
            if *active == 0 {
                return Err(Error::Validation("active mode count N must be positive".into()));
            }
            if let Some(v) = b.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::Validation(format!("noise amplitude {v} is not a nonnegative number")));
            }
        }
        Ok(())
    }
}

/// `B* e_0 = 0`: the noise leaves the mean untouched.
pub fn validate_a1<N: DiagonalNoise>(spec: &N) -> bool {
    spec.amplitude(0, usize::MAX) == 0.0
}

/// Positivity of `b_1..b_N` and `(N+1)²π² > λ`.
pub fn validate_a2(spec: &NoiseSpec, lambda: f64) -> Result<bool> {
    match spec {
        NoiseSpec::WhiteSqrtLaplacian => Err(Error::Variant(
            "condition on active modes only applies to degenerate noise".into(),
        )),
        NoiseSpec::DegenerateDiagonal { b, active } => {
            let positive = *active > 0 && b.len() >= *active && b[..*active].iter().all(|&v| v > 0.0);
            Ok(positive && eigen_mu(active + 1) > lambda)
        }
    }
}

/// `α = ½ min{π⁴, ((N+1)²π² - λ)(N+1)²π²}`.
pub fn alpha_rate(active: usize, lambda: f64) -> Result<f64> {
    let mu = eigen_mu(active + 1);
    if active == 0 || !(mu > lambda) {
        return Err(Error::Validation(format!(
            "(N+1)^2 pi^2 = {mu} must exceed lambda = {lambda} (N = {active})"
        )));
    }
    Ok(0.5 * (PI.powi(4)).min((mu - lambda) * mu))
}

/// Operator norm of `B^{-1} A Π_l` from `|·|_{-1}` to `L²`.
///
/// Diagonal on `e_1..e_N` with ratio `μ_i / b_i` against the weight
/// `μ_i^{-1/2}`, hence `max_i (iπ)³ / b_i`.
pub fn op_norm_binv_a_pil(spec: &NoiseSpec) -> Result<f64> {
    match spec {
        NoiseSpec::WhiteSqrtLaplacian => Err(Error::Variant(
            "B^-1 A Pi_l is only defined for degenerate noise".into(),
        )),
        NoiseSpec::DegenerateDiagonal { b, active } => {
            if b.len() < *active || b[..*active].iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Validation("b_i must be positive for i <= N".into()));
            }
            Ok((1..=*active)
                .map(|i| (i as f64 * PI).powi(3) / b[i - 1])
                .fold(0.0, f64::max))
        }
    }
}

/// Operator norm of `B*` (white noise: the largest truncated amplitude `Mπ`).
pub fn bstar_norm(spec: &NoiseSpec, m: usize) -> f64 {
    match spec {
        NoiseSpec::DegenerateDiagonal { b, .. } => b.iter().copied().fold(0.0, f64::max),
        NoiseSpec::WhiteSqrtLaplacian => m as f64 * PI,
    }
}

/// `Tr(B(-A)^{-1}B*)` truncated at `m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceValue {
    pub value: f64,
    /// Set when the untruncated trace is infinite.
    pub divergent: bool,
}

pub fn trace_minus1(spec: &NoiseSpec, m: usize) -> TraceValue {
    match spec {
        NoiseSpec::DegenerateDiagonal { b, .. } => TraceValue {
            value: b
                .iter()
                .take(m)
                .enumerate()
                .map(|(i, v)| v * v / eigen_mu(i + 1))
                .sum(),
            divergent: false,
        },
        NoiseSpec::WhiteSqrtLaplacian => TraceValue {
            value: m as f64,
            divergent: true,
        },
    }
}

/// Applies `B^{-1}` to a zero-mean field, returning the `L²` coefficients
/// `[0, (B^{-1}z)_1, ..]`.
///
/// For the degenerate variant `B` is only invertible on `span{e_1..e_N}`;
/// any energy outside that span is a shape error.
pub fn apply_b_inverse(spec: &NoiseSpec, z: &SpectralField) -> Result<Vec<f64>> {
    if z.mean() != 0.0 {
        return Err(Error::Shape("B^-1 acts on zero-mean fields".into()));
    }
    let m = z.truncation();
    let mut out = vec![0.0; m + 1];
    match spec {
        NoiseSpec::WhiteSqrtLaplacian => {
            for k in 1..=m {
                out[k] = z.coeff(k) / (k as f64 * PI);
            }
        }
        NoiseSpec::DegenerateDiagonal { b, active } => {
            for k in 1..=m {
                let c = z.coeff(k);
                if k <= *active && k <= b.len() && b[k - 1] > 0.0 {
                    out[k] = c / b[k - 1];
                } else if c != 0.0 {
                    return Err(Error::Shape(format!(
                        "mode {k} lies outside the range of B"
                    )));
                }
            }
        }
    }
    Ok(out)
}

/// Operator-derived constants used by the Harnack budgets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    pub alpha: f64,
    pub op_norm_binv_a_pil: f64,
    pub bstar_norm: f64,
    pub trace_minus1: f64,
}

impl RateConstants {
    /// Degenerate-noise constants; fails unless the active-mode condition holds.
    pub fn compute(spec: &NoiseSpec, lambda: f64, m: usize) -> Result<Self> {
        if !validate_a2(spec, lambda)? {
            return Err(Error::Validation(format!(
                "noise {spec:?} violates the active-mode condition at lambda = {lambda}"
            )));
        }
        let active = spec.active_modes()?;
        Ok(Self {
            alpha: alpha_rate(active, lambda)?,
            op_norm_binv_a_pil: op_norm_binv_a_pil(spec)?,
            bstar_norm: bstar_norm(spec, m),
            trace_minus1: trace_minus1(spec, m).value,
        })
    }
}

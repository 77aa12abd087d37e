//! Neumann cosine eigenbasis on (0,1).
//!
//! Fields are stored as coefficients in the orthonormal basis
//! `e_0 = 1`, `e_k(θ) = √2 cos(kπθ)`, which diagonalises the Neumann
//! Laplacian `A e_k = -(kπ)² e_k`. Fractional seminorms, projections and the
//! midpoint cosine transform used for pointwise nonlinearities all live here.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

/// `μ_k = (kπ)²`, the negated eigenvalue of `A` on `e_k`.
pub fn eigen_mu(k: usize) -> f64 {
    let w = k as f64 * PI;
    w * w
}

/// A function on (0,1) truncated to modes `0..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    // coeffs[0] is the mean, coeffs[k] the coefficient of e_k.
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(mean: f64, modes: Vec<f64>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Shape("truncation must be positive".into()));
        }
        let mut coeffs = Vec::with_capacity(modes.len() + 1);
        coeffs.push(mean);
        coeffs.extend(modes);
        Self::from_coeffs(coeffs)
    }

    /// Builds a field from `[mean, u_1, .., u_M]`.
    pub fn from_coeffs(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::Shape("truncation must be positive".into()));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::Numerics(format!("coefficient {i} is not finite")));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(truncation: usize) -> Self {
        assert!(truncation > 0, "truncation must be positive");
        Self {
            coeffs: vec![0.0; truncation + 1],
        }
    }

    /// The constant field `c·e_0`.
    pub fn constant(c: f64, truncation: usize) -> Self {
        let mut f = Self::zeros(truncation);
        f.coeffs[0] = c;
        f
    }

    /// `amplitude·e_k` plus `mean·e_0`.
    pub fn single_mode(mean: f64, k: usize, amplitude: f64, truncation: usize) -> Self {
        let mut f = Self::constant(mean, truncation);
        f.coeffs[k] += amplitude;
        f
    }

    /// Pads or truncates a coefficient list `[mean, u_1, ..]` to truncation `m`.
    pub fn from_padded(list: &[f64], m: usize) -> Result<Self> {
        if list.len() > m + 1 {
            let tail = &list[m + 1..];
            if tail.iter().any(|&c| c != 0.0) {
                return Err(Error::Shape(format!(
                    "{} coefficients given for truncation {m}",
                    list.len()
                )));
            }
        }
        let mut coeffs = vec![0.0; m + 1];
        for (dst, src) in coeffs.iter_mut().zip(list) {
            *dst = *src;
        }
        Self::from_coeffs(coeffs)
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn set_mean(&mut self, c: f64) {
        self.coeffs[0] = c;
    }

    /// Coefficients of `e_1..e_M`.
    pub fn modes(&self) -> &[f64] {
        &self.coeffs[1..]
    }

    pub fn truncation(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// All coefficients, mean first.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs[k]
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.truncation() != other.truncation() {
            return Err(Error::Shape(format!(
                "truncations differ: {} vs {}",
                self.truncation(),
                other.truncation()
            )));
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }
}

/// `|u|_γ = (Σ_{k≥1} (kπ)^{2γ} u_k²)^{1/2}`; the mean mode is ignored.
pub fn seminorm(u: &SpectralField, gamma: f64) -> f64 {
    semiscalar_unchecked(u.coeffs(), u.coeffs(), gamma).sqrt()
}

/// `‖u‖_γ = (|u|_γ² + ū²)^{1/2}`.
pub fn norm_gamma(u: &SpectralField, gamma: f64) -> f64 {
    let s = semiscalar_unchecked(u.coeffs(), u.coeffs(), gamma);
    (s + u.mean() * u.mean()).sqrt()
}

/// `(u, v)_γ = Σ_{k≥1} (kπ)^{2γ} u_k v_k`.
pub fn semiscalar(u: &SpectralField, v: &SpectralField, gamma: f64) -> Result<f64> {
    u.check_same(v)?;
    Ok(semiscalar_unchecked(u.coeffs(), v.coeffs(), gamma))
}

pub(crate) fn semiscalar_unchecked(u: &[f64], v: &[f64], gamma: f64) -> f64 {
    u.iter()
        .zip(v)
        .enumerate()
        .skip(1)
        .map(|(k, (a, b))| weight(k, gamma) * a * b)
        .sum()
}

#[inline]
fn weight(k: usize, gamma: f64) -> f64 {
    if gamma == -1.0 {
        1.0 / eigen_mu(k)
    } else if gamma == 0.0 {
        1.0
    } else if gamma == 1.0 {
        eigen_mu(k)
    } else {
        eigen_mu(k).powf(gamma)
    }
}

/// `|u|_{-1}²` over raw coefficients (mean ignored).
#[inline]
pub(crate) fn h_minus1_sq(coeffs: &[f64]) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| c * c / eigen_mu(k))
        .sum()
}

fn check_cutoff(u: &SpectralField, n: usize) -> Result<()> {
    if n >= u.truncation() {
        return Err(Error::Shape(format!(
            "projection index {n} must be below truncation {}",
            u.truncation()
        )));
    }
    Ok(())
}

/// Projection onto `span{e_0, .., e_N}`.
pub fn project_low(u: &SpectralField, n: usize) -> Result<SpectralField> {
    check_cutoff(u, n)?;
    let mut out = u.clone();
    out.coeffs[n + 1..].iter_mut().for_each(|c| *c = 0.0);
    Ok(out)
}

/// Complement of [`project_low`].
pub fn project_high(u: &SpectralField, n: usize) -> Result<SpectralField> {
    check_cutoff(u, n)?;
    let mut out = u.clone();
    out.coeffs[..=n].iter_mut().for_each(|c| *c = 0.0);
    Ok(out)
}

/// Projection onto `span{e_1, e_2, ..}`: zeroes the mean.
pub fn project_nonconstant(u: &SpectralField) -> SpectralField {
    let mut out = u.clone();
    out.coeffs[0] = 0.0;
    out
}

/// Pointwise values on the midpoint grid `θ_j = (j + ½)/Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub values: Vec<f64>,
}

impl GridField {
    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    /// Midpoint-rule quadrature of the grid values over (0,1).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub fn grid_nodes(q: usize) -> Vec<f64> {
    (0..q).map(|j| (j as f64 + 0.5) / q as f64).collect()
}

/// Cached basis table for repeated transforms at fixed `(M, Q)`.
///
/// The midpoint rule integrates `e_k e_l` exactly whenever `k, l < Q`, so
/// analysis inverts synthesis for `Q ≥ M + 1`.
#[derive(Debug, Clone)]
pub struct CosineTransform {
    m: usize,
    q: usize,
    // table[k * q + j] = e_k(θ_j)
    table: Vec<f64>,
}

impl CosineTransform {
    pub fn new(m: usize, q: usize) -> Result<Self> {
        if m == 0 || q == 0 {
            return Err(Error::Shape("transform sizes must be positive".into()));
        }
        let nodes = grid_nodes(q);
        let mut table = Vec::with_capacity((m + 1) * q);
        table.extend(std::iter::repeat_n(1.0, q));
        for k in 1..=m {
            let w = k as f64 * PI;
            table.extend(nodes.iter().map(|&t| SQRT_2 * (w * t).cos()));
        }
        Ok(Self { m, q, table })
    }

    pub fn truncation(&self) -> usize {
        self.m
    }

    pub fn grid_size(&self) -> usize {
        self.q
    }

    /// Evaluates coefficients `[c_0..c_M]` on the grid, writing into `out`.
    pub fn synthesize_into(&self, coeffs: &[f64], out: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.m + 1);
        debug_assert_eq!(out.len(), self.q);
        out.iter_mut().for_each(|v| *v = coeffs[0]);
        for (k, &c) in coeffs.iter().enumerate().skip(1) {
            if c == 0.0 {
                continue;
            }
            let row = &self.table[k * self.q..(k + 1) * self.q];
            for (o, b) in out.iter_mut().zip(row) {
                *o += c * b;
            }
        }
    }

    /// Discrete projection of grid values onto `e_0..e_M`, writing into `out`.
    pub fn analyze_into(&self, values: &[f64], out: &mut [f64]) {
        debug_assert_eq!(values.len(), self.q);
        debug_assert_eq!(out.len(), self.m + 1);
        let inv_q = 1.0 / self.q as f64;
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.table[k * self.q..(k + 1) * self.q];
            let dot: f64 = row.iter().zip(values).map(|(a, b)| a * b).sum();
            *o = dot * inv_q;
        }
    }

    pub fn synthesize(&self, u: &SpectralField) -> Result<GridField> {
        if u.truncation() != self.m {
            return Err(Error::Shape(format!(
                "field truncation {} but transform built for {}",
                u.truncation(),
                self.m
            )));
        }
        let mut values = vec![0.0; self.q];
        self.synthesize_into(u.coeffs(), &mut values);
        Ok(GridField { values })
    }

    pub fn analyze(&self, g: &GridField) -> Result<SpectralField> {
        if g.grid_size() != self.q {
            return Err(Error::Shape(format!(
                "grid of size {} but transform built for {}",
                g.grid_size(),
                self.q
            )));
        }
        if g.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics("grid contains non-finite values".into()));
        }
        let mut coeffs = vec![0.0; self.m + 1];
        self.analyze_into(&g.values, &mut coeffs);
        SpectralField::from_coeffs(coeffs)
    }
}

/// One-shot synthesis of `u` on `q` midpoint nodes.
pub fn synthesize(u: &SpectralField, q: usize) -> Result<GridField> {
    CosineTransform::new(u.truncation(), q)?.synthesize(u)
}

/// One-shot analysis of grid values into modes `0..=m`.
pub fn analyze(g: &GridField, m: usize) -> Result<SpectralField> {
    CosineTransform::new(m, g.grid_size())?.analyze(g)
}

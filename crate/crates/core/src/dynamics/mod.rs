//! Galerkin time integration of the approximating stochastic Cahn-Hilliard
//! equation
//!
//! ```text
//! du = -½ A { A u - p_n(u) + λ u } dt + B dW
//! ```
//!
//! truncated to the modes `0..=M` of the cosine basis. In mode `k ≥ 1` the
//! linear part is `-L_k u_k` with `L_k = ½ μ_k (μ_k - λ)`; the nonlinearity
//! `-½ μ_k (p_n(u))_k` is evaluated pointwise on the quadrature grid and
//! treated explicitly. Mode 0 is never touched, so the mass is conserved
//! exactly.

mod coupling;
mod ensemble;
mod output;
mod schedule;

pub use coupling::{
    DegenerateCoupling, DegenerateCouplingRun, WhiteCoupling, WhiteCouplingRun, WhiteRecord,
};
pub use coupling::CoupledPath;
pub use ensemble::{
    derive_seed, path_rng, path_seed, run_paths, simulate_ensemble, EnsembleResult, PathRng,
};
pub use output::{write_endpoints_csv, write_trajectory_csv, Trajectory, TrajectoryFormat};
pub use schedule::GammaSchedule;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::noise::{validate_a1, DiagonalNoise, NoiseSpec};
use crate::potential::p_n;
use crate::spectral::{eigen_mu, h_minus1_sq, CosineTransform, SpectralField};

/// Time-stepping scheme for the stiff linear part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// `u⁺ = (u + dt·N(u) + σ ΔW) / (1 + dt·L)`.
    Imex,
    /// Exponential Euler: the linear Ornstein-Uhlenbeck part of every mode is
    /// integrated exactly, the nonlinearity with the `φ₁` weight.
    ExponentialEuler,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Imex => "imex",
            Scheme::ExponentialEuler => "exponential",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "imex" => Some(Scheme::Imex),
            "exponential" | "exponential-euler" => Some(Scheme::ExponentialEuler),
            _ => None,
        }
    }
}

/// Physical and numerical parameters of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub lambda: f64,
    pub n_poly: usize,
    /// Truncation `M`.
    pub modes: usize,
    pub dt: f64,
    /// Quadrature grid size; `None` means `4M`.
    pub grid: Option<usize>,
    pub mass_c: f64,
    pub noise: NoiseSpec,
    pub taming_threshold: f64,
    /// When false the polynomial term is dropped entirely.
    pub nonlinearity: bool,
    pub scheme: Scheme,
    /// Paths whose `|u|_{-1}` exceeds this are aborted.
    pub divergence_guard: f64,
}

impl ModelParams {
    pub fn new(lambda: f64, noise: NoiseSpec) -> Self {
        Self {
            lambda,
            n_poly: 2,
            modes: 32,
            dt: 1e-4,
            grid: None,
            mass_c: 0.0,
            noise,
            taming_threshold: 1e6,
            nonlinearity: true,
            scheme: Scheme::ExponentialEuler,
            divergence_guard: 1e6,
        }
    }

    pub fn with_modes(mut self, m: usize) -> Self {
        self.modes = m;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_n_poly(mut self, n: usize) -> Self {
        self.n_poly = n;
        self
    }

    pub fn with_mass(mut self, c: f64) -> Self {
        self.mass_c = c;
        self
    }

    pub fn with_grid(mut self, q: usize) -> Self {
        self.grid = Some(q);
        self
    }

    pub fn with_scheme(mut self, s: Scheme) -> Self {
        self.scheme = s;
        self
    }

    pub fn without_nonlinearity(mut self) -> Self {
        self.nonlinearity = false;
        self
    }

    pub fn grid_size(&self) -> usize {
        self.grid.unwrap_or(4 * self.modes)
    }

    /// Rejects parameter sets that the integrator cannot honour.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be a nonnegative number, got {}", self.lambda));
        }
        if self.modes == 0 {
            return bad("truncation M must be positive".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.grid_size() <= self.modes {
            return bad(format!(
                "grid size {} must exceed the truncation {}",
                self.grid_size(),
                self.modes
            ));
        }
        if !(self.mass_c > -1.0 && self.mass_c < 1.0) {
            return bad(format!("mass c must lie in (-1,1), got {}", self.mass_c));
        }
        if !(self.taming_threshold > 0.0) {
            return bad("taming threshold must be positive".into());
        }
        if !(self.divergence_guard > 0.0) {
            return bad("divergence guard must be positive".into());
        }
        self.noise.check_structure()?;
        if !validate_a1(&self.noise) {
            return bad("noise acts on the mean mode".into());
        }
        if self.scheme == Scheme::Imex {
            let budget = self.dt * 0.5 * self.lambda * eigen_mu(self.modes);
            if budget > 1.0 {
                return bad(format!(
                    "dt * lambda * mu_M / 2 = {budget} exceeds 1 for the semi-implicit scheme"
                ));
            }
        }
        Ok(())
    }
}

/// Per-mode update weights for one step size:
/// `u⁺_k = decay_k u_k + gain_k dt (N_k + extra_k) + noise_k z_k`.
#[derive(Debug, Clone)]
pub struct StepCoefficients {
    pub dt: f64,
    pub decay: Vec<f64>,
    pub gain: Vec<f64>,
    pub noise: Vec<f64>,
}

/// Scratch buffers owned by one path.
#[derive(Debug, Clone)]
pub struct Scratch {
    grid: Vec<f64>,
    nonlinear: Vec<f64>,
    z: Vec<f64>,
    extra: Vec<f64>,
}

/// Immutable integrator shared by all paths of an ensemble.
#[derive(Debug, Clone)]
pub struct Integrator {
    params: ModelParams,
    transform: Option<CosineTransform>,
    mu: Vec<f64>,
    linear: Vec<f64>,
    sigma: Vec<f64>,
    noise_modes: Vec<usize>,
    base: StepCoefficients,
}

impl Integrator {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let m = params.modes;
        let transform = if params.nonlinearity {
            Some(CosineTransform::new(m, params.grid_size())?)
        } else {
            None
        };
        let mu: Vec<f64> = (0..=m).map(eigen_mu).collect();
        let linear: Vec<f64> = mu.iter().map(|&u| 0.5 * u * (u - params.lambda)).collect();
        let sigma = params.noise.amplitudes(m);
        let noise_modes = (1..=m).filter(|&k| sigma[k] > 0.0).collect();
        let mut integ = Self {
            params: params.clone(),
            transform,
            mu,
            linear,
            sigma,
            noise_modes,
            base: StepCoefficients {
                dt: 0.0,
                decay: vec![],
                gain: vec![],
                noise: vec![],
            },
        };
        integ.base = integ.coefficients(params.dt)?;
        Ok(integ)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn base(&self) -> &StepCoefficients {
        &self.base
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn noise_modes(&self) -> &[usize] {
        &self.noise_modes
    }

    pub fn scratch(&self) -> Scratch {
        let m = self.params.modes;
        Scratch {
            grid: vec![0.0; self.params.grid_size()],
            nonlinear: vec![0.0; m + 1],
            z: vec![0.0; m + 1],
            extra: vec![0.0; m + 1],
        }
    }

    /// Update weights for step size `dt`.
    pub fn coefficients(&self, dt: f64) -> Result<StepCoefficients> {
        let m = self.params.modes;
        let mut decay = vec![1.0; m + 1];
        let mut gain = vec![1.0; m + 1];
        let mut noise = vec![0.0; m + 1];
        for k in 1..=m {
            let l = self.linear[k];
            let s = self.sigma[k];
            match self.params.scheme {
                Scheme::Imex => {
                    let denom = 1.0 + dt * l;
                    if !(denom > 0.0) {
                        return Err(Error::Stability(format!(
                            "implicit denominator {denom} <= 0 in mode {k}"
                        )));
                    }
                    decay[k] = 1.0 / denom;
                    gain[k] = 1.0 / denom;
                    noise[k] = s * dt.sqrt() / denom;
                }
                Scheme::ExponentialEuler => {
                    let x = l * dt;
                    decay[k] = (-x).exp();
                    // φ₁(x) = (1 - e^{-x})/x and the exact OU variance factor
                    // (1 - e^{-2x})/(2x); both → 1 as x → 0.
                    let (phi1, var) = if x.abs() < 1e-12 {
                        (1.0, 1.0)
                    } else {
                        (-(-x).exp_m1() / x, -(-2.0 * x).exp_m1() / (2.0 * x))
                    };
                    gain[k] = phi1;
                    noise[k] = s * (dt * var).sqrt();
                }
            }
            if !(decay[k].is_finite() && gain[k].is_finite() && noise[k].is_finite()) {
                return Err(Error::Stability(format!("step weights overflow in mode {k}")));
            }
        }
        Ok(StepCoefficients {
            dt,
            decay,
            gain,
            noise,
        })
    }

    /// Writes `-½ μ_k (p_n(u))_k` (tamed) into `out`; zero when the
    /// nonlinearity is disabled.
    fn nonlinear_into(&self, u: &[f64], grid: &mut [f64], out: &mut [f64]) {
        let Some(tr) = &self.transform else {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        };
        tr.synthesize_into(u, grid);
        let n = self.params.n_poly;
        let cap = self.params.taming_threshold;
        for g in grid.iter_mut() {
            *g = p_n(*g, n).clamp(-cap, cap);
        }
        tr.analyze_into(grid, out);
        out[0] = 0.0;
        for (o, mu) in out.iter_mut().zip(&self.mu).skip(1) {
            *o *= -0.5 * mu;
        }
    }

    /// Full deterministic drift in mode coordinates.
    pub fn drift(&self, u: &SpectralField) -> Result<SpectralField> {
        self.check_truncation(u)?;
        let m = self.params.modes;
        let mut grid = vec![0.0; self.params.grid_size()];
        let mut nl = vec![0.0; m + 1];
        self.nonlinear_into(u.coeffs(), &mut grid, &mut nl);
        let mut d = vec![0.0; m + 1];
        for k in 1..=m {
            d[k] = -self.linear[k] * u.coeff(k) + nl[k];
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics("drift evaluation overflowed".into()));
        }
        SpectralField::from_coeffs(d)
    }

    fn check_truncation(&self, u: &SpectralField) -> Result<()> {
        if u.truncation() != self.params.modes {
            return Err(Error::Shape(format!(
                "field truncation {} but model uses {}",
                u.truncation(),
                self.params.modes
            )));
        }
        Ok(())
    }

    /// Fills `scratch.z` with standard normals on the noise modes.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut Scratch) {
        draw_standard(&self.noise_modes, rng, &mut scratch.z);
    }

    /// Advances raw coefficients by one step with standard-normal inputs `z`
    /// and an optional additive drift `extra`.
    #[allow(clippy::too_many_arguments)]
    pub fn advance(
        &self,
        u: &mut [f64],
        z: &[f64],
        extra: Option<&[f64]>,
        coeffs: &StepCoefficients,
        grid: &mut [f64],
        nonlinear: &mut [f64],
        step: usize,
    ) -> Result<()> {
        self.nonlinear_into(u, grid, nonlinear);
        let dt = coeffs.dt;
        for k in 1..u.len() {
            let forcing = nonlinear[k] + extra.map_or(0.0, |e| e[k]);
            u[k] = coeffs.decay[k] * u[k] + coeffs.gain[k] * dt * forcing + coeffs.noise[k] * z[k];
        }
        self.guard(u, step)
    }

    fn guard(&self, u: &[f64], step: usize) -> Result<()> {
        let norm_sq = h_minus1_sq(u);
        if !norm_sq.is_finite() {
            return Err(Error::Divergence {
                step,
                reason: "non-finite state".into(),
            });
        }
        if norm_sq.sqrt() > self.params.divergence_guard {
            return Err(Error::Divergence {
                step,
                reason: format!("|u|_-1 = {} exceeds guard", norm_sq.sqrt()),
            });
        }
        Ok(())
    }

    /// One base step driven by fresh noise from `rng`.
    pub fn step_random<R: Rng + ?Sized>(
        &self,
        u: &mut SpectralField,
        rng: &mut R,
        scratch: &mut Scratch,
        step: usize,
    ) -> Result<()> {
        self.draw_noise(rng, scratch);
        let Scratch {
            grid, nonlinear, z, ..
        } = scratch;
        self.advance(u.coeffs_mut(), z, None, &self.base, grid, nonlinear, step)
    }

    /// One step with prescribed noise increments `dw_k = σ_k √dt Z_k` and an
    /// optional extra drift.
    pub fn step_field(
        &self,
        state: &SpectralField,
        dw: &[f64],
        extra: Option<&SpectralField>,
    ) -> Result<SpectralField> {
        self.check_truncation(state)?;
        let m = self.params.modes;
        if dw.len() != m + 1 {
            return Err(Error::Shape(format!(
                "expected {} noise increments, got {}",
                m + 1,
                dw.len()
            )));
        }
        if let Some(e) = extra {
            self.check_truncation(e)?;
        }
        let sqrt_dt = self.params.dt.sqrt();
        let mut z = vec![0.0; m + 1];
        for &k in &self.noise_modes {
            z[k] = dw[k] / (self.sigma[k] * sqrt_dt);
        }
        let mut u = state.clone();
        let mut grid = vec![0.0; self.params.grid_size()];
        let mut nl = vec![0.0; m + 1];
        self.advance(
            u.coeffs_mut(),
            &z,
            extra.map(|e| e.coeffs()),
            &self.base,
            &mut grid,
            &mut nl,
            0,
        )?;
        Ok(u)
    }

    /// Runs one path from `x`, calling `observe(step, t, state)` after every
    /// step (and once at step 0).
    pub fn run_path<R: Rng + ?Sized, F: FnMut(usize, f64, &SpectralField)>(
        &self,
        x: &SpectralField,
        steps: usize,
        rng: &mut R,
        mut observe: F,
    ) -> Result<SpectralField> {
        self.check_truncation(x)?;
        let mut u = x.clone();
        let mut scratch = self.scratch();
        observe(0, 0.0, &u);
        for s in 1..=steps {
            self.step_random(&mut u, rng, &mut scratch, s)?;
            observe(s, s as f64 * self.params.dt, &u);
        }
        Ok(u)
    }

    /// States at each of `times` (ascending, rounded to whole steps).
    pub fn states_at<R: Rng + ?Sized>(
        &self,
        x: &SpectralField,
        times: &[f64],
        rng: &mut R,
    ) -> Result<Vec<SpectralField>> {
        let marks: Vec<usize> = times.iter().map(|&t| self.steps_for(t)).collect();
        if marks.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Validation("observation times must be ascending".into()));
        }
        let last = marks.last().copied().unwrap_or(0);
        let mut out = Vec::with_capacity(times.len());
        let mut next = 0;
        self.run_path(x, last, rng, |s, _, u| {
            while next < marks.len() && marks[next] == s {
                out.push(u.clone());
                next += 1;
            }
        })?;
        Ok(out)
    }

    pub fn steps_for(&self, t: f64) -> usize {
        (t / self.params.dt).round().max(0.0) as usize
    }
}

pub(crate) fn draw_standard<R: Rng + ?Sized>(modes: &[usize], rng: &mut R, z: &mut [f64]) {
    for &k in modes {
        z[k] = rng.sample(StandardNormal);
    }
}

/// Deterministic drift `-½ A {A u - p_n(u) + λ u}` in mode coordinates.
pub fn drift_spectral(u: &SpectralField, p: &ModelParams) -> Result<SpectralField> {
    let p = ModelParams {
        modes: u.truncation(),
        ..p.clone()
    };
    Integrator::new(&p)?.drift(u)
}

/// One integrator step from `state` with noise increments `dw` (one entry
/// per mode, `σ_k √dt Z_k`; entry 0 ignored).
pub fn step_imex(
    state: &SpectralField,
    p: &ModelParams,
    dw: &[f64],
    extra_drift: Option<&SpectralField>,
) -> Result<SpectralField> {
    Integrator::new(p)?.step_field(state, dw, extra_drift)
}

/// Noise amplitudes of `p` as a vector indexed by mode.
pub fn noise_amplitudes(p: &ModelParams) -> Vec<f64> {
    (0..=p.modes).map(|k| p.noise.amplitude(k, p.modes)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn white(lambda: f64) -> ModelParams {
        ModelParams::new(lambda, NoiseSpec::WhiteSqrtLaplacian)
    }

    #[test]
    fn drift_examples() {
        let u = SpectralField::single_mode(0.0, 1, 0.1, 8);
        let p = white(1.0).with_n_poly(0).with_modes(8);
        let d = drift_spectral(&u, &p).unwrap();
        let expected = -0.5 * PI * PI * 0.1 * (PI * PI + 2.0 - 1.0);
        assert!((d.coeff(1) - expected).abs() < 1e-12);
        assert!((d.coeff(1) + 5.36397).abs() < 1e-4);
        assert_eq!(d.coeff(0), 0.0);
        for k in 2..=8 {
            assert!(d.coeff(k).abs() < 1e-12);
        }

        let d0 = drift_spectral(&u, &white(0.0).with_n_poly(0).with_modes(8)).unwrap();
        assert!((d0.coeff(1) + 5.85745).abs() < 1e-4);

        let c = SpectralField::constant(0.3, 8);
        let dc = drift_spectral(&c, &white(1.0).with_modes(8)).unwrap();
        assert!(dc.coeffs().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_state_is_equilibrium() {
        for scheme in [Scheme::Imex, Scheme::ExponentialEuler] {
            let p = white(1.0).with_modes(8).with_scheme(scheme);
            let zero = SpectralField::zeros(8);
            let next = step_imex(&zero, &p, &[0.0; 9], None).unwrap();
            assert_eq!(next, zero);
        }
    }

    #[test]
    fn mean_is_exactly_conserved() {
        let p = white(2.0).with_modes(16).with_mass(0.37);
        let integ = Integrator::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = SpectralField::constant(0.37, 16);
        let end = integ.run_path(&x, 2000, &mut rng, |_, _, u| {
            assert_eq!(u.mean(), 0.37);
        });
        assert_eq!(end.unwrap().mean(), 0.37);
    }

    #[test]
    fn imex_matches_formula() {
        let p = white(1.0).with_modes(4).with_scheme(Scheme::Imex).with_dt(1e-4);
        let u = SpectralField::from_coeffs(vec![0.0, 0.1, -0.05, 0.02, 0.0]).unwrap();
        let dw = vec![0.0, 0.01, -0.02, 0.005, 0.0];
        let next = step_imex(&u, &p, &dw, None).unwrap();
        let nl = Integrator::new(&p).unwrap().drift(&u).unwrap();
        for k in 1..=4 {
            let mu = eigen_mu(k);
            let l = 0.5 * mu * (mu - 1.0);
            let explicit = nl.coeff(k) + l * u.coeff(k);
            let expect = (u.coeff(k) + 1e-4 * explicit + dw[k]) / (1.0 + 1e-4 * l);
            assert!((next.coeff(k) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn imex_rejects_nonpositive_denominator() {
        let p = white(50.0).with_modes(1).with_scheme(Scheme::Imex).with_dt(1e-3);
        let integ = Integrator::new(&p);
        assert!(integ.is_ok());
        let integ = integ.unwrap();
        assert!(matches!(integ.coefficients(10.0), Err(Error::Stability(_))));
    }

    #[test]
    fn divergence_guard_trips() {
        let mut p = white(1.0).with_modes(4);
        p.divergence_guard = 1e-3;
        let integ = Integrator::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = SpectralField::single_mode(0.0, 1, 0.5, 4);
        match integ.run_path(&x, 10, &mut rng, |_, _, _| {}) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    /// Stationary variance of the scalar recursion `u⁺ = a u + s Z` is
    /// `s² / (1 - a²)`.
    fn scheme_variance(a: f64, s: f64) -> f64 {
        s * s / (1.0 - a * a)
    }

    #[test]
    fn linear_stationary_variance_of_both_schemes() {
        let dt = 1e-4;
        for scheme in [Scheme::Imex, Scheme::ExponentialEuler] {
            let p = white(0.0)
                .without_nonlinearity()
                .with_modes(5)
                .with_dt(dt)
                .with_scheme(scheme);
            let integ = Integrator::new(&p).unwrap();
            let c = integ.base();
            for k in 1..=5 {
                let v = scheme_variance(c.decay[k], c.noise[k]);
                let target = 1.0 / eigen_mu(k);
                match scheme {
                    Scheme::ExponentialEuler => assert!((v / target - 1.0).abs() < 1e-10),
                    Scheme::Imex => {
                        let h = 0.5 * dt * eigen_mu(k).powi(2);
                        assert!((v / target - 1.0 / (1.0 + h / 2.0)).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn linear_semigroup_without_noise() {
        let p = ModelParams::new(0.0, NoiseSpec::degenerate(vec![0.0], 1))
            .without_nonlinearity()
            .with_modes(6)
            .with_dt(1e-5);
        let integ = Integrator::new(&p).unwrap();
        let x = SpectralField::from_coeffs(vec![0.1, 0.3, -0.2, 0.1, 0.0, 0.05, 0.01]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = 0.003;
        let end = integ.states_at(&x, &[t], &mut rng).unwrap().remove(0);
        for k in 1..=6 {
            let exact = (-0.5 * eigen_mu(k).powi(2) * t).exp() * x.coeff(k);
            assert!((end.coeff(k) - exact).abs() < 1e-12, "mode {k}");
        }
        assert_eq!(end.mean(), 0.1);
    }

    #[test]
    fn validation_rejects_bad_params() {
        assert!(white(1.0).with_mass(1.0).validate().is_err());
        assert!(white(1.0).with_dt(0.0).validate().is_err());
        assert!(white(1.0).with_modes(8).with_grid(8).validate().is_err());
        assert!(white(-1.0).validate().is_err());
        assert!(white(10.0)
            .with_scheme(Scheme::Imex)
            .with_dt(1e-4)
            .validate()
            .is_err());
        assert!(white(10.0).with_scheme(Scheme::Imex).with_dt(1e-5).validate().is_ok());
    }
}

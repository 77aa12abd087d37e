//! Couplings by change of measure.
//!
//! Both constructions run a partner path whose extra drift is absorbed into
//! the noise: at each step the partner sees `z + δ` where `δ_k = g_k dt e_k / s_k`
//! (`e` the extra drift, `g_k dt` and `s_k` the drift and noise weights of the
//! scheme). Because `δ` only depends on the state at the start of the step,
//! reweighting by `Π exp(-⟨δ, z⟩ - ½|δ|²)` turns the partner into an exact
//! sample of the uncoupled scheme started from its own initial value.

use rand::Rng;

use super::{draw_standard, Integrator, ModelParams, Scratch, StepCoefficients};
use crate::dynamics::GammaSchedule;
use crate::error::{Error, Result};
use crate::noise::{RateConstants, NoiseSpec};
use crate::spectral::{eigen_mu, h_minus1_sq, SpectralField};

/// A pair of evolving fields and the accumulated reweighting quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPath {
    pub u: SpectralField,
    pub partner: SpectralField,
    pub t: f64,
    /// Accumulated log of the Girsanov density.
    pub log_weight: f64,
    /// `∫ |Y|²_{-1} / γ² ds` (white coupling only).
    pub ledger_integral: f64,
    /// Running maximum of `|ξ(t)|` (degenerate coupling only).
    pub xi_sup: f64,
    /// `½ Σ |δ|²`, the discrete counterpart of `½ ∫ |shift|² ds`.
    pub shift_energy: f64,
    pub steps: usize,
}

impl CoupledPath {
    pub fn new(x: SpectralField, y: SpectralField) -> Result<Self> {
        if x.truncation() != y.truncation() {
            return Err(Error::Shape("coupled fields must share a truncation".into()));
        }
        if (x.mean() - y.mean()).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "coupled fields must share their mass: {} vs {}",
                x.mean(),
                y.mean()
            )));
        }
        Ok(Self {
            u: x,
            partner: y,
            t: 0.0,
            log_weight: 0.0,
            ledger_integral: 0.0,
            xi_sup: 0.0,
            shift_energy: 0.0,
            steps: 0,
        })
    }

    /// `|u - partner|_{-1}`.
    pub fn distance(&self) -> f64 {
        distance_sq(&self.u, &self.partner).sqrt()
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

fn distance_sq(a: &SpectralField, b: &SpectralField) -> f64 {
    let d: Vec<f64> = a
        .coeffs()
        .iter()
        .zip(b.coeffs())
        .map(|(x, y)| x - y)
        .collect();
    h_minus1_sq(&d)
}

/// Advances both members of the pair; the partner gets `extra` on top.
/// Returns the log-weight increment.
fn advance_pair(
    integ: &Integrator,
    path: &mut CoupledPath,
    coeffs: &StepCoefficients,
    scratch: &mut Scratch,
) -> Result<f64> {
    let Scratch {
        grid,
        nonlinear,
        z,
        extra,
        ..
    } = scratch;
    let mut dlog = 0.0;
    let mut energy = 0.0;
    for k in 1..extra.len() {
        if extra[k] == 0.0 {
            continue;
        }
        if coeffs.noise[k] == 0.0 {
            return Err(Error::Shape(format!(
                "coupling drift in mode {k} is outside the range of the noise"
            )));
        }
        let delta = coeffs.gain[k] * coeffs.dt * extra[k] / coeffs.noise[k];
        dlog += -delta * z[k] - 0.5 * delta * delta;
        energy += 0.5 * delta * delta;
    }
    let step = path.steps + 1;
    integ.advance(path.u.coeffs_mut(), z, None, coeffs, grid, nonlinear, step)?;
    integ.advance(
        path.partner.coeffs_mut(),
        z,
        Some(extra),
        coeffs,
        grid,
        nonlinear,
        step,
    )?;
    path.log_weight += dlog;
    path.shift_energy += energy;
    path.t += coeffs.dt;
    path.steps = step;
    Ok(dlog)
}

/// Coupling for degenerate diagonal noise: the partner replaces `λ v` by
/// `λ Π_h v + λ Π_l u`, which contracts `u - v` at rate `α` in `|·|_{-1}`.
#[derive(Debug, Clone)]
pub struct DegenerateCoupling {
    integ: Integrator,
    active: usize,
    b: Vec<f64>,
    rates: RateConstants,
}

/// Summary of one degenerate coupling run.
#[derive(Debug, Clone)]
pub struct DegenerateCouplingRun {
    pub path: CoupledPath,
    pub initial_distance: f64,
    /// `sup_t |u - v|_{-1} e^{αt} / |x - y|_{-1}`.
    pub max_contraction_ratio: f64,
    /// `sup_t |ξ(t)| / ((λ/2) ‖B^{-1}AΠ_l‖ e^{-αt} |x - y|_{-1})`.
    pub max_xi_ratio: f64,
}

impl DegenerateCoupling {
    pub fn new(p: &ModelParams) -> Result<Self> {
        let NoiseSpec::DegenerateDiagonal { b, active } = &p.noise else {
            return Err(Error::Variant("degenerate coupling needs diagonal noise".into()));
        };
        let rates = RateConstants::compute(&p.noise, p.lambda, p.modes)?;
        if *active > p.modes {
            return Err(Error::Validation(format!(
                "active modes N = {active} exceed the truncation {}",
                p.modes
            )));
        }
        Ok(Self {
            integ: Integrator::new(p)?,
            active: *active,
            b: b.clone(),
            rates,
        })
    }

    pub fn integrator(&self) -> &Integrator {
        &self.integ
    }

    pub fn rates(&self) -> &RateConstants {
        &self.rates
    }

    /// `ξ = (λ/2) B^{-1} A Π_l (u - v)` in `L²` coordinates.
    pub fn xi(&self, path: &CoupledPath) -> Vec<f64> {
        let lambda = self.integ.params().lambda;
        (1..=self.active)
            .map(|k| {
                let x = path.u.coeff(k) - path.partner.coeff(k);
                -0.5 * lambda * eigen_mu(k) * x / self.b[k - 1]
            })
            .collect()
    }

    /// One synchronous step with standard-normal inputs already in
    /// `scratch`; use [`Self::step`] to draw them.
    pub fn step_with_noise(&self, path: &mut CoupledPath, scratch: &mut Scratch) -> Result<()> {
        let lambda = self.integ.params().lambda;
        let xi_norm = self.xi(path).iter().map(|v| v * v).sum::<f64>().sqrt();
        path.xi_sup = path.xi_sup.max(xi_norm);
        scratch.extra.iter_mut().for_each(|v| *v = 0.0);
        for k in 1..=self.active {
            let x = path.u.coeff(k) - path.partner.coeff(k);
            scratch.extra[k] = 0.5 * lambda * eigen_mu(k) * x;
        }
        advance_pair(&self.integ, path, self.integ.base(), scratch)?;
        Ok(())
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        path: &mut CoupledPath,
        rng: &mut R,
        scratch: &mut Scratch,
    ) -> Result<()> {
        draw_standard(self.integ.noise_modes(), rng, &mut scratch.z);
        self.step_with_noise(path, scratch)
    }

    /// Runs the coupled pair up to `t_final`, calling `observe` after every
    /// step.
    pub fn run<R: Rng + ?Sized, F: FnMut(&CoupledPath)>(
        &self,
        x: &SpectralField,
        y: &SpectralField,
        t_final: f64,
        rng: &mut R,
        mut observe: F,
    ) -> Result<DegenerateCouplingRun> {
        let mut path = CoupledPath::new(x.clone(), y.clone())?;
        let mut scratch = self.integ.scratch();
        let steps = self.integ.steps_for(t_final);
        let d0 = path.distance();
        let alpha = self.rates.alpha;
        let lambda = self.integ.params().lambda;
        let xi_scale = 0.5 * lambda * self.rates.op_norm_binv_a_pil * d0;
        let mut max_ratio = if d0 > 0.0 { 1.0f64 } else { 0.0 };
        let mut max_xi_ratio = 0.0f64;
        observe(&path);
        for _ in 0..steps {
            let t = path.t;
            self.step(&mut path, rng, &mut scratch)?;
            if d0 > 0.0 {
                let xi_now = path.xi_sup;
                max_xi_ratio = max_xi_ratio.max(xi_now / (xi_scale * (-alpha * t).exp()));
                max_ratio = max_ratio.max(path.distance() * (alpha * path.t).exp() / d0);
            }
            observe(&path);
        }
        Ok(DegenerateCouplingRun {
            path,
            initial_distance: d0,
            max_contraction_ratio: max_ratio,
            max_xi_ratio,
        })
    }
}

/// Coupling for `B = (-A)^{1/2}`: the partner gets the extra drift
/// `ℵ(u - w)/γ(t)` and meets `u` at the horizon.
#[derive(Debug, Clone)]
pub struct WhiteCoupling {
    integ: Integrator,
    schedule: GammaSchedule,
    /// Local steps obey `dt_local ≤ κ γ(t)`.
    pub kappa: f64,
    /// Integration stops at `T - end_offset`.
    pub end_offset: f64,
    /// Success threshold on `|Y(T - ε)|_{-1} / |x - y|_{-1}`.
    pub coupling_tol: f64,
}

/// One recorded instant of a white coupling run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhiteRecord {
    pub t: f64,
    pub distance: f64,
    pub gamma: f64,
    /// `∫|Y|²/γ² ds + |Y(t)|²/(aγ(t))`.
    pub ledger: f64,
}

#[derive(Debug, Clone)]
pub struct WhiteCouplingRun {
    pub path: CoupledPath,
    pub initial_distance: f64,
    pub final_distance: f64,
    /// `sup_t ledger(t) / (|x-y|²/(aγ(0)))`.
    pub max_ledger_ratio: f64,
    /// `shift_energy / (|x-y|²/(2aγ(0)))` at the end of the run.
    pub shift_ratio: f64,
    pub coupled: bool,
    pub records: Vec<WhiteRecord>,
}

impl WhiteCoupling {
    pub fn new(p: &ModelParams, schedule: GammaSchedule) -> Result<Self> {
        if !p.noise.is_white() {
            return Err(Error::Variant("white coupling needs B = (-A)^(1/2)".into()));
        }
        if schedule.lambda() != p.lambda {
            return Err(Error::Validation("schedule and model disagree on lambda".into()));
        }
        Ok(Self {
            integ: Integrator::new(p)?,
            schedule,
            kappa: 0.5,
            end_offset: 1e-6 * schedule.horizon(),
            coupling_tol: 1e-4,
        })
    }

    pub fn integrator(&self) -> &Integrator {
        &self.integ
    }

    pub fn schedule(&self) -> &GammaSchedule {
        &self.schedule
    }

    /// One step of size `dt_local` with the standard normals in `scratch`.
    pub fn step_with_noise(
        &self,
        path: &mut CoupledPath,
        coeffs: &StepCoefficients,
        scratch: &mut Scratch,
    ) -> Result<()> {
        let gamma = self.schedule.value(path.t)?;
        if path.t + coeffs.dt > self.schedule.horizon() {
            return Err(Error::Schedule("step crosses the coupling horizon".into()));
        }
        let (u, w) = (path.u.coeffs(), path.partner.coeffs());
        scratch.extra[0] = 0.0;
        for k in 1..scratch.extra.len() {
            scratch.extra[k] = (u[k] - w[k]) / gamma;
        }
        let y_sq = distance_sq(&path.u, &path.partner);
        advance_pair(&self.integ, path, coeffs, scratch)?;
        path.ledger_integral += y_sq / (gamma * gamma) * coeffs.dt;
        Ok(())
    }

    pub fn run<R: Rng + ?Sized>(
        &self,
        x: &SpectralField,
        y: &SpectralField,
        rng: &mut R,
        record: bool,
    ) -> Result<WhiteCouplingRun> {
        let mut path = CoupledPath::new(x.clone(), y.clone())?;
        let mut scratch = self.integ.scratch();
        let horizon = self.schedule.horizon();
        let a = self.schedule.a();
        let t_stop = horizon - self.end_offset;
        let base_dt = self.integ.params().dt;
        let d0 = path.distance();
        let gamma0 = self.schedule.initial();
        let ledger_budget = d0 * d0 / (a * gamma0);
        let shift_budget = d0 * d0 / (2.0 * a * gamma0);
        let mut max_ledger_ratio = if d0 > 0.0 { 1.0f64 } else { 0.0 };
        let mut records = Vec::new();
        if record {
            records.push(WhiteRecord {
                t: 0.0,
                distance: d0,
                gamma: gamma0,
                ledger: d0 * d0 / (a * gamma0),
            });
        }
        while t_stop - path.t > 1e-15 * horizon {
            let gamma = self.schedule.value(path.t)?;
            let h = base_dt.min(self.kappa * gamma).min(t_stop - path.t);
            let local;
            let coeffs = if h == base_dt {
                self.integ.base()
            } else {
                local = self.integ.coefficients(h)?;
                &local
            };
            draw_standard(self.integ.noise_modes(), rng, &mut scratch.z);
            self.step_with_noise(&mut path, coeffs, &mut scratch)?;
            let dist = path.distance();
            let g = self.schedule.value(path.t)?;
            let ledger = path.ledger_integral + dist * dist / (a * g);
            if d0 > 0.0 {
                max_ledger_ratio = max_ledger_ratio.max(ledger / ledger_budget);
            }
            if record {
                records.push(WhiteRecord {
                    t: path.t,
                    distance: dist,
                    gamma: g,
                    ledger,
                });
            }
        }
        let final_distance = path.distance();
        let shift_ratio = if d0 > 0.0 {
            path.shift_energy / shift_budget
        } else {
            0.0
        };
        Ok(WhiteCouplingRun {
            coupled: final_distance <= self.coupling_tol * d0,
            path,
            initial_distance: d0,
            final_distance,
            max_ledger_ratio,
            shift_ratio,
            records,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn degenerate_params() -> ModelParams {
        ModelParams::new(10.0, NoiseSpec::degenerate(vec![1.0, 1.0], 2))
            .with_modes(16)
            .with_dt(1e-5)
    }

    fn pair(m: usize, mass: f64, spread: f64) -> (SpectralField, SpectralField) {
        let mut x = vec![0.0; m + 1];
        let mut y = vec![0.0; m + 1];
        x[0] = mass;
        y[0] = mass;
        for k in 1..=6.min(m) {
            x[k] = 0.05 / k as f64;
            y[k] = x[k] + spread * if k % 2 == 0 { 1.0 } else { -1.0 } / k as f64;
        }
        (
            SpectralField::from_coeffs(x).unwrap(),
            SpectralField::from_coeffs(y).unwrap(),
        )
    }

    #[test]
    fn equal_states_stay_equal() {
        let c = DegenerateCoupling::new(&degenerate_params()).unwrap();
        let (x, _) = pair(16, 0.1, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let run = c
            .run(&x, &x, 0.005, &mut rng, |p| {
                assert_eq!(p.u, p.partner);
                assert_eq!(p.log_weight, 0.0);
            })
            .unwrap();
        assert_eq!(run.path.xi_sup, 0.0);
    }

    #[test]
    fn xi_bound_at_time_zero() {
        let rates = RateConstants::compute(&NoiseSpec::degenerate(vec![1.0, 1.0], 2), 10.0, 16).unwrap();
        let bound = 0.5 * 10.0 * rates.op_norm_binv_a_pil * 0.01;
        assert!((bound - 12.4025).abs() < 1e-4);
        assert!((rates.op_norm_binv_a_pil - 8.0 * PI.powi(3)).abs() < 1e-10);
    }

    #[test]
    fn contraction_and_mass() {
        let c = DegenerateCoupling::new(&degenerate_params()).unwrap();
        let (x, y) = pair(16, -0.2, 0.003);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let run = c
            .run(&x, &y, 0.02, &mut rng, |p| {
                assert_eq!(p.u.mean(), -0.2);
                assert_eq!(p.partner.mean(), -0.2);
            })
            .unwrap();
        assert!(run.max_contraction_ratio <= 1.0 + 1e-9, "{}", run.max_contraction_ratio);
        assert!(run.max_xi_ratio <= 1.0 + 1e-9, "{}", run.max_xi_ratio);
    }

    #[test]
    fn difference_dynamics_is_noise_free() {
        // With the nonlinearity off the difference is deterministic.
        let p = degenerate_params().without_nonlinearity();
        let c = DegenerateCoupling::new(&p).unwrap();
        let (x, y) = pair(16, 0.0, 0.002);
        let a = c.run(&x, &y, 0.003, &mut ChaCha8Rng::seed_from_u64(1), |_| {}).unwrap();
        let b = c.run(&x, &y, 0.003, &mut ChaCha8Rng::seed_from_u64(2), |_| {}).unwrap();
        let da = a.path.u.sub(&a.path.partner).unwrap();
        let db = b.path.u.sub(&b.path.partner).unwrap();
        for (p, q) in da.coeffs().iter().zip(db.coeffs()) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_wrong_noise() {
        let p = ModelParams::new(1.0, NoiseSpec::WhiteSqrtLaplacian);
        assert!(matches!(DegenerateCoupling::new(&p), Err(Error::Variant(_))));
        let q = ModelParams::new(40.0, NoiseSpec::degenerate(vec![1.0], 1)).with_dt(1e-6);
        assert!(matches!(DegenerateCoupling::new(&q), Err(Error::Validation(_))));
        let s = GammaSchedule::new(0.01, 1.0, 10.0);
        assert!(s.is_err());
        let s = GammaSchedule::new(0.01, 1.0, 1.0).unwrap();
        assert!(matches!(
            WhiteCoupling::new(&degenerate_params(), s),
            Err(Error::Variant(_))
        ));
    }

    fn white_params() -> ModelParams {
        ModelParams::new(1.0, NoiseSpec::WhiteSqrtLaplacian)
            .with_modes(16)
            .with_dt(1e-5)
    }

    #[test]
    fn white_equal_states() {
        let s = GammaSchedule::new(0.002, 1.0, 1.0).unwrap();
        let c = WhiteCoupling::new(&white_params(), s).unwrap();
        let (x, _) = pair(16, 0.0, 0.0);
        let run = c.run(&x, &x, &mut ChaCha8Rng::seed_from_u64(3), false).unwrap();
        assert_eq!(run.path.log_weight, 0.0);
        assert_eq!(run.path.ledger_integral, 0.0);
        assert_eq!(run.final_distance, 0.0);
    }

    #[test]
    fn white_ledger_and_coupling() {
        let s = GammaSchedule::new(0.004, 1.0, 1.0).unwrap();
        let c = WhiteCoupling::new(&white_params(), s).unwrap();
        let (x, y) = pair(16, 0.1, 0.01);
        let run = c.run(&x, &y, &mut ChaCha8Rng::seed_from_u64(4), true).unwrap();
        assert!(run.max_ledger_ratio <= 1.02, "{}", run.max_ledger_ratio);
        assert!(run.shift_ratio <= 1.02, "{}", run.shift_ratio);
        assert!(run.coupled, "final ratio {}", run.final_distance / run.initial_distance);
        assert!(run.records.iter().all(|r| r.gamma > 0.0));
        assert_eq!(run.path.u.mean(), 0.1);
        assert_eq!(run.path.partner.mean(), 0.1);
        let last = run.records.last().unwrap();
        assert!((last.t - (0.004 - c.end_offset)).abs() < 1e-12);
    }
}

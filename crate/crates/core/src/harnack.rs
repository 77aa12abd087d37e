//! Monte-Carlo estimators for the semigroup of the approximating dynamics
//! and checks of the Harnack-type inequalities, weight moment bounds,
//! exponential integrability and contraction estimates.
//!
//! Estimators that compare two starting points run them with common random
//! numbers: path `i` uses the same noise stream from every start.

use std::f64::consts::{E, PI};

use crate::dynamics::{
    derive_seed, run_paths, DegenerateCoupling, GammaSchedule, Integrator, ModelParams,
    WhiteCoupling,
};
use crate::error::{Error, Result};
use crate::noise::RateConstants;
use crate::report::CheckReport;
use crate::spectral::{seminorm, SpectralField};
use crate::stats::{fit_line, Moments};

/// Bounded positive observables of a single mode coefficient `s = ⟨u, e_k⟩`.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunctional {
    /// `exp(sin s)`.
    ExpSinMode { mode: usize },
    /// `offset + slope·clamp(s, -clip, clip)`, positive when
    /// `offset > |slope|·clip`.
    BoundedAffine {
        mode: usize,
        offset: f64,
        slope: f64,
        clip: f64,
    },
    /// Piecewise-linear interpolation of `(nodes, values)` in `s`, constant
    /// outside the node range.
    Table {
        mode: usize,
        nodes: Vec<f64>,
        values: Vec<f64>,
    },
}

impl TestFunctional {
    pub fn mode(&self) -> usize {
        match self {
            TestFunctional::ExpSinMode { mode }
            | TestFunctional::BoundedAffine { mode, .. }
            | TestFunctional::Table { mode, .. } => *mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if self.mode() == 0 {
            return bad("test functionals act on a non-constant mode");
        }
        match self {
            TestFunctional::ExpSinMode { .. } => Ok(()),
            TestFunctional::BoundedAffine {
                offset,
                slope,
                clip,
                ..
            } => {
                if !(clip.is_finite() && *clip >= 0.0 && slope.is_finite()) {
                    return bad("affine functional needs finite slope and clip >= 0");
                }
                if !(*offset - slope.abs() * clip > 0.0) || !offset.is_finite() {
                    return bad("affine functional must stay positive");
                }
                Ok(())
            }
            TestFunctional::Table { nodes, values, .. } => {
                if nodes.is_empty() || nodes.len() != values.len() {
                    return bad("table needs matching, non-empty nodes and values");
                }
                if nodes.windows(2).any(|w| !(w[1] > w[0])) {
                    return bad("table nodes must be strictly increasing");
                }
                if values.iter().chain(nodes).any(|v| !v.is_finite()) {
                    return bad("table entries must be finite");
                }
                if values.iter().any(|&v| !(v > 0.0)) {
                    return bad("table values must be positive");
                }
                Ok(())
            }
        }
    }

    fn of_coefficient(&self, s: f64) -> f64 {
        match self {
            TestFunctional::ExpSinMode { .. } => s.sin().exp(),
            TestFunctional::BoundedAffine {
                offset,
                slope,
                clip,
                ..
            } => offset + slope * s.clamp(-clip, *clip),
            TestFunctional::Table { nodes, values, .. } => {
                let n = nodes.len();
                if s <= nodes[0] {
                    return values[0];
                }
                if s >= nodes[n - 1] {
                    return values[n - 1];
                }
                let j = nodes.partition_point(|&x| x <= s);
                let (x0, x1) = (nodes[j - 1], nodes[j]);
                let w = (s - x0) / (x1 - x0);
                values[j - 1] * (1.0 - w) + values[j] * w
            }
        }
    }

    pub fn eval(&self, u: &SpectralField) -> f64 {
        let k = self.mode();
        self.of_coefficient(if k <= u.truncation() { u.coeff(k) } else { 0.0 })
    }

    /// `(inf φ, sup φ)`.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            TestFunctional::ExpSinMode { .. } => (1.0 / E, E),
            TestFunctional::BoundedAffine {
                offset,
                slope,
                clip,
                ..
            } => (offset - slope.abs() * clip, offset + slope.abs() * clip),
            TestFunctional::Table { values, .. } => (
                values.iter().copied().fold(f64::INFINITY, f64::min),
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
        }
    }

    /// Largest slope in the coefficient variable.
    fn coefficient_slope(&self) -> f64 {
        match self {
            TestFunctional::ExpSinMode { .. } => E,
            TestFunctional::BoundedAffine { slope, clip, .. } => {
                if *clip > 0.0 {
                    slope.abs()
                } else {
                    0.0
                }
            }
            TestFunctional::Table { nodes, values, .. } => nodes
                .windows(2)
                .zip(values.windows(2))
                .map(|(x, v)| ((v[1] - v[0]) / (x[1] - x[0])).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Lipschitz constant with respect to `|·|_{-1}`; the coefficient map
    /// `u ↦ ⟨u, e_k⟩` contributes the factor `kπ`.
    pub fn lipschitz(&self) -> f64 {
        self.coefficient_slope() * self.mode() as f64 * PI
    }

    /// Bound on `‖∇ log φ‖` with respect to `|·|_{-1}`.
    pub fn log_gradient_bound(&self) -> f64 {
        let kpi = self.mode() as f64 * PI;
        match self {
            // |d/ds sin s| ≤ 1
            TestFunctional::ExpSinMode { .. } => kpi,
            _ => self.coefficient_slope() * kpi / self.bounds().0,
        }
    }
}

/// Closed-form right-hand sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarnackBudget {
    /// Additive budget (`Φ` for the degenerate noise, the log-Harnack budget
    /// for white noise).
    pub phi: f64,
    /// Coefficient of `‖∇ log φ‖`.
    pub psi: f64,
    /// Multiplicative budget of the power inequality (1 when not applicable).
    pub power_factor: f64,
}

impl HarnackBudget {
    /// `Φ = (λ/(8α))(1 - e^{-2αt})‖B^{-1}AΠ_l‖² d²`, `Ψ = e^{-αt} d`.
    pub fn asymptotic(lambda: f64, rates: &RateConstants, t: f64, dist: f64) -> Self {
        let a = rates.alpha;
        let op = rates.op_norm_binv_a_pil;
        Self {
            phi: lambda / (8.0 * a) * (-(-2.0 * a * t).exp_m1()) * op * op * dist * dist,
            psi: (-a * t).exp() * dist,
            power_factor: 1.0,
        }
    }

    /// White-noise budgets at power `p`.
    pub fn white(lambda: f64, power: f64, t: f64, dist: f64) -> Result<Self> {
        let r = white_rate(lambda)?;
        if !(power > 1.0) {
            return Err(Error::Validation(format!("power must exceed 1, got {power}")));
        }
        let denom = (r * t).exp_m1();
        Ok(Self {
            phi: r * dist * dist / (2.0 * denom),
            psi: 0.0,
            power_factor: (power * r * dist * dist / (2.0 * (power - 1.0) * denom)).exp(),
        })
    }
}

/// `(π² - λ)π²`, requiring `π² > λ`.
pub fn white_rate(lambda: f64) -> Result<f64> {
    let r = (PI * PI - lambda) * PI * PI;
    if !(r > 0.0) {
        return Err(Error::Validation(format!(
            "pi^2 must exceed lambda, got lambda = {lambda}"
        )));
    }
    Ok(r)
}

/// `|x - y|² / (2aγ(0))`.
pub fn white_entropy_budget(dist: f64, schedule: &GammaSchedule) -> f64 {
    dist * dist / (2.0 * schedule.a() * schedule.initial())
}

/// `exp((q-1)q |x - y|² / (2aγ(0)))`.
pub fn q_moment_budget(q: f64, dist: f64, schedule: &GammaSchedule) -> f64 {
    ((q - 1.0) * q * white_entropy_budget(dist, schedule)).exp()
}

/// Sample mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    /// Paths that contributed.
    pub paths: usize,
    pub failures: usize,
}

impl Estimate {
    fn from_moments(m: &Moments, failures: usize) -> Self {
        Self {
            mean: m.mean(),
            stderr: m.stderr(),
            paths: m.count(),
            failures,
        }
    }
}

/// States of every path at every requested time, for several starting
/// points driven by the same noise.
#[derive(Debug, Clone)]
pub struct PathSample {
    /// `paths[i][s][j]`: path `i`, start `s`, time `j`. Paths in which any
    /// start failed are dropped.
    pub paths: Vec<Vec<Vec<SpectralField>>>,
    pub failures: usize,
    pub requested: usize,
}

impl PathSample {
    pub fn values<'a, F: Fn(&SpectralField) -> f64 + 'a>(
        &'a self,
        start: usize,
        time: usize,
        f: F,
    ) -> impl Iterator<Item = f64> + 'a {
        self.paths.iter().map(move |p| f(&p[start][time]))
    }

    pub fn failure_rate(&self) -> f64 {
        if self.requested == 0 {
            0.0
        } else {
            self.failures as f64 / self.requested as f64
        }
    }
}

fn check_start(p: &ModelParams, x: &SpectralField) -> Result<()> {
    if x.truncation() != p.modes {
        return Err(Error::Shape(format!(
            "start has truncation {} but the model uses {}",
            x.truncation(),
            p.modes
        )));
    }
    if (x.mean() - p.mass_c).abs() > 1e-13 {
        return Err(Error::Validation(format!(
            "start mean {} differs from the mass {}",
            x.mean(),
            p.mass_c
        )));
    }
    Ok(())
}

/// Runs `paths` noise realisations from each of `starts` and records the
/// states at `times`.
pub fn sample_paths(
    p: &ModelParams,
    starts: &[SpectralField],
    times: &[f64],
    paths: usize,
    seed: u64,
) -> Result<PathSample> {
    let integ = Integrator::new(p)?;
    for x in starts {
        check_start(p, x)?;
    }
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Validation("observation times must be nonnegative".into()));
    }
    let raw = run_paths(paths, seed, |i, _| {
        starts
            .iter()
            .map(|x| {
                let mut rng = crate::dynamics::path_rng(seed, i as u64);
                integ.states_at(x, times, &mut rng)
            })
            .collect::<Result<Vec<_>>>()
    });
    let requested = raw.len();
    let kept: Vec<_> = raw.into_iter().filter_map(|r| r.ok()).collect();
    Ok(PathSample {
        failures: requested - kept.len(),
        paths: kept,
        requested,
    })
}

fn nonempty(sample: &PathSample) -> Result<()> {
    if sample.paths.is_empty() {
        return Err(Error::Estimator(format!(
            "all {} paths diverged",
            sample.requested
        )));
    }
    Ok(())
}

/// `P_t φ(x)` by Monte Carlo.
pub fn estimate_semigroup(
    phi: &TestFunctional,
    x: &SpectralField,
    t: f64,
    paths: usize,
    seed: u64,
    p: &ModelParams,
) -> Result<Estimate> {
    phi.validate()?;
    let sample = sample_paths(p, std::slice::from_ref(x), &[t], paths, seed)?;
    nonempty(&sample)?;
    let m: Moments = sample.values(0, 0, |u| phi.eval(u)).collect();
    Ok(Estimate::from_moments(&m, sample.failures))
}

/// Result of a check together with the number of paths lost to divergence.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub report: CheckReport,
    pub failures: usize,
    pub requested: usize,
}

impl CheckOutcome {
    pub fn failure_rate(&self) -> f64 {
        if self.requested == 0 {
            0.0
        } else {
            self.failures as f64 / self.requested as f64
        }
    }
}

fn distance(x: &SpectralField, y: &SpectralField) -> Result<f64> {
    Ok(seminorm(&x.sub(y)?, -1.0))
}

fn shared_mass(x: &SpectralField, y: &SpectralField) -> Result<()> {
    if (x.mean() - y.mean()).abs() > 1e-13 {
        return Err(Error::Validation("x and y must share their mass".into()));
    }
    Ok(())
}

/// `P_t log φ(y) ≤ log P_t φ(x) + Φ + Ψ‖∇ log φ‖` for degenerate noise.
#[allow(clippy::too_many_arguments)]
pub fn check_asymptotic_log_harnack(
    x: &SpectralField,
    y: &SpectralField,
    t: f64,
    phi: &TestFunctional,
    p: &ModelParams,
    paths: usize,
    seed: u64,
) -> Result<CheckOutcome> {
    phi.validate()?;
    shared_mass(x, y)?;
    let rates = RateConstants::compute(&p.noise, p.lambda, p.modes)?;
    let budget = HarnackBudget::asymptotic(p.lambda, &rates, t, distance(x, y)?);
    let sample = sample_paths(p, &[x.clone(), y.clone()], &[t], paths, seed)?;
    nonempty(&sample)?;
    let at_y: Moments = sample.values(1, 0, |u| phi.eval(u).ln()).collect();
    let at_x: Moments = sample.values(0, 0, |u| phi.eval(u)).collect();
    let rhs = at_x.mean().ln() + budget.phi + budget.psi * phi.log_gradient_bound();
    Ok(CheckOutcome {
        report: CheckReport::new(
            format!("asymptotic_log_harnack(t={t})"),
            at_y.mean(),
            rhs,
            at_y.stderr(),
            at_x.stderr() / at_x.mean(),
            at_x.count(),
            seed,
        ),
        failures: sample.failures,
        requested: sample.requested,
    })
}

fn white_setup(p: &ModelParams) -> Result<()> {
    if !p.noise.is_white() {
        return Err(Error::Variant("check requires B = (-A)^(1/2)".into()));
    }
    white_rate(p.lambda).map(|_| ())
}

/// `(P_t φ)^p(y) ≤ P_t φ^p(x) · exp(p r d² / (2(p-1)(e^{rt} - 1)))`.
#[allow(clippy::too_many_arguments)]
pub fn check_power_harnack(
    x: &SpectralField,
    y: &SpectralField,
    t: f64,
    phi: &TestFunctional,
    power: f64,
    p: &ModelParams,
    paths: usize,
    seed: u64,
) -> Result<CheckOutcome> {
    phi.validate()?;
    white_setup(p)?;
    shared_mass(x, y)?;
    let budget = HarnackBudget::white(p.lambda, power, t, distance(x, y)?)?;
    let sample = sample_paths(p, &[x.clone(), y.clone()], &[t], paths, seed)?;
    nonempty(&sample)?;
    let at_y: Moments = sample.values(1, 0, |u| phi.eval(u)).collect();
    let at_x: Moments = sample.values(0, 0, |u| phi.eval(u).powf(power)).collect();
    let lhs = at_y.mean().powf(power);
    let lhs_se = power * at_y.mean().powf(power - 1.0) * at_y.stderr();
    Ok(CheckOutcome {
        report: CheckReport::new(
            format!("power_harnack(p={power},t={t})"),
            lhs,
            at_x.mean() * budget.power_factor,
            lhs_se,
            at_x.stderr() * budget.power_factor,
            at_x.count(),
            seed,
        ),
        failures: sample.failures,
        requested: sample.requested,
    })
}

/// `P_t log φ(y) ≤ log P_t φ(x) + r d² / (2(e^{rt} - 1))`.
pub fn check_log_harnack_white(
    x: &SpectralField,
    y: &SpectralField,
    t: f64,
    phi: &TestFunctional,
    p: &ModelParams,
    paths: usize,
    seed: u64,
) -> Result<CheckOutcome> {
    phi.validate()?;
    white_setup(p)?;
    shared_mass(x, y)?;
    let budget = HarnackBudget::white(p.lambda, 2.0, t, distance(x, y)?)?;
    let sample = sample_paths(p, &[x.clone(), y.clone()], &[t], paths, seed)?;
    nonempty(&sample)?;
    let at_y: Moments = sample.values(1, 0, |u| phi.eval(u).ln()).collect();
    let at_x: Moments = sample.values(0, 0, |u| phi.eval(u)).collect();
    Ok(CheckOutcome {
        report: CheckReport::new(
            format!("log_harnack_white(t={t})"),
            at_y.mean(),
            at_x.mean().ln() + budget.phi,
            at_y.stderr(),
            at_x.stderr() / at_x.mean(),
            at_x.count(),
            seed,
        ),
        failures: sample.failures,
        requested: sample.requested,
    })
}

/// Log Girsanov weights of an ensemble of coupled pairs.
#[derive(Debug, Clone)]
pub struct WeightSample {
    pub log_weights: Vec<f64>,
    pub failures: usize,
    pub requested: usize,
    pub distance: f64,
    /// Closed-form bound on `E[W log W]`.
    pub entropy_budget: f64,
    /// Present for the white coupling.
    pub schedule: Option<GammaSchedule>,
    /// Worst pathwise ledger ratio observed (white coupling only).
    pub max_ledger_ratio: f64,
    /// Paths whose partner reached the coupling tolerance.
    pub coupled: usize,
    pub seed: u64,
}

impl WeightSample {
    /// White coupling of `(x, y)` over `[0, T)`.
    pub fn white(
        p: &ModelParams,
        schedule: GammaSchedule,
        x: &SpectralField,
        y: &SpectralField,
        paths: usize,
        seed: u64,
    ) -> Result<Self> {
        white_setup(p)?;
        check_start(p, x)?;
        check_start(p, y)?;
        let coupling = WhiteCoupling::new(p, schedule)?;
        let runs = run_paths(paths, seed, |_, rng| coupling.run(x, y, rng, false));
        let dist = distance(x, y)?;
        let mut out = Self {
            log_weights: Vec::with_capacity(paths),
            failures: 0,
            requested: paths,
            distance: dist,
            entropy_budget: white_entropy_budget(dist, &schedule),
            schedule: Some(schedule),
            max_ledger_ratio: 0.0,
            coupled: 0,
            seed,
        };
        for r in runs {
            match r {
                Ok(run) => {
                    out.log_weights.push(run.path.log_weight);
                    out.max_ledger_ratio = out.max_ledger_ratio.max(run.max_ledger_ratio);
                    out.coupled += run.coupled as usize;
                }
                Err(Error::Divergence { .. }) => out.failures += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// Degenerate coupling of `(x, y)` over `[0, t]`.
    pub fn degenerate(
        p: &ModelParams,
        x: &SpectralField,
        y: &SpectralField,
        t: f64,
        paths: usize,
        seed: u64,
    ) -> Result<Self> {
        check_start(p, x)?;
        check_start(p, y)?;
        let coupling = DegenerateCoupling::new(p)?;
        let dist = distance(x, y)?;
        let budget = HarnackBudget::asymptotic(p.lambda, coupling.rates(), t, dist);
        let runs = run_paths(paths, seed, |_, rng| coupling.run(x, y, t, rng, |_| {}));
        let mut out = Self {
            log_weights: Vec::with_capacity(paths),
            failures: 0,
            requested: paths,
            distance: dist,
            entropy_budget: budget.phi,
            schedule: None,
            max_ledger_ratio: 0.0,
            coupled: 0,
            seed,
        };
        for r in runs {
            match r {
                Ok(run) => out.log_weights.push(run.path.log_weight),
                Err(Error::Divergence { .. }) => out.failures += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    fn finite(&self) -> Result<()> {
        if self.log_weights.is_empty() {
            return Err(Error::Estimator("no coupling path completed".into()));
        }
        if self.log_weights.iter().any(|w| !w.exp().is_finite()) {
            return Err(Error::Estimator("non-finite Girsanov weight".into()));
        }
        Ok(())
    }

    fn label(&self) -> &'static str {
        if self.schedule.is_some() {
            "white"
        } else {
            "degenerate"
        }
    }

    /// `E[W log W]` against its budget.
    pub fn entropy_report(&self) -> Result<CheckReport> {
        self.finite()?;
        let m: Moments = self.log_weights.iter().map(|l| l.exp() * l).collect();
        Ok(CheckReport::new(
            format!("entropy_bound({})", self.label()),
            m.mean(),
            self.entropy_budget,
            m.stderr(),
            0.0,
            m.count(),
            self.seed,
        ))
    }

    /// `E[W] = 1`.
    pub fn normalization_report(&self) -> Result<CheckReport> {
        self.finite()?;
        let m: Moments = self.log_weights.iter().map(|l| l.exp()).collect();
        Ok(CheckReport::two_sided(
            format!("weight_normalization({})", self.label()),
            (m.mean(), m.stderr()),
            (1.0, 0.0),
            0.0,
            m.count(),
            self.seed,
        ))
    }

    /// `E[W^q]` against `exp((q-1)q d²/(2aγ(0)))`.
    pub fn q_moment_report(&self, q: f64) -> Result<CheckReport> {
        self.finite()?;
        let Some(schedule) = &self.schedule else {
            return Err(Error::Variant("q-moment budget needs the white coupling".into()));
        };
        if !(q > 1.0) {
            return Err(Error::Validation(format!("q must exceed 1, got {q}")));
        }
        let m: Moments = self.log_weights.iter().map(|l| (q * l).exp()).collect();
        Ok(CheckReport::new(
            format!("q_moment(q={q})"),
            m.mean(),
            q_moment_budget(q, self.distance, schedule),
            m.stderr(),
            0.0,
            m.count(),
            self.seed,
        ))
    }

    pub fn failure_rate(&self) -> f64 {
        if self.requested == 0 {
            0.0
        } else {
            self.failures as f64 / self.requested as f64
        }
    }
}

/// Entropy of the white-coupling weight over `[0, T)`.
pub fn check_entropy_bound(
    x: &SpectralField,
    y: &SpectralField,
    horizon: f64,
    a: f64,
    p: &ModelParams,
    paths: usize,
    seed: u64,
) -> Result<CheckReport> {
    let schedule = GammaSchedule::new(horizon, a, p.lambda)?;
    WeightSample::white(p, schedule, x, y, paths, seed)?.entropy_report()
}

#[allow(clippy::too_many_arguments)]
pub fn check_q_moment(
    x: &SpectralField,
    y: &SpectralField,
    horizon: f64,
    a: f64,
    q: f64,
    p: &ModelParams,
    paths: usize,
    seed: u64,
) -> Result<CheckReport> {
    let schedule = GammaSchedule::new(horizon, a, p.lambda)?;
    WeightSample::white(p, schedule, x, y, paths, seed)?.q_moment_report(q)
}

/// Time average of `exp(ς|u|²_{-1})` over `[t0, t1]` on each path.
fn windowed_exponential(
    p: &ModelParams,
    x: &SpectralField,
    varsigma: f64,
    t0: f64,
    t1: f64,
    paths: usize,
    seed: u64,
) -> Result<(Moments, usize)> {
    let integ = Integrator::new(p)?;
    let first = integ.steps_for(t0);
    let last = integ.steps_for(t1);
    let runs = run_paths(paths, seed, |_, rng| {
        let mut acc = 0.0;
        let mut n = 0usize;
        integ
            .run_path(x, last, rng, |s, _, u| {
                if s >= first {
                    let d = seminorm(u, -1.0);
                    acc += (varsigma * d * d).exp();
                    n += 1;
                }
            })
            .map(|_| acc / n.max(1) as f64)
    });
    let mut m = Moments::new();
    let mut failures = 0;
    for r in runs {
        match r {
            Ok(v) => m.push(v),
            Err(Error::Divergence { .. }) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((m, failures))
}

/// Stationarity of the exponential moment: the `[T/2, T]` and `[T, 2T]`
/// time averages of `exp(ς|u|²_{-1})` agree within the combined error.
pub fn check_exponential_moment(
    x: &SpectralField,
    varsigma: f64,
    p: &ModelParams,
    horizon: f64,
    paths: usize,
    seed: u64,
) -> Result<CheckOutcome> {
    let bstar = crate::noise::bstar_norm(&p.noise, p.modes);
    if !(varsigma > 0.0) || !(PI.powi(4) > 2.0 * varsigma * bstar * bstar) {
        return Err(Error::Validation(format!(
            "exponent {varsigma} needs pi^4 > 2 * varsigma * |B*|^2 = {}",
            2.0 * varsigma * bstar * bstar
        )));
    }
    if !(horizon > 0.0) {
        return Err(Error::Validation("horizon must be positive".into()));
    }
    check_start(p, x)?;
    let (short, f1) = windowed_exponential(
        p,
        x,
        varsigma,
        0.5 * horizon,
        horizon,
        paths,
        derive_seed(seed, "window-1"),
    )?;
    let (long, f2) = windowed_exponential(
        p,
        x,
        varsigma,
        horizon,
        2.0 * horizon,
        paths,
        derive_seed(seed, "window-2"),
    )?;
    if short.count() == 0 || long.count() == 0 {
        return Err(Error::Estimator("all paths diverged".into()));
    }
    Ok(CheckOutcome {
        report: CheckReport::two_sided(
            format!("exponential_moment(varsigma={varsigma})"),
            (long.mean(), long.stderr()),
            (short.mean(), short.stderr()),
            0.0,
            short.count().min(long.count()),
            seed,
        ),
        failures: f1 + f2,
        requested: 2 * paths,
    })
}

/// Guaranteed contraction rate of `|u(t;x) - u(t;y)|_{-1}` under common
/// noise: `½(π² - λ)π²`.
pub fn synchronous_rate(lambda: f64) -> Result<f64> {
    Ok(0.5 * white_rate(lambda)?)
}

/// `|P_t φ(x) - P_t φ(y)| ≤ ‖∇φ‖ e^{-ρt} |x - y|_{-1}` on a time grid; the
/// report carries the time with the smallest normalized slack.
#[allow(clippy::too_many_arguments)]
pub fn check_ergodic_decay(
    x: &SpectralField,
    y: &SpectralField,
    phi: &TestFunctional,
    p: &ModelParams,
    times: &[f64],
    paths: usize,
    seed: u64,
) -> Result<CheckOutcome> {
    phi.validate()?;
    shared_mass(x, y)?;
    let rho = synchronous_rate(p.lambda)?;
    if times.is_empty() {
        return Err(Error::Validation("need at least one observation time".into()));
    }
    let dist = distance(x, y)?;
    let sample = sample_paths(p, &[x.clone(), y.clone()], times, paths, seed)?;
    nonempty(&sample)?;
    let mut worst: Option<CheckReport> = None;
    for (j, &t) in times.iter().enumerate() {
        let d: Moments = sample
            .paths
            .iter()
            .map(|p| phi.eval(&p[0][j]) - phi.eval(&p[1][j]))
            .collect();
        let report = CheckReport::new(
            format!("ergodic_decay(t={t})"),
            d.mean().abs(),
            phi.lipschitz() * (-rho * t).exp() * dist,
            d.stderr(),
            0.0,
            d.count(),
            seed,
        );
        let score = |r: &CheckReport| r.slack + 3.0 * (r.stderr_lhs + r.stderr_rhs);
        if worst.as_ref().is_none_or(|w| score(&report) < score(w)) {
            worst = Some(report);
        }
    }
    Ok(CheckOutcome {
        report: worst.expect("times is non-empty"),
        failures: sample.failures,
        requested: sample.requested,
    })
}

/// Distances `|u(t;x) - u(t;y)|_{-1}` of one synchronously driven pair.
#[derive(Debug, Clone)]
pub struct DecayTrace {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
}

impl DecayTrace {
    /// Slope of `-log |X(t)|` against `t`.
    pub fn rate(&self) -> Option<f64> {
        fit_decay_rate(&self.times, &self.distances)
    }

    /// Slope of `-log |X(t)|²`.
    pub fn squared_rate(&self) -> Option<f64> {
        self.rate().map(|r| 2.0 * r)
    }
}

/// Least-squares decay rate of a positive series.
pub fn fit_decay_rate(times: &[f64], values: &[f64]) -> Option<f64> {
    let (t, l): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(t, v)| (*t, v.ln()))
        .unzip();
    fit_line(&t, &l).map(|(slope, _)| -slope)
}

/// Drives `x` and `y` with the same noise up to `t_final`, recording the
/// distance every `every` steps.
pub fn synchronous_trace(
    p: &ModelParams,
    x: &SpectralField,
    y: &SpectralField,
    t_final: f64,
    every: usize,
    seed: u64,
) -> Result<DecayTrace> {
    shared_mass(x, y)?;
    check_start(p, x)?;
    check_start(p, y)?;
    let integ = Integrator::new(p)?;
    let steps = integ.steps_for(t_final);
    let every = every.max(1);
    let mut ux = x.clone();
    let mut uy = y.clone();
    let mut rx = crate::dynamics::path_rng(seed, 0);
    let mut ry = crate::dynamics::path_rng(seed, 0);
    let mut sx = integ.scratch();
    let mut sy = integ.scratch();
    let mut trace = DecayTrace {
        times: vec![0.0],
        distances: vec![distance(x, y)?],
    };
    for s in 1..=steps {
        integ.step_random(&mut ux, &mut rx, &mut sx, s)?;
        integ.step_random(&mut uy, &mut ry, &mut sy, s)?;
        if s % every == 0 {
            trace.times.push(s as f64 * p.dt);
            trace.distances.push(distance(&ux, &uy)?);
        }
    }
    Ok(trace)
}

/// Centered-difference gradient of `P_t φ` along `h` against
/// `(λ/(4α))^{1/2}‖B^{-1}AΠ_l‖ √Var + ‖∇φ‖ e^{-αt}`. Advisory.
#[allow(clippy::too_many_arguments)]
pub fn check_gradient_estimate(
    x: &SpectralField,
    direction: &SpectralField,
    t: f64,
    phi: &TestFunctional,
    p: &ModelParams,
    epsilon: f64,
    paths: usize,
    seed: u64,
) -> Result<CheckOutcome> {
    phi.validate()?;
    let rates = RateConstants::compute(&p.noise, p.lambda, p.modes)?;
    if !(epsilon > 0.0) {
        return Err(Error::Validation("epsilon must be positive".into()));
    }
    let mut h = direction.clone();
    h.set_mean(0.0);
    let norm = seminorm(&h, -1.0);
    if !(norm > 0.0) {
        return Err(Error::Validation("direction must have a non-constant part".into()));
    }
    let h = h.scale(epsilon / norm);
    let plus = x.add(&h)?;
    let minus = x.sub(&h)?;
    let sample = sample_paths(p, &[plus, minus, x.clone()], &[t], paths, seed)?;
    nonempty(&sample)?;
    let diff: Moments = sample
        .paths
        .iter()
        .map(|q| (phi.eval(&q[0][0]) - phi.eval(&q[1][0])) / (2.0 * epsilon))
        .collect();
    let at_x: Moments = sample.values(2, 0, |u| phi.eval(u)).collect();
    let prefactor = (p.lambda / (4.0 * rates.alpha)).sqrt() * rates.op_norm_binv_a_pil;
    let sd = at_x.variance().sqrt();
    let n = at_x.count().max(2) as f64;
    let rhs = prefactor * sd + phi.lipschitz() * (-rates.alpha * t).exp();
    Ok(CheckOutcome {
        report: CheckReport::new(
            format!("gradient_estimate(t={t})"),
            diff.mean().abs(),
            rhs,
            diff.stderr(),
            prefactor * sd / (2.0 * (n - 1.0)).sqrt(),
            diff.count(),
            seed,
        )
        .into_advisory(),
        failures: sample.failures,
        requested: sample.requested,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseSpec;

    fn deg(lambda: f64) -> ModelParams {
        ModelParams::new(lambda, NoiseSpec::degenerate(vec![1.0, 1.0], 2)).with_modes(8)
    }

    fn white(lambda: f64) -> ModelParams {
        ModelParams::new(lambda, NoiseSpec::WhiteSqrtLaplacian).with_modes(8)
    }

    #[test]
    fn functional_ranges() {
        let f = TestFunctional::ExpSinMode { mode: 2 };
        assert_eq!(f.bounds(), (1.0 / E, E));
        assert!((f.log_gradient_bound() - 2.0 * PI).abs() < 1e-15);
        let u = SpectralField::single_mode(0.0, 2, 0.3, 4);
        assert!((f.eval(&u) - 0.3f64.sin().exp()).abs() < 1e-15);
        let t = TestFunctional::Table {
            mode: 1,
            nodes: vec![-1.0, 0.0, 1.0],
            values: vec![1.0, 2.0, 4.0],
        };
        assert_eq!(t.eval(&SpectralField::single_mode(0.0, 1, 0.5, 2)), 3.0);
        assert_eq!(t.eval(&SpectralField::single_mode(0.0, 1, 5.0, 2)), 4.0);
        assert!((t.lipschitz() - 2.0 * PI).abs() < 1e-15);
        let bad = TestFunctional::BoundedAffine {
            mode: 1,
            offset: 1.0,
            slope: 2.0,
            clip: 1.0,
        };
        assert!(bad.validate().is_err());
        assert!(TestFunctional::ExpSinMode { mode: 0 }.validate().is_err());
    }

    #[test]
    fn degenerate_budgets() {
        let rates =
            RateConstants::compute(&NoiseSpec::degenerate(vec![1.0, 1.0], 2), 10.0, 32).unwrap();
        let b = HarnackBudget::asymptotic(10.0, &rates, 0.1, 0.01);
        assert!((b.psi - 7.669_878e-5).abs() < 1e-10);
        assert!((b.phi - 0.157_904_38).abs() < 1e-7);
        let zero = HarnackBudget::asymptotic(10.0, &rates, 0.1, 0.0);
        assert_eq!((zero.phi, zero.psi), (0.0, 0.0));
        let prefactor = (10.0 / (4.0 * rates.alpha)).sqrt() * rates.op_norm_binv_a_pil;
        assert!((prefactor - 56.198_518).abs() < 1e-5);
    }

    #[test]
    fn white_budgets() {
        let b = HarnackBudget::white(1.0, 2.0, 0.01, 0.1).unwrap();
        assert!((b.phi - 0.312_680_62).abs() < 1e-8);
        assert!((b.power_factor - 1.868_920_96).abs() < 1e-8);
        let s = GammaSchedule::new(0.01, 1.0, 1.0).unwrap();
        assert!((white_entropy_budget(0.1, &s) - b.phi).abs() < 1e-12);
        assert!((q_moment_budget(2.0, 0.1, &s) - b.power_factor).abs() < 1e-12);
        let late = HarnackBudget::white(1.0, 2.0, 10.0, 0.1).unwrap();
        assert!((late.power_factor - 1.0).abs() < 1e-12);
        assert!(HarnackBudget::white(1.0, 1.0, 0.01, 0.1).is_err());
        assert!(HarnackBudget::white(10.0, 2.0, 0.01, 0.1).is_err());
    }

    #[test]
    fn log_budget_is_optimal_over_a() {
        let d = 0.1;
        let best = (1..2000)
            .map(|i| i as f64 / 1000.0)
            .map(|a| {
                let s = GammaSchedule::new(0.01, a, 1.0).unwrap();
                white_entropy_budget(d, &s)
            })
            .fold(f64::INFINITY, f64::min);
        let b = HarnackBudget::white(1.0, 2.0, 0.01, d).unwrap();
        assert!((best - b.phi).abs() < 1e-12);
    }

    #[test]
    fn semigroup_trivial_cases() {
        let p = white(1.0);
        let x = SpectralField::single_mode(0.0, 1, 0.2, 8);
        let one = TestFunctional::BoundedAffine {
            mode: 1,
            offset: 1.0,
            slope: 0.0,
            clip: 0.0,
        };
        let e = estimate_semigroup(&one, &x, 0.01, 50, 1, &p).unwrap();
        assert_eq!((e.mean, e.stderr), (1.0, 0.0));
        let f = TestFunctional::ExpSinMode { mode: 1 };
        let e = estimate_semigroup(&f, &x, 0.0, 10, 1, &p).unwrap();
        assert_eq!((e.mean, e.stderr), (f.eval(&x), 0.0));
    }

    #[test]
    fn linear_mode_mean() {
        let p = ModelParams::new(0.0, NoiseSpec::degenerate(vec![1.0], 1))
            .with_modes(4)
            .without_nonlinearity();
        let x = SpectralField::single_mode(0.0, 1, 0.1, 4);
        // clip large enough that the affine part is never clamped
        let phi = TestFunctional::BoundedAffine {
            mode: 1,
            offset: 100.0,
            slope: 1.0,
            clip: 50.0,
        };
        let t = 0.02;
        let e = estimate_semigroup(&phi, &x, t, 4000, 5, &p).unwrap();
        let exact = 100.0 + 0.1 * (-0.5 * PI.powi(4) * t).exp();
        assert!((e.mean - exact).abs() < 3.0 * e.stderr, "{} vs {exact}", e.mean);
    }

    #[test]
    fn equal_starts_satisfy_jensen() {
        let x = SpectralField::single_mode(0.0, 1, 0.05, 8);
        let phi = TestFunctional::ExpSinMode { mode: 1 };
        let r = check_asymptotic_log_harnack(&x, &x, 0.01, &phi, &deg(10.0), 200, 3)
            .unwrap_or_else(|e| panic!("{e}"));
        assert!(r.report.slack >= 0.0);
        let r = check_power_harnack(&x, &x, 0.01, &phi, 2.0, &white(1.0), 200, 3).unwrap();
        assert!(r.report.slack >= 0.0 && r.report.pass);
        let r = check_log_harnack_white(&x, &x, 0.01, &phi, &white(1.0), 200, 3).unwrap();
        assert!(r.report.slack >= 0.0);
        let r = check_ergodic_decay(&x, &x, &phi, &white(1.0), &[0.0, 0.01], 50, 3).unwrap();
        assert_eq!((r.report.lhs, r.report.rhs), (0.0, 0.0));
    }

    #[test]
    fn equal_starts_give_unit_weights() {
        let p = white(1.0).with_dt(1e-5);
        let x = SpectralField::single_mode(0.0, 1, 0.05, 8);
        let s = GammaSchedule::new(0.002, 1.0, 1.0).unwrap();
        let w = WeightSample::white(&p, s, &x, &x, 20, 1).unwrap();
        assert!(w.log_weights.iter().all(|&l| l == 0.0));
        let r = w.entropy_report().unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        let q = w.q_moment_report(2.0).unwrap();
        assert_eq!((q.lhs, q.rhs), (1.0, 1.0));
        assert!(w.normalization_report().unwrap().pass);
    }

    #[test]
    fn assumption_failures() {
        let x = SpectralField::zeros(8);
        let phi = TestFunctional::ExpSinMode { mode: 1 };
        let bad = ModelParams::new(40.0, NoiseSpec::degenerate(vec![1.0], 1))
            .with_modes(8)
            .with_dt(1e-6);
        assert!(matches!(
            check_asymptotic_log_harnack(&x, &x, 0.01, &phi, &bad, 4, 1),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            check_power_harnack(&x, &x, 0.01, &phi, 2.0, &deg(1.0), 4, 1),
            Err(Error::Variant(_))
        ));
        assert!(matches!(
            check_log_harnack_white(&x, &x, 0.01, &phi, &white(12.0), 4, 1),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            check_exponential_moment(&x, 49.0, &deg(10.0), 0.1, 4, 1),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn fit_recovers_exponential() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.01).collect();
        let v: Vec<f64> = t.iter().map(|s| 0.3 * (-42.0 * s).exp()).collect();
        assert!((fit_decay_rate(&t, &v).unwrap() - 42.0).abs() < 1e-9);
    }

    #[test]
    fn linear_synchronous_decay() {
        // Without the nonlinearity the difference is the deterministic
        // semigroup; the slowest mode sets the rate ½μ₁(μ₁ - λ).
        let p = white(1.0).without_nonlinearity().with_dt(1e-5);
        let x = SpectralField::single_mode(0.0, 1, 0.01, 8);
        let y = SpectralField::zeros(8);
        let trace = synchronous_trace(&p, &x, &y, 0.05, 100, 4).unwrap();
        let mu = PI * PI;
        assert!((trace.rate().unwrap() - 0.5 * mu * (mu - 1.0)).abs() < 1e-6);
        assert!((synchronous_rate(1.0).unwrap() - 0.5 * 87.539_486_6).abs() < 1e-6);
    }
}

//! Sampling of the Gaussian reference measure with covariance `(-A)^{-1}`
//! on the mass-`c` affine space, pCN chains for measures with density
//! `exp(-∫ energy)` against it, and comparison with long-run dynamics.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{derive_seed, path_rng, run_paths, Integrator, ModelParams};
use crate::error::{Error, Result};
use crate::potential::{big_f, f_n};
use crate::report::CheckReport;
use crate::spectral::{eigen_mu, CosineTransform, SpectralField};
use crate::stats::Moments;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GibbsVariant {
    /// `∫F` with the constraint `|u| ≤ 1` enforced on the grid.
    LimitF,
    /// Unconstrained `∫F_n`.
    FiniteN { n_poly: usize },
    /// Zero energy: the reference measure itself.
    Gaussian,
}

/// A measure `exp(-E(u)) μ^c(du)` with `E` a grid quadrature.
#[derive(Debug, Clone)]
pub struct GibbsTarget {
    pub lambda: f64,
    pub mass_c: f64,
    pub variant: GibbsVariant,
    transform: CosineTransform,
}

impl GibbsTarget {
    pub fn new(lambda: f64, mass_c: f64, modes: usize, grid: usize, variant: GibbsVariant) -> Result<Self> {
        if !(mass_c > -1.0 && mass_c < 1.0) {
            return Err(Error::Validation(format!("mass must lie in (-1,1), got {mass_c}")));
        }
        if !lambda.is_finite() {
            return Err(Error::Validation("lambda must be finite".into()));
        }
        Ok(Self {
            lambda,
            mass_c,
            variant,
            transform: CosineTransform::new(modes, grid)?,
        })
    }

    /// Target matching the finite-n dynamics of `p`.
    pub fn for_model(p: &ModelParams) -> Result<Self> {
        Self::new(
            p.lambda,
            p.mass_c,
            p.modes,
            p.grid_size(),
            GibbsVariant::FiniteN { n_poly: p.n_poly },
        )
    }

    pub fn modes(&self) -> usize {
        self.transform.truncation()
    }

    pub fn grid_size(&self) -> usize {
        self.transform.grid_size()
    }

    fn energy_with(&self, u: &SpectralField, grid: &mut [f64]) -> f64 {
        if self.variant == GibbsVariant::Gaussian {
            return 0.0;
        }
        self.transform.synthesize_into(u.coeffs(), grid);
        let q = grid.len() as f64;
        match self.variant {
            GibbsVariant::LimitF => {
                let mut acc = 0.0;
                for &v in grid.iter() {
                    match big_f(v, self.lambda) {
                        Ok(f) => acc += f,
                        Err(_) => return f64::INFINITY,
                    }
                }
                acc / q
            }
            GibbsVariant::FiniteN { n_poly } => {
                grid.iter().map(|&v| f_n(v, n_poly, self.lambda)).sum::<f64>() / q
            }
            GibbsVariant::Gaussian => 0.0,
        }
    }

    /// Grid quadrature of the energy density; `+∞` outside the constraint.
    pub fn energy(&self, u: &SpectralField) -> f64 {
        if u.truncation() != self.modes() {
            let p = SpectralField::from_padded(u.coeffs(), self.modes());
            return match p {
                Ok(p) => self.energy(&p),
                Err(_) => f64::NAN,
            };
        }
        let mut grid = vec![0.0; self.grid_size()];
        self.energy_with(u, &mut grid)
    }
}

/// Mode `k ≥ 1` is `N(0, (kπ)^{-2})`, the mean is `c`.
pub fn sample_mu_c<R: Rng + ?Sized>(mass_c: f64, m: usize, rng: &mut R) -> SpectralField {
    let mut c = vec![0.0; m + 1];
    c[0] = mass_c;
    fill_reference(&mut c, rng);
    SpectralField::from_coeffs(c).expect("finite draws")
}

fn fill_reference<R: Rng + ?Sized>(c: &mut [f64], rng: &mut R) {
    for (k, v) in c.iter_mut().enumerate().skip(1) {
        let z: f64 = rng.sample(StandardNormal);
        *v = z / eigen_mu(k).sqrt();
    }
}

/// pCN proposal `c + √(1-β²)(x - c) + βξ`, accepted with probability
/// `min(1, exp(E(x) - E(y)))`.
pub fn pcn_step<R: Rng + ?Sized>(
    target: &GibbsTarget,
    state: &SpectralField,
    beta: f64,
    rng: &mut R,
) -> Result<(SpectralField, bool)> {
    let mut chain = PcnChain::new(target, state.clone(), beta)?;
    let accepted = chain.step(rng);
    Ok((chain.state, accepted))
}

/// A pCN chain caching the energy of its current state.
#[derive(Debug, Clone)]
pub struct PcnChain<'a> {
    target: &'a GibbsTarget,
    pub state: SpectralField,
    pub energy: f64,
    pub beta: f64,
    pub proposed: usize,
    pub accepted: usize,
    proposal: Vec<f64>,
    grid: Vec<f64>,
}

impl<'a> PcnChain<'a> {
    pub fn new(target: &'a GibbsTarget, state: SpectralField, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Validation(format!("beta must lie in (0,1], got {beta}")));
        }
        if state.truncation() != target.modes() {
            return Err(Error::Shape("chain state truncation differs from the target".into()));
        }
        if (state.mean() - target.mass_c).abs() > 1e-13 {
            return Err(Error::Validation("chain state must have mean c".into()));
        }
        let mut grid = vec![0.0; target.grid_size()];
        let energy = target.energy_with(&state, &mut grid);
        Ok(Self {
            target,
            proposal: vec![0.0; state.coeffs().len()],
            state,
            energy,
            beta,
            proposed: 0,
            accepted: 0,
            grid,
        })
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let keep = (1.0 - self.beta * self.beta).sqrt();
        fill_reference(&mut self.proposal, rng);
        self.proposal[0] = self.state.mean();
        for (y, x) in self.proposal.iter_mut().zip(self.state.coeffs()).skip(1) {
            *y = keep * x + self.beta * *y;
        }
        let candidate = SpectralField::from_coeffs(self.proposal.clone()).expect("finite proposal");
        let e = self.target.energy_with(&candidate, &mut self.grid);
        self.proposed += 1;
        let accept = e.is_finite() && {
            let log_ratio = self.energy - e;
            log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp()
        };
        if accept {
            self.state = candidate;
            self.energy = e;
            self.accepted += 1;
        }
        accept
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Raised when a pilot chain accepts fewer than 1% of proposals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerWarning {
    pub beta: f64,
    pub acceptance: f64,
}

/// Run lengths and tolerances of [`compare_invariant`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    pub t_long: f64,
    pub burn_in: f64,
    pub paths: usize,
    /// Record a dynamics sample every this many steps.
    pub sample_every: usize,
    pub chains: usize,
    pub chain_steps: usize,
    pub chain_burn_in: usize,
    pub beta: f64,
    /// Modes `1..=max_mode` are compared.
    pub max_mode: usize,
    /// Allowed relative discrepancy on top of the 3σ rule.
    pub rel_band: f64,
    /// Keep every this many states of chain 0 for dumping (0 disables).
    pub keep_every: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            t_long: 2.0,
            burn_in: 0.2,
            paths: 64,
            sample_every: 10,
            chains: 16,
            chain_steps: 200_000,
            chain_burn_in: 5_000,
            beta: 0.2,
            max_mode: 5,
            rel_band: 0.0,
            keep_every: 0,
        }
    }
}

/// Per-mode first and second moments, one independent estimate per path or
/// chain.
#[derive(Debug, Clone)]
pub struct ModeMoments {
    pub first: Vec<Moments>,
    pub second: Vec<Moments>,
    pub energy: Moments,
}

impl ModeMoments {
    fn new(max_mode: usize) -> Self {
        Self {
            first: vec![Moments::new(); max_mode + 1],
            second: vec![Moments::new(); max_mode + 1],
            energy: Moments::new(),
        }
    }

    fn absorb(&mut self, unit: &UnitAverages) {
        for k in 0..self.first.len() {
            self.first[k].push(unit.first[k]);
            self.second[k].push(unit.second[k]);
        }
        self.energy.push(unit.energy);
    }

    /// `(variance, stderr)` of mode `k`.
    pub fn variance(&self, k: usize) -> (f64, f64) {
        let m = self.first[k].mean();
        let v = self.second[k].mean() - m * m;
        let se = (self.second[k].stderr().powi(2) + (2.0 * m * self.first[k].stderr()).powi(2)).sqrt();
        (v, se)
    }

    pub fn mean(&self, k: usize) -> (f64, f64) {
        (self.first[k].mean(), self.first[k].stderr())
    }

    pub fn units(&self) -> usize {
        self.energy.count()
    }
}

/// Time averages of one path or chain.
#[derive(Debug, Clone)]
struct UnitAverages {
    first: Vec<f64>,
    second: Vec<f64>,
    energy: f64,
}

impl UnitAverages {
    fn new(max_mode: usize) -> Self {
        Self {
            first: vec![0.0; max_mode + 1],
            second: vec![0.0; max_mode + 1],
            energy: 0.0,
        }
    }

    fn add(&mut self, u: &SpectralField, energy: f64) {
        for k in 0..self.first.len() {
            let v = u.coeff(k);
            self.first[k] += v;
            self.second[k] += v * v;
        }
        self.energy += energy;
    }

    fn finish(mut self, n: usize) -> Self {
        let n = n.max(1) as f64;
        self.first.iter_mut().chain(self.second.iter_mut()).for_each(|v| *v /= n);
        self.energy /= n;
        self
    }
}

/// Time-averaged moments of the dynamics started from `c e_0`.
pub fn dynamics_moments(
    p: &ModelParams,
    target: &GibbsTarget,
    opts: &CompareOptions,
    seed: u64,
) -> Result<(ModeMoments, usize)> {
    if !p.noise.is_white() {
        return Err(Error::Variant("invariant comparison needs B = (-A)^(1/2)".into()));
    }
    if opts.max_mode > p.modes || target.modes() != p.modes {
        return Err(Error::Shape("compared modes exceed the truncation".into()));
    }
    let integ = Integrator::new(p)?;
    let first = integ.steps_for(opts.burn_in);
    let last = integ.steps_for(opts.t_long);
    if last <= first {
        return Err(Error::Validation("t_long must exceed burn_in".into()));
    }
    let x = SpectralField::constant(p.mass_c, p.modes);
    let every = opts.sample_every.max(1);
    let runs = run_paths(opts.paths, seed, |_, rng| {
        let mut acc = UnitAverages::new(opts.max_mode);
        let mut n = 0;
        let mut grid = vec![0.0; target.grid_size()];
        integ
            .run_path(&x, last, rng, |s, _, u| {
                if s > first && (s - first) % every == 0 {
                    acc.add(u, target.energy_with(u, &mut grid));
                    n += 1;
                }
            })
            .map(|_| acc.finish(n))
    });
    let mut out = ModeMoments::new(opts.max_mode);
    let mut failures = 0;
    for r in runs {
        match r {
            Ok(unit) => out.absorb(&unit),
            Err(Error::Divergence { .. }) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    if out.units() == 0 {
        return Err(Error::Estimator("every dynamics path diverged".into()));
    }
    Ok((out, failures))
}

/// Chain moments plus sampler diagnostics.
#[derive(Debug, Clone)]
pub struct ChainSummary {
    pub moments: ModeMoments,
    pub beta: f64,
    pub acceptance: f64,
    pub warnings: Vec<SamplerWarning>,
    pub samples: Vec<SpectralField>,
}

/// Independent pCN chains from `c e_0`. The step size is halved until a
/// pilot run accepts at least 1% of its proposals.
pub fn chain_moments(target: &GibbsTarget, opts: &CompareOptions, seed: u64) -> Result<ChainSummary> {
    if opts.max_mode > target.modes() {
        return Err(Error::Shape("compared modes exceed the truncation".into()));
    }
    let start = SpectralField::constant(target.mass_c, target.modes());
    let mut beta = opts.beta;
    let mut warnings = Vec::new();
    let pilot_seed = derive_seed(seed, "pilot");
    for attempt in 0..20 {
        let mut chain = PcnChain::new(target, start.clone(), beta)?;
        let mut rng = path_rng(pilot_seed, attempt);
        for _ in 0..opts.chain_burn_in.max(200) {
            chain.step(&mut rng);
        }
        let rate = chain.acceptance_rate();
        if rate >= 0.01 {
            break;
        }
        warnings.push(SamplerWarning {
            beta,
            acceptance: rate,
        });
        beta *= 0.5;
    }
    let runs = run_paths(opts.chains, derive_seed(seed, "chains"), |i, rng| {
        let mut chain = PcnChain::new(target, start.clone(), beta)?;
        for _ in 0..opts.chain_burn_in {
            chain.step(rng);
        }
        chain.proposed = 0;
        chain.accepted = 0;
        let mut acc = UnitAverages::new(opts.max_mode);
        let mut kept = Vec::new();
        for s in 0..opts.chain_steps {
            chain.step(rng);
            acc.add(&chain.state, chain.energy);
            if i == 0 && opts.keep_every > 0 && s % opts.keep_every == 0 {
                kept.push(chain.state.clone());
            }
        }
        Ok::<_, Error>((acc.finish(opts.chain_steps), chain.acceptance_rate(), kept))
    });
    let mut moments = ModeMoments::new(opts.max_mode);
    let mut acceptance = Moments::new();
    let mut samples = Vec::new();
    for r in runs {
        let (unit, rate, kept) = r?;
        moments.absorb(&unit);
        acceptance.push(rate);
        if !kept.is_empty() {
            samples = kept;
        }
    }
    Ok(ChainSummary {
        moments,
        beta,
        acceptance: acceptance.mean(),
        warnings,
        samples,
    })
}

/// Reports and diagnostics of one comparison.
#[derive(Debug, Clone)]
pub struct InvariantComparison {
    pub reports: Vec<CheckReport>,
    pub dynamics: ModeMoments,
    pub chains: ChainSummary,
    pub failures: usize,
    pub requested: usize,
}

/// Compares mode means, mode variances and the mean energy between long-run
/// dynamics and pCN samples of `target`.
pub fn compare_invariant(
    p: &ModelParams,
    target: &GibbsTarget,
    opts: &CompareOptions,
    seed: u64,
) -> Result<InvariantComparison> {
    let (dyn_m, failures) = dynamics_moments(p, target, opts, derive_seed(seed, "dynamics"))?;
    let chains = chain_moments(target, opts, seed)?;
    let mc = &chains.moments;
    let units = dyn_m.units().min(mc.units());
    let exact = target.variant == GibbsVariant::Gaussian && !p.nonlinearity && p.lambda == 0.0;
    let mut reports = Vec::new();
    let band = |v: f64| opts.rel_band * v.abs();
    for k in 0..=opts.max_mode {
        let (a, b) = (dyn_m.mean(k), mc.mean(k));
        reports.push(CheckReport::two_sided(
            format!("invariant_mode_mean(k={k})"),
            a,
            b,
            band(b.0),
            units,
            seed,
        ));
    }
    for k in 1..=opts.max_mode {
        let (a, b) = (dyn_m.variance(k), mc.variance(k));
        reports.push(CheckReport::two_sided(
            format!("invariant_mode_variance(k={k})"),
            a,
            b,
            band(b.0),
            units,
            seed,
        ));
    }
    let e = (dyn_m.energy.mean(), dyn_m.energy.stderr());
    let f = (mc.energy.mean(), mc.energy.stderr());
    reports.push(CheckReport::two_sided("invariant_energy", e, f, band(f.0), units, seed));
    if !exact {
        reports = reports.into_iter().map(CheckReport::into_heuristic).collect();
    }
    Ok(InvariantComparison {
        reports,
        dynamics: dyn_m,
        chains,
        failures,
        requested: opts.paths,
    })
}

/// `sample_index,mode_0,...,mode_M`.
pub fn write_samples_csv<W: Write>(w: &mut W, samples: &[SpectralField]) -> Result<()> {
    let m = samples.first().map_or(0, |u| u.truncation());
    write!(w, "sample_index")?;
    for k in 0..=m {
        write!(w, ",mode_{k}")?;
    }
    writeln!(w)?;
    for (i, u) in samples.iter().enumerate() {
        write!(w, "{i}")?;
        for c in u.coeffs() {
            write!(w, ",{c:?}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn energy_examples() {
        let t = GibbsTarget::new(2.0, 0.0, 4, 16, GibbsVariant::LimitF).unwrap();
        assert_eq!(t.energy(&SpectralField::zeros(4)), 0.0);
        let half = SpectralField::constant(0.5, 4);
        let direct = 1.5 * 1.5f64.ln() + 0.5 * 0.5f64.ln() - 0.25;
        assert!((t.energy(&half) - direct).abs() < 1e-14);
        assert!((t.energy(&half) - 0.011_624_1).abs() < 1e-6);
        // grid value 0.2 + √2·0.8·cos(πθ) exceeds 1 near θ = 0
        let out = SpectralField::single_mode(0.2, 1, 0.8, 4);
        assert_eq!(t.energy(&out), f64::INFINITY);
        let n = GibbsTarget::new(2.0, 0.0, 4, 16, GibbsVariant::FiniteN { n_poly: 1 }).unwrap();
        assert!((n.energy(&half) - f_n(0.5, 1, 2.0)).abs() < 1e-15);
        assert!(n.energy(&out).is_finite());
    }

    #[test]
    fn reference_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut v1 = Moments::new();
        let mut v2 = Moments::new();
        for _ in 0..n {
            let u = sample_mu_c(0.3, 4, &mut rng);
            assert_eq!(u.mean(), 0.3);
            v1.push(u.coeff(1) * u.coeff(1));
            v2.push(u.coeff(2) * u.coeff(2));
        }
        let e1 = 1.0 / (PI * PI);
        let e2 = 1.0 / (4.0 * PI * PI);
        assert!((e1 - 0.101_321).abs() < 1e-6 && (e2 - 0.025_330_3).abs() < 1e-7);
        assert!((v1.mean() - e1).abs() < 3.0 * v1.stderr());
        assert!((v2.mean() - e2).abs() < 3.0 * v2.stderr());
    }

    #[test]
    fn pcn_basics() {
        let g = GibbsTarget::new(1.0, 0.1, 6, 24, GibbsVariant::Gaussian).unwrap();
        let x = SpectralField::single_mode(0.1, 2, 0.3, 6);
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let (y, acc) = pcn_step(&g, &x, 1.0, &mut a).unwrap();
        assert!(acc);
        // β = 1 discards the current state entirely
        let mut b = ChaCha8Rng::seed_from_u64(4);
        let fresh = sample_mu_c(0.1, 6, &mut b);
        assert_eq!(y, fresh);
        assert!(pcn_step(&g, &x, 0.0, &mut a).is_err());
        assert!(pcn_step(&g, &SpectralField::zeros(6), 0.5, &mut a).is_err());
    }

    #[test]
    fn constrained_chain_stays_in_bounds() {
        let t = GibbsTarget::new(1.0, 0.0, 8, 32, GibbsVariant::LimitF).unwrap();
        let mut chain = PcnChain::new(&t, SpectralField::zeros(8), 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tr = CosineTransform::new(8, 32).unwrap();
        let mut rejected_outside = 0;
        for _ in 0..5000 {
            if !chain.step(&mut rng) {
                rejected_outside += 1;
            }
            let g = tr.synthesize(&chain.state).unwrap();
            assert!(g.values.iter().all(|v| v.abs() <= 1.0));
            assert_eq!(chain.state.mean(), 0.0);
        }
        assert!(rejected_outside > 0);
    }

    #[test]
    fn gaussian_chain_preserves_reference() {
        let g = GibbsTarget::new(0.0, 0.0, 5, 20, GibbsVariant::Gaussian).unwrap();
        let opts = CompareOptions {
            chains: 8,
            chain_steps: 12_500,
            chain_burn_in: 500,
            beta: 0.5,
            max_mode: 3,
            ..CompareOptions::default()
        };
        let s = chain_moments(&g, &opts, 2).unwrap();
        assert_eq!(s.acceptance, 1.0);
        assert!(s.warnings.is_empty());
        for k in 1..=3 {
            let (v, se) = s.moments.variance(k);
            let exact = 1.0 / eigen_mu(k);
            assert!((v - exact).abs() < 3.0 * se, "mode {k}: {v} vs {exact} ± {se}");
        }
    }

    #[test]
    fn equal_energies_always_accept() {
        let g = GibbsTarget::new(0.0, 0.0, 3, 12, GibbsVariant::Gaussian).unwrap();
        let mut chain = PcnChain::new(&g, SpectralField::zeros(3), 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| chain.step(&mut rng)));
    }

    #[test]
    fn halves_beta_when_stuck() {
        // a very stiff constraint: almost every large move leaves [-1, 1]
        let t = GibbsTarget::new(1.0, 0.99, 16, 64, GibbsVariant::LimitF).unwrap();
        let opts = CompareOptions {
            chains: 1,
            chain_steps: 10,
            chain_burn_in: 400,
            beta: 1.0,
            max_mode: 1,
            ..CompareOptions::default()
        };
        let s = chain_moments(&t, &opts, 1).unwrap();
        assert!(!s.warnings.is_empty());
        assert!(s.beta < 1.0);
        assert!(s.warnings.iter().all(|w| w.acceptance < 0.01));
    }

    #[test]
    fn samples_csv() {
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &[SpectralField::constant(0.25, 1)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "sample_index,mode_0,mode_1\n0,0.25,0.0\n");
    }

    #[test]
    fn linear_dynamics_against_reference() {
        let p = ModelParams::new(0.0, NoiseSpec::WhiteSqrtLaplacian)
            .with_modes(6)
            .with_dt(1e-4)
            .without_nonlinearity();
        let g = GibbsTarget::new(0.0, 0.0, 6, 24, GibbsVariant::Gaussian).unwrap();
        let opts = CompareOptions {
            t_long: 1.0,
            burn_in: 0.1,
            paths: 16,
            chains: 8,
            chain_steps: 5_000,
            chain_burn_in: 100,
            beta: 0.5,
            max_mode: 3,
            ..CompareOptions::default()
        };
        let cmp = compare_invariant(&p, &g, &opts, 9).unwrap();
        assert!(cmp.reports.iter().all(|r| !r.advisory));
        let mean0 = cmp.reports.iter().find(|r| r.name == "invariant_mode_mean(k=0)").unwrap();
        assert_eq!(mean0.lhs, 0.0);
        for k in 1..=3 {
            let (v, _) = cmp.dynamics.variance(k);
            let exact = 1.0 / eigen_mu(k);
            assert!((v / exact - 1.0).abs() < 0.1, "mode {k}: {v}");
        }
    }
}

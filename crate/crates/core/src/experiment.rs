//! Experiment orchestration: validation, ensembles, report and artifact files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::{validate_config, Experiment, ExperimentConfig, HarnackKind};
use crate::dynamics::{
    path_rng, run_paths, simulate_ensemble, write_endpoints_csv, write_trajectory_csv, DegenerateCoupling,
    GammaSchedule, Integrator, Trajectory, WhiteCoupling,
};
use crate::error::{Error, Result};
use crate::gibbs::{compare_invariant, write_samples_csv, GibbsTarget};
use crate::harnack::{self, WeightSample};
use crate::report::{write_reports, CheckReport};

/// Largest tolerated fraction of diverged paths.
pub const MAX_FAILURE_RATE: f64 = 0.01;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub reports: Vec<CheckReport>,
    pub failures: usize,
    pub requested: usize,
    pub warnings: Vec<String>,
}

impl RunOutcome {
    pub fn failure_rate(&self) -> f64 {
        if self.requested == 0 {
            0.0
        } else {
            self.failures as f64 / self.requested as f64
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.failure_rate() > MAX_FAILURE_RATE {
            EXIT_DIVERGED
        } else if self.reports.iter().all(|r| r.advisory || r.pass) {
            EXIT_OK
        } else {
            EXIT_CHECK_FAILED
        }
    }

    fn count(&mut self, failures: usize, requested: usize) {
        self.failures += failures;
        self.requested += requested;
    }
}

pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_)
        | Error::Config { .. }
        | Error::Domain(_)
        | Error::Variant(_)
        | Error::Shape(_)
        | Error::Schedule(_)
        | Error::Stability(_) => EXIT_INVALID,
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_CHECK_FAILED,
    }
}

/// One-line JSON diagnostic for stderr.
pub fn error_json(e: &Error) -> String {
    let mut obj = serde_json::json!({
        "error": e.kind(),
        "message": e.to_string(),
    });
    if let Error::Validation(m) = e {
        if let Some(cond) = ["A1", "A2"].into_iter().find(|c| m.contains(c)) {
            obj["condition"] = cond.into();
        }
    }
    obj.to_string()
}

/// Validates `cfg`, runs it and writes `manifest.txt`, `reports.jsonl` and
/// any requested dumps into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    validate_config(cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("manifest.txt"), cfg.to_manifest())?;
    let outcome = match cfg.experiment {
        Experiment::Validate => RunOutcome::default(),
        Experiment::Simulate => simulate(cfg, out)?,
        Experiment::CoupleDegenerate => couple_degenerate(cfg, out)?,
        Experiment::CoupleWhite => couple_white(cfg, out)?,
        Experiment::Harnack => harnack_check(cfg)?,
        Experiment::Gibbs => gibbs(cfg, out)?,
        Experiment::Moments => moments(cfg)?,
    };
    let mut w = BufWriter::new(File::create(out.join("reports.jsonl"))?);
    write_reports(&mut w, &outcome.reports)?;
    w.flush()?;
    Ok(outcome)
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let p = &cfg.model;
    let r = &cfg.run;
    let x = cfg.x_field()?;
    let ens = simulate_ensemble(p, &x, r.t, r.paths, cfg.seed)?;
    let mut o = RunOutcome::default();
    o.count(ens.failures(), ens.paths());
    let drift = ens
        .successes()
        .map(|u| (u.mean() - p.mass_c).abs())
        .fold(0.0, f64::max);
    o.reports.push(CheckReport::new(
        "mass_conservation",
        drift,
        1e-12,
        0.0,
        0.0,
        ens.paths(),
        cfg.seed,
    ));
    let mut w = BufWriter::new(File::create(out.join("endpoints.csv"))?);
    write_endpoints_csv(&mut w, &ens.endpoints, p.modes)?;
    w.flush()?;
    if let Some(format) = r.trajectory {
        let integ = Integrator::new(p)?;
        let every = r.record_every.max(1);
        let mut traj = Trajectory::default();
        let res = integ.run_path(&x, integ.steps_for(r.t), &mut path_rng(cfg.seed, 0), |s, t, u| {
            if s.is_multiple_of(every) {
                traj.push(t, u);
            }
        });
        if let Err(e) = res {
            o.warnings.push(format!("trajectory path stopped early: {e}"));
        }
        let mut w = BufWriter::new(File::create(out.join("trajectory.csv"))?);
        write_trajectory_csv(&mut w, &traj, format)?;
        w.flush()?;
    }
    Ok(o)
}

/// `t,distance,log_weight` rows for the first coupled pair.
fn write_coupling_trace(out: &Path, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(out.join("trajectory.csv"))?);
    writeln!(w, "t,distance,log_weight")?;
    for (t, d, l) in rows {
        writeln!(w, "{t:?},{d:?},{l:?}")?;
    }
    w.flush()?;
    Ok(())
}

fn couple_degenerate(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let p = &cfg.model;
    let r = &cfg.run;
    let (x, y) = (cfg.x_field()?, cfg.y_field()?);
    let coupling = DegenerateCoupling::new(p)?;
    let every = r.record_every.max(1);
    let want_trace = r.trajectory.is_some();
    let runs = run_paths(r.paths, cfg.seed, |i, rng| {
        let mut trace = Vec::new();
        let mut n = 0usize;
        let run = coupling.run(&x, &y, r.t, rng, |path| {
            if i == 0 && want_trace && n.is_multiple_of(every) {
                trace.push((path.t, path.distance(), path.log_weight));
            }
            n += 1;
        });
        run.map(|run| (run, trace))
    });
    let mut o = RunOutcome::default();
    let mut contraction = 0.0f64;
    let mut xi = 0.0f64;
    let mut ok = 0;
    for (i, run) in runs.iter().enumerate() {
        match run {
            Ok((run, trace)) => {
                ok += 1;
                contraction = contraction.max(run.max_contraction_ratio);
                xi = xi.max(run.max_xi_ratio);
                if i == 0 && want_trace {
                    write_coupling_trace(out, trace)?;
                }
            }
            Err(_) => o.failures += 1,
        }
    }
    o.requested += runs.len();
    if ok == 0 {
        return Err(Error::Estimator("every coupled path failed".into()));
    }
    o.reports.push(CheckReport::new(
        "degenerate_contraction",
        contraction,
        1.0 + r.tol,
        0.0,
        0.0,
        ok,
        cfg.seed,
    ));
    o.reports.push(CheckReport::new("degenerate_xi_bound", xi, 1.0 + r.tol, 0.0, 0.0, ok, cfg.seed));
    if r.paths >= 2 {
        let sample = WeightSample::degenerate(p, &x, &y, r.t, r.paths, cfg.seed)?;
        o.reports.push(sample.entropy_report()?);
        o.reports.push(sample.normalization_report()?);
    }
    Ok(o)
}

fn couple_white(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let p = &cfg.model;
    let r = &cfg.run;
    let (x, y) = (cfg.x_field()?, cfg.y_field()?);
    let schedule = GammaSchedule::new(r.horizon, r.a, p.lambda)?;
    let mut coupling = WhiteCoupling::new(p, schedule)?;
    coupling.kappa = r.kappa;
    coupling.coupling_tol = r.coupling_tol;
    if let Some(e) = r.end_offset {
        coupling.end_offset = e;
    }
    let want_trace = r.trajectory.is_some();
    let runs = run_paths(r.paths, cfg.seed, |i, rng| coupling.run(&x, &y, rng, i == 0 && want_trace));
    let mut o = RunOutcome::default();
    let (mut ledger, mut shift, mut meet) = (0.0f64, 0.0f64, 0.0f64);
    let mut ok = 0;
    for (i, run) in runs.iter().enumerate() {
        match run {
            Ok(run) => {
                ok += 1;
                ledger = ledger.max(run.max_ledger_ratio);
                shift = shift.max(run.shift_ratio);
                if run.initial_distance > 0.0 {
                    meet = meet.max(run.final_distance / run.initial_distance);
                }
                if i == 0 && want_trace {
                    let every = r.record_every.max(1);
                    let rows: Vec<_> = run
                        .records
                        .iter()
                        .step_by(every)
                        .map(|rec| (rec.t, rec.distance, rec.ledger))
                        .collect();
                    let mut w = BufWriter::new(File::create(out.join("trajectory.csv"))?);
                    writeln!(w, "t,distance,ledger")?;
                    for (t, d, l) in rows {
                        writeln!(w, "{t:?},{d:?},{l:?}")?;
                    }
                    w.flush()?;
                }
            }
            Err(_) => o.failures += 1,
        }
    }
    o.requested += runs.len();
    if ok == 0 {
        return Err(Error::Estimator("every coupled path failed".into()));
    }
    o.reports.push(CheckReport::new("white_ledger", ledger, 1.0 + r.tol, 0.0, 0.0, ok, cfg.seed));
    o.reports.push(CheckReport::new(
        "white_coupling_success",
        meet,
        r.coupling_tol,
        0.0,
        0.0,
        ok,
        cfg.seed,
    ));
    o.reports.push(CheckReport::new("white_shift_energy", shift, 1.0 + r.tol, 0.0, 0.0, ok, cfg.seed));
    if r.paths >= 2 {
        let sample = WeightSample::white(p, schedule, &x, &y, r.paths, cfg.seed)?;
        o.reports.push(sample.entropy_report()?);
        o.reports.push(sample.normalization_report()?);
        o.reports.push(sample.q_moment_report(r.q)?);
    }
    Ok(o)
}

fn harnack_check(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let p = &cfg.model;
    let r = &cfg.run;
    let (x, y) = (cfg.x_field()?, cfg.y_field()?);
    let seed = cfg.seed;
    let outcome = match r.kind {
        HarnackKind::Asymptotic => harnack::check_asymptotic_log_harnack(&x, &y, r.t, &r.phi, p, r.paths, seed)?,
        HarnackKind::Power => harnack::check_power_harnack(&x, &y, r.t, &r.phi, r.power, p, r.paths, seed)?,
        HarnackKind::Log => harnack::check_log_harnack_white(&x, &y, r.t, &r.phi, p, r.paths, seed)?,
        HarnackKind::Gradient => {
            let dir = cfg.direction_field()?;
            harnack::check_gradient_estimate(&x, &dir, r.t, &r.phi, p, r.epsilon, r.paths, seed)?
        }
        HarnackKind::Decay => {
            let times = if r.times.is_empty() {
                vec![0.02, 0.04, 0.06, 0.08, 0.1]
            } else {
                r.times.clone()
            };
            harnack::check_ergodic_decay(&x, &y, &r.phi, p, &times, r.paths, seed)?
        }
    };
    let mut o = RunOutcome::default();
    o.count(outcome.failures, outcome.requested);
    o.reports.push(outcome.report);
    Ok(o)
}

fn gibbs(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let p = &cfg.model;
    let g = &cfg.gibbs;
    let target = GibbsTarget::new(p.lambda, p.mass_c, p.modes, p.grid_size(), g.variant)?;
    let cmp = compare_invariant(p, &target, &g.options, cfg.seed)?;
    let mut o = RunOutcome::default();
    o.count(cmp.failures, cmp.requested);
    o.warnings.extend(cmp.chains.warnings.iter().map(|w| {
        format!(
            "pCN acceptance {:.4} too low, step size reduced to {}",
            w.acceptance, w.beta
        )
    }));
    if g.options.keep_every > 0 {
        let mut w = BufWriter::new(File::create(out.join("samples.csv"))?);
        write_samples_csv(&mut w, &cmp.chains.samples)?;
        w.flush()?;
    }
    o.reports = cmp.reports;
    Ok(o)
}

fn moments(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let r = &cfg.run;
    let x = cfg.x_field()?;
    let c = harnack::check_exponential_moment(&x, r.varsigma, &cfg.model, r.horizon, r.paths, cfg.seed)?;
    let mut o = RunOutcome::default();
    o.count(c.failures, c.requested);
    o.reports.push(c.report);
    Ok(o)
}

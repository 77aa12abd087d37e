//! Experiment configuration: flat `key = value` lines grouped under
//! `[section]` headers, `#` comments.
//!
//! ```text
//! experiment = couple-white
//! seed = 7
//!
//! [model]
//! lambda = 1.0
//! noise = white
//!
//! [run]
//! x = 0, 0.05, 0.02
//! horizon = 0.02
//! ```
//!
//! The manifest written next to every run is the fully resolved
//! configuration in the same format, so it can be fed back in unchanged.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::dynamics::{ModelParams, Scheme, TrajectoryFormat};
use crate::error::{Error, Result};
use crate::gibbs::{CompareOptions, GibbsVariant};
use crate::harnack::TestFunctional;
use crate::noise::NoiseSpec;
use crate::spectral::SpectralField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Simulate,
    CoupleDegenerate,
    CoupleWhite,
    Harnack,
    Gibbs,
    Moments,
    Validate,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Simulate,
        Experiment::CoupleDegenerate,
        Experiment::CoupleWhite,
        Experiment::Harnack,
        Experiment::Gibbs,
        Experiment::Moments,
        Experiment::Validate,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::CoupleDegenerate => "couple-degenerate",
            Experiment::CoupleWhite => "couple-white",
            Experiment::Harnack => "harnack",
            Experiment::Gibbs => "gibbs",
            Experiment::Moments => "moments",
            Experiment::Validate => "validate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

/// Which inequality `harnack` checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarnackKind {
    Asymptotic,
    Power,
    Log,
    Gradient,
    Decay,
}

impl HarnackKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HarnackKind::Asymptotic => "asymptotic",
            HarnackKind::Power => "power",
            HarnackKind::Log => "log",
            HarnackKind::Gradient => "gradient",
            HarnackKind::Decay => "decay",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            HarnackKind::Asymptotic,
            HarnackKind::Power,
            HarnackKind::Log,
            HarnackKind::Gradient,
            HarnackKind::Decay,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

/// Experiment-specific settings. Coefficient lists start with the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
    pub times: Vec<f64>,
    pub paths: usize,
    pub power: f64,
    pub q: f64,
    pub a: f64,
    pub horizon: f64,
    pub varsigma: f64,
    pub phi: TestFunctional,
    pub kind: HarnackKind,
    pub epsilon: f64,
    pub direction: Vec<f64>,
    /// Relative slack allowed on pathwise discretised bounds.
    pub tol: f64,
    pub coupling_tol: f64,
    pub kappa: f64,
    /// `None` means `1e-6·horizon`.
    pub end_offset: Option<f64>,
    pub trajectory: Option<TrajectoryFormat>,
    pub record_every: usize,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            x: vec![],
            y: vec![],
            t: 0.01,
            times: vec![],
            paths: 2000,
            power: 2.0,
            q: 2.0,
            a: 1.0,
            horizon: 0.01,
            varsigma: 10.0,
            phi: TestFunctional::ExpSinMode { mode: 1 },
            kind: HarnackKind::Asymptotic,
            epsilon: 1e-3,
            direction: vec![0.0, 1.0],
            tol: 0.02,
            coupling_tol: 1e-4,
            kappa: 0.5,
            end_offset: None,
            trajectory: None,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsParams {
    pub variant: GibbsVariant,
    pub options: CompareOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub model: ModelParams,
    pub run: RunParams,
    pub gibbs: GibbsParams,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, model: ModelParams) -> Self {
        Self {
            experiment,
            seed: 0,
            output_dir: None,
            model,
            run: RunParams::default(),
            gibbs: GibbsParams {
                variant: GibbsVariant::FiniteN { n_poly: 2 },
                options: CompareOptions::default(),
            },
        }
    }

    /// Initial field `x`, defaulting to the constant `c`.
    pub fn x_field(&self) -> Result<SpectralField> {
        self.field(&self.run.x)
    }

    /// Second initial field, defaulting to `x`.
    pub fn y_field(&self) -> Result<SpectralField> {
        if self.run.y.is_empty() {
            self.x_field()
        } else {
            self.field(&self.run.y)
        }
    }

    fn field(&self, list: &[f64]) -> Result<SpectralField> {
        if list.is_empty() {
            return Ok(SpectralField::constant(self.model.mass_c, self.model.modes));
        }
        SpectralField::from_padded(list, self.model.modes).map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn direction_field(&self) -> Result<SpectralField> {
        SpectralField::from_padded(&self.run.direction, self.model.modes)
            .map_err(|e| Error::Validation(e.to_string()))
    }

    /// The resolved configuration in config syntax.
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        let m = &self.model;
        let r = &self.run;
        let g = &self.gibbs.options;
        let _ = writeln!(s, "experiment = {}", self.experiment.as_str());
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(dir) = &self.output_dir {
            let _ = writeln!(s, "output_dir = {}", dir.display());
        }
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "lambda = {:?}", m.lambda);
        let _ = writeln!(s, "n_poly = {}", m.n_poly);
        let _ = writeln!(s, "modes = {}", m.modes);
        let _ = writeln!(s, "dt = {:?}", m.dt);
        let _ = writeln!(s, "grid = {}", m.grid_size());
        let _ = writeln!(s, "mass = {:?}", m.mass_c);
        match &m.noise {
            NoiseSpec::WhiteSqrtLaplacian => {
                let _ = writeln!(s, "noise = white");
            }
            NoiseSpec::DegenerateDiagonal { b, active } => {
                let _ = writeln!(s, "noise = degenerate");
                let _ = writeln!(s, "b = {}", list(b));
                let _ = writeln!(s, "active = {active}");
            }
        }
        let _ = writeln!(s, "taming = {:?}", m.taming_threshold);
        let _ = writeln!(s, "nonlinearity = {}", m.nonlinearity);
        let _ = writeln!(s, "scheme = {}", m.scheme.as_str());
        let _ = writeln!(s, "guard = {:?}", m.divergence_guard);
        let _ = writeln!(s, "\n[run]");
        if !r.x.is_empty() {
            let _ = writeln!(s, "x = {}", list(&r.x));
        }
        if !r.y.is_empty() {
            let _ = writeln!(s, "y = {}", list(&r.y));
        }
        let _ = writeln!(s, "t = {:?}", r.t);
        if !r.times.is_empty() {
            let _ = writeln!(s, "times = {}", list(&r.times));
        }
        let _ = writeln!(s, "paths = {}", r.paths);
        let _ = writeln!(s, "p = {:?}", r.power);
        let _ = writeln!(s, "q = {:?}", r.q);
        let _ = writeln!(s, "a = {:?}", r.a);
        let _ = writeln!(s, "horizon = {:?}", r.horizon);
        let _ = writeln!(s, "varsigma = {:?}", r.varsigma);
        let _ = writeln!(s, "phi = {}", functional_text(&r.phi));
        let _ = writeln!(s, "kind = {}", r.kind.as_str());
        let _ = writeln!(s, "epsilon = {:?}", r.epsilon);
        let _ = writeln!(s, "direction = {}", list(&r.direction));
        let _ = writeln!(s, "tol = {:?}", r.tol);
        let _ = writeln!(s, "coupling_tol = {:?}", r.coupling_tol);
        let _ = writeln!(s, "kappa = {:?}", r.kappa);
        if let Some(e) = r.end_offset {
            let _ = writeln!(s, "end_offset = {e:?}");
        }
        let traj = match r.trajectory {
            None => "none",
            Some(TrajectoryFormat::Full) => "full",
            Some(TrajectoryFormat::Reduced) => "reduced",
        };
        let _ = writeln!(s, "trajectory = {traj}");
        let _ = writeln!(s, "record_every = {}", r.record_every);
        let _ = writeln!(s, "\n[gibbs]");
        let variant = match self.gibbs.variant {
            GibbsVariant::LimitF => "limit".to_string(),
            GibbsVariant::FiniteN { n_poly } => format!("finite_n:{n_poly}"),
            GibbsVariant::Gaussian => "gaussian".to_string(),
        };
        let _ = writeln!(s, "variant = {variant}");
        let _ = writeln!(s, "t_long = {:?}", g.t_long);
        let _ = writeln!(s, "burn_in = {:?}", g.burn_in);
        let _ = writeln!(s, "paths = {}", g.paths);
        let _ = writeln!(s, "sample_every = {}", g.sample_every);
        let _ = writeln!(s, "chains = {}", g.chains);
        let _ = writeln!(s, "chain_steps = {}", g.chain_steps);
        let _ = writeln!(s, "chain_burn_in = {}", g.chain_burn_in);
        let _ = writeln!(s, "beta = {:?}", g.beta);
        let _ = writeln!(s, "max_mode = {}", g.max_mode);
        let _ = writeln!(s, "rel_band = {:?}", g.rel_band);
        let _ = writeln!(s, "keep_every = {}", g.keep_every);
        s
    }

    /// Manifest: the resolved configuration plus the code version.
    pub fn to_manifest(&self) -> String {
        format!(
            "{}\n[manifest]\ncode_version = {}\n",
            self.to_config_text(),
            env!("CARGO_PKG_VERSION")
        )
    }
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

/// Comma-separated reals; blank entries are rejected.
pub fn parse_coefficients(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(vec![]);
    }
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Validation(format!("not a finite number: {t:?}")))
        })
        .collect()
}

/// `exp_sin:K`, `affine:K:OFFSET:SLOPE:CLIP` or `table:K:N1;N2;..:V1;V2;..`.
pub fn parse_functional(s: &str) -> Result<TestFunctional> {
    let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
    let bad = || Error::Validation(format!("bad functional {s:?}"));
    let num = |t: &str| t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
    let mode = |t: &str| t.parse::<usize>().map_err(|_| bad());
    let semi = |t: &str| -> Result<Vec<f64>> { t.split(';').map(|v| num(v.trim())).collect() };
    let f = match parts.as_slice() {
        ["exp_sin", k] => TestFunctional::ExpSinMode { mode: mode(k)? },
        ["affine", k, o, sl, c] => TestFunctional::BoundedAffine {
            mode: mode(k)?,
            offset: num(o)?,
            slope: num(sl)?,
            clip: num(c)?,
        },
        ["table", k, n, v] => TestFunctional::Table {
            mode: mode(k)?,
            nodes: semi(n)?,
            values: semi(v)?,
        },
        _ => return Err(bad()),
    };
    f.validate()?;
    Ok(f)
}

pub fn functional_text(f: &TestFunctional) -> String {
    let semi = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";");
    match f {
        TestFunctional::ExpSinMode { mode } => format!("exp_sin:{mode}"),
        TestFunctional::BoundedAffine {
            mode,
            offset,
            slope,
            clip,
        } => format!("affine:{mode}:{offset:?}:{slope:?}:{clip:?}"),
        TestFunctional::Table {
            mode,
            nodes,
            values,
        } => format!("table:{mode}:{}:{}", semi(nodes), semi(values)),
    }
}

type Entries = BTreeMap<(String, String), (String, usize)>;

fn tokenize(text: &str) -> Result<Entries> {
    let mut section = String::new();
    let mut out = Entries::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or(Error::Config {
                line: line_no,
                message: "unterminated section header".into(),
            })?;
            section = name.trim().to_string();
            if !["model", "run", "gibbs", "manifest"].contains(&section.as_str()) {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("unknown section [{section}]"),
                });
            }
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Error::Config {
            line: line_no,
            message: "expected key = value".into(),
        })?;
        let key = (section.clone(), k.trim().to_string());
        if key.1.is_empty() {
            return Err(Error::Config {
                line: line_no,
                message: "empty key".into(),
            });
        }
        if out.insert(key.clone(), (v.trim().to_string(), line_no)).is_some() {
            return Err(Error::Config {
                line: line_no,
                message: format!("duplicate key {}", key.1),
            });
        }
    }
    Ok(out)
}

struct Reader {
    entries: Entries,
}

impl Reader {
    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.entries.remove(&(section.to_string(), key.to_string()))
    }

    fn parse<T, F: Fn(&str) -> Option<T>>(&mut self, section: &str, key: &str, f: F) -> Result<Option<T>> {
        match self.take(section, key) {
            None => Ok(None),
            Some((v, line)) => f(&v).map(Some).ok_or_else(|| Error::Config {
                line,
                message: format!("invalid value {v:?} for {key}"),
            }),
        }
    }

    fn real(&mut self, section: &str, key: &str) -> Result<Option<f64>> {
        self.parse(section, key, |v| v.parse::<f64>().ok().filter(|x| !x.is_nan()))
    }

    fn int(&mut self, section: &str, key: &str) -> Result<Option<usize>> {
        self.parse(section, key, |v| v.parse::<usize>().ok())
    }

    fn list(&mut self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(section, key) {
            None => Ok(None),
            Some((v, line)) => parse_coefficients(&v).map(Some).map_err(|e| Error::Config {
                line,
                message: e.to_string(),
            }),
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Parses configuration text. Unknown keys and malformed values are errors;
/// semantic validation is left to [`validate_config`].
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut r = Reader {
        entries: tokenize(text)?,
    };
    let experiment = match r.take("", "experiment") {
        Some((v, line)) => Experiment::parse(&v).ok_or(Error::Config {
            line,
            message: format!("unknown experiment {v:?}"),
        })?,
        None => Experiment::Validate,
    };
    let seed = r.parse("", "seed", |v| v.parse::<u64>().ok())?.unwrap_or(0);
    let output_dir = r.take("", "output_dir").map(|(v, _)| PathBuf::from(v));

    let lambda = r.real("model", "lambda")?.unwrap_or(1.0);
    let noise_kind = r.take("model", "noise").unwrap_or(("white".into(), 0));
    let b = r.list("model", "b")?;
    let active = r.int("model", "active")?;
    let noise = match noise_kind.0.as_str() {
        "white" => {
            if b.is_some() || active.is_some() {
                return Err(Error::Config {
                    line: noise_kind.1,
                    message: "b and active only apply to degenerate noise".into(),
                });
            }
            NoiseSpec::WhiteSqrtLaplacian
        }
        "degenerate" => {
            let b = b.unwrap_or_else(|| vec![1.0, 1.0]);
            let active = active.unwrap_or(b.len());
            NoiseSpec::degenerate(b, active)
        }
        other => {
            return Err(Error::Config {
                line: noise_kind.1,
                message: format!("unknown noise {other:?}"),
            })
        }
    };
    let mut model = ModelParams::new(lambda, noise);
    set(&mut model.n_poly, r.int("model", "n_poly")?);
    set(&mut model.modes, r.int("model", "modes")?);
    set(&mut model.dt, r.real("model", "dt")?);
    model.grid = r.int("model", "grid")?;
    set(&mut model.mass_c, r.real("model", "mass")?);
    set(&mut model.taming_threshold, r.real("model", "taming")?);
    set(&mut model.nonlinearity, r.parse("model", "nonlinearity", |v| v.parse::<bool>().ok())?);
    set(&mut model.scheme, r.parse("model", "scheme", Scheme::parse)?);
    set(&mut model.divergence_guard, r.real("model", "guard")?);

    let mut cfg = ExperimentConfig::new(experiment, model);
    cfg.seed = seed;
    cfg.output_dir = output_dir;
    let run = &mut cfg.run;
    set(&mut run.x, r.list("run", "x")?);
    set(&mut run.y, r.list("run", "y")?);
    set(&mut run.t, r.real("run", "t")?);
    set(&mut run.times, r.list("run", "times")?);
    set(&mut run.paths, r.int("run", "paths")?);
    set(&mut run.power, r.real("run", "p")?);
    set(&mut run.q, r.real("run", "q")?);
    set(&mut run.a, r.real("run", "a")?);
    set(&mut run.horizon, r.real("run", "horizon")?);
    set(&mut run.varsigma, r.real("run", "varsigma")?);
    if let Some((v, line)) = r.take("run", "phi") {
        run.phi = parse_functional(&v).map_err(|e| Error::Config {
            line,
            message: e.to_string(),
        })?;
    }
    set(&mut run.kind, r.parse("run", "kind", HarnackKind::parse)?);
    set(&mut run.epsilon, r.real("run", "epsilon")?);
    set(&mut run.direction, r.list("run", "direction")?);
    set(&mut run.tol, r.real("run", "tol")?);
    set(&mut run.coupling_tol, r.real("run", "coupling_tol")?);
    set(&mut run.kappa, r.real("run", "kappa")?);
    run.end_offset = r.real("run", "end_offset")?;
    run.trajectory = r
        .parse("run", "trajectory", |v| match v {
            "none" => Some(None),
            "full" => Some(Some(TrajectoryFormat::Full)),
            "reduced" => Some(Some(TrajectoryFormat::Reduced)),
            _ => None,
        })?
        .flatten();
    set(&mut run.record_every, r.int("run", "record_every")?);

    let gibbs = &mut cfg.gibbs;
    gibbs.variant = GibbsVariant::FiniteN {
        n_poly: cfg.model.n_poly,
    };
    set(
        &mut gibbs.variant,
        r.parse("gibbs", "variant", |v| match v {
            "limit" => Some(GibbsVariant::LimitF),
            "gaussian" => Some(GibbsVariant::Gaussian),
            "finite_n" => Some(GibbsVariant::FiniteN {
                n_poly: cfg.model.n_poly,
            }),
            _ => v
                .strip_prefix("finite_n:")
                .and_then(|n| n.parse().ok())
                .map(|n_poly| GibbsVariant::FiniteN { n_poly }),
        })?,
    );
    let o = &mut gibbs.options;
    set(&mut o.t_long, r.real("gibbs", "t_long")?);
    set(&mut o.burn_in, r.real("gibbs", "burn_in")?);
    set(&mut o.paths, r.int("gibbs", "paths")?);
    set(&mut o.sample_every, r.int("gibbs", "sample_every")?);
    set(&mut o.chains, r.int("gibbs", "chains")?);
    set(&mut o.chain_steps, r.int("gibbs", "chain_steps")?);
    set(&mut o.chain_burn_in, r.int("gibbs", "chain_burn_in")?);
    set(&mut o.beta, r.real("gibbs", "beta")?);
    set(&mut o.max_mode, r.int("gibbs", "max_mode")?);
    set(&mut o.rel_band, r.real("gibbs", "rel_band")?);
    set(&mut o.keep_every, r.int("gibbs", "keep_every")?);

    r.take("manifest", "code_version");
    if let Some(((section, key), (_, line))) = r.entries.into_iter().next() {
        let name = if section.is_empty() {
            key
        } else {
            format!("[{section}] {key}")
        };
        return Err(Error::Config {
            line,
            message: format!("unknown key {name}"),
        });
    }
    Ok(cfg)
}

/// Model-level assumptions each experiment relies on, checked before any
/// simulation starts.
pub fn validate_config(cfg: &ExperimentConfig) -> Result<()> {
    let m = &cfg.model;
    m.validate()?;
    let x = cfg.x_field()?;
    let y = cfg.y_field()?;
    for (name, f) in [("x", &x), ("y", &y)] {
        if (f.mean() - m.mass_c).abs() > 1e-13 {
            return Err(Error::Validation(format!(
                "{name} has mean {} but the mass is {}",
                f.mean(),
                m.mass_c
            )));
        }
    }
    let r = &cfg.run;
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::Validation(format!("{name} must be positive, got {v}")))
        }
    };
    let degenerate = |what: &str| -> Result<()> {
        if m.noise.is_white() {
            return Err(Error::Validation(format!("{what} needs degenerate noise")));
        }
        crate::noise::RateConstants::compute(&m.noise, m.lambda, m.modes).map_err(|_| {
            let active = m.noise.active_modes().unwrap_or(0);
            Error::Validation(format!(
                "condition A2 fails: need b_1..b_N > 0 and (N+1)^2 pi^2 = {} > lambda = {} (N = {active})",
                crate::spectral::eigen_mu(active + 1),
                m.lambda
            ))
        })?;
        Ok(())
    };
    let white = |what: &str| -> Result<()> {
        if !m.noise.is_white() {
            return Err(Error::Validation(format!("{what} needs white noise")));
        }
        crate::harnack::white_rate(m.lambda).map(|_| ())
    };
    if r.paths == 0 {
        return Err(Error::Validation("paths must be positive".into()));
    }
    match cfg.experiment {
        Experiment::Validate => {
            if !m.noise.is_white() {
                degenerate("validation")?;
            }
        }
        Experiment::Simulate => positive("t", r.t)?,
        Experiment::CoupleDegenerate => {
            degenerate("the degenerate coupling")?;
            positive("t", r.t)?;
            positive("tol", r.tol)?;
        }
        Experiment::CoupleWhite => {
            white("the white coupling")?;
            crate::dynamics::GammaSchedule::new(r.horizon, r.a, m.lambda)?;
            positive("kappa", r.kappa)?;
            positive("coupling_tol", r.coupling_tol)?;
            if !(r.q > 1.0) {
                return Err(Error::Validation(format!("q must exceed 1, got {}", r.q)));
            }
        }
        Experiment::Harnack => {
            r.phi.validate()?;
            match r.kind {
                HarnackKind::Asymptotic | HarnackKind::Gradient => {
                    degenerate("this check")?;
                    positive("epsilon", r.epsilon)?;
                }
                HarnackKind::Power | HarnackKind::Log => {
                    white("this check")?;
                    if !(r.power > 1.0) {
                        return Err(Error::Validation("p must exceed 1".into()));
                    }
                }
                HarnackKind::Decay => {
                    crate::harnack::white_rate(m.lambda)?;
                }
            }
            if r.kind != HarnackKind::Decay {
                positive("t", r.t)?;
            }
        }
        Experiment::Gibbs => {
            if !m.noise.is_white() {
                return Err(Error::Validation("the invariant comparison needs white noise".into()));
            }
            let o = &cfg.gibbs.options;
            if o.max_mode == 0 || o.max_mode > m.modes {
                return Err(Error::Validation("max_mode must lie in 1..=modes".into()));
            }
            if !(o.beta > 0.0 && o.beta <= 1.0) {
                return Err(Error::Validation("beta must lie in (0,1]".into()));
            }
            if !(o.t_long > o.burn_in && o.burn_in >= 0.0) {
                return Err(Error::Validation("need 0 <= burn_in < t_long".into()));
            }
            if o.paths == 0 || o.chains == 0 || o.chain_steps == 0 {
                return Err(Error::Validation("paths, chains and chain_steps must be positive".into()));
            }
        }
        Experiment::Moments => {
            positive("horizon", r.horizon)?;
            positive("varsigma", r.varsigma)?;
            let b = crate::noise::bstar_norm(&m.noise, m.modes);
            if !(std::f64::consts::PI.powi(4) > 2.0 * r.varsigma * b * b) {
                return Err(Error::Validation(format!(
                    "varsigma = {} needs pi^4 > 2 varsigma |B*|^2 = {}",
                    r.varsigma,
                    2.0 * r.varsigma * b * b
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "
# white coupling
experiment = couple-white
seed = 17

[model]
lambda = 1
modes = 16
dt = 1e-5   # coupling step
noise = white

[run]
x = 0, 0.05, -0.01
horizon = 0.02
paths = 8
phi = table:2:-1;0;1:0.5;1;2
";

    #[test]
    fn parses_sample() {
        let c = parse_config(SAMPLE).unwrap();
        assert_eq!(c.experiment, Experiment::CoupleWhite);
        assert_eq!(c.seed, 17);
        assert_eq!(c.model.modes, 16);
        assert_eq!(c.model.dt, 1e-5);
        assert_eq!(c.run.x, vec![0.0, 0.05, -0.01]);
        assert_eq!(c.run.paths, 8);
        assert_eq!(c.run.phi.mode(), 2);
        let x = c.x_field().unwrap();
        assert_eq!(x.truncation(), 16);
        assert_eq!(c.y_field().unwrap(), x);
        validate_config(&c).unwrap();
    }

    #[test]
    fn manifest_round_trip() {
        let c = parse_config(SAMPLE).unwrap();
        let back = parse_config(&c.to_manifest()).unwrap();
        assert_eq!(back.model.grid, Some(64));
        let mut c2 = c.clone();
        c2.model.grid = Some(64);
        assert_eq!(back, c2);
        assert_eq!(parse_config(&back.to_manifest()).unwrap(), back);
    }

    #[test]
    fn errors_carry_lines() {
        let e = parse_config("seed = 1\n[model]\nlambda = x\n").unwrap_err();
        assert_eq!(
            e,
            Error::Config {
                line: 3,
                message: "invalid value \"x\" for lambda".into()
            }
        );
        assert!(matches!(parse_config("[nope]\n"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(parse_config("a = 1\n"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(
            parse_config("seed = 1\nseed = 2\n"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(parse_config("junk\n"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(
            parse_config("[model]\nnoise = white\nb = 1\n"),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn validation_cites_condition() {
        let c = parse_config("experiment = validate\n[model]\nlambda = 40\nnoise = degenerate\nb = 1\nactive = 1\ndt = 1e-6\n")
            .unwrap();
        match validate_config(&c) {
            Err(Error::Validation(m)) => assert!(m.contains("A2"), "{m}"),
            other => panic!("{other:?}"),
        }
        let mut ok = c.clone();
        ok.model.noise = NoiseSpec::degenerate(vec![1.0, 1.0], 2);
        validate_config(&ok).unwrap();
    }

    #[test]
    fn wrong_mass_is_rejected() {
        let c = parse_config("[model]\nmass = 0.2\n[run]\nx = 0.1, 0.3\n").unwrap();
        assert!(matches!(validate_config(&c), Err(Error::Validation(_))));
    }

    #[test]
    fn functional_syntax() {
        assert_eq!(parse_functional("exp_sin:3").unwrap(), TestFunctional::ExpSinMode { mode: 3 });
        let a = parse_functional("affine:1:2:0.5:1").unwrap();
        assert_eq!(parse_functional(&functional_text(&a)).unwrap(), a);
        assert!(parse_functional("affine:1:1:2:1").is_err());
        assert!(parse_functional("table:1:0;1:1").is_err());
        assert!(parse_functional("exp_sin").is_err());
        assert!(parse_functional("exp_sin:0").is_err());
    }

    #[test]
    fn coefficient_lists() {
        assert_eq!(parse_coefficients("").unwrap(), Vec::<f64>::new());
        assert_eq!(parse_coefficients(" 1, -2.5e-3 ").unwrap(), vec![1.0, -2.5e-3]);
        assert!(parse_coefficients("1,,2").is_err());
        assert!(parse_coefficients("inf").is_err());
    }

    proptest! {
        #[test]
        fn coefficient_text_round_trips(v in prop::collection::vec(-1e6f64..1e6, 0..20)) {
            prop_assert_eq!(parse_coefficients(&list(&v)).unwrap(), v);
        }

        #[test]
        fn parser_never_panics(s in "\\PC{0,200}") {
            let _ = parse_config(&s);
        }
    }
}

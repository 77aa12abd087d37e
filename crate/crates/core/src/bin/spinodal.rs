use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use spinodal::config::{parse_config, Experiment, HarnackKind};
use spinodal::experiment::{error_exit_code, error_json, run};
use spinodal::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Simulate,
    CoupleDegenerate,
    CoupleWhite,
    Harnack,
    Gibbs,
    Moments,
    Validate,
}

impl Command {
    fn experiment(self) -> Experiment {
        match self {
            Command::Simulate => Experiment::Simulate,
            Command::CoupleDegenerate => Experiment::CoupleDegenerate,
            Command::CoupleWhite => Experiment::CoupleWhite,
            Command::Harnack => Experiment::Harnack,
            Command::Gibbs => Experiment::Gibbs,
            Command::Moments => Experiment::Moments,
            Command::Validate => Experiment::Validate,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Asymptotic,
    Power,
    Log,
    Gradient,
    Decay,
}

/// Stochastic Cahn-Hilliard simulations and Harnack-type diagnostics.
#[derive(Debug, Parser)]
#[command(name = "spinodal", version)]
struct Cli {
    experiment: Command,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`, then `spinodal-out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Inequality checked by `harnack`.
    #[arg(long, value_enum)]
    kind: Option<Kind>,
}

fn execute(cli: &Cli) -> Result<i32, Error> {
    let text = std::fs::read_to_string(&cli.config)?;
    let mut cfg = parse_config(&text)?;
    cfg.experiment = cli.experiment.experiment();
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(kind) = cli.kind {
        cfg.run.kind = match kind {
            Kind::Asymptotic => HarnackKind::Asymptotic,
            Kind::Power => HarnackKind::Power,
            Kind::Log => HarnackKind::Log,
            Kind::Gradient => HarnackKind::Gradient,
            Kind::Decay => HarnackKind::Decay,
        };
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("spinodal-out"));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build().map_err(|e| Error::Io(e.to_string()))?;
    let outcome = pool.install(|| run(&cfg, &out))?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    for r in &outcome.reports {
        let status = if r.pass { "PASS" } else { "FAIL" };
        eprintln!("{status} {} lhs={:.6e} rhs={:.6e} slack={:.3e}", r.name, r.lhs, r.rhs, r.slack);
    }
    if outcome.failures > 0 {
        eprintln!(
            "diverged paths: {}/{} ({:.2}%)",
            outcome.failures,
            outcome.requested,
            100.0 * outcome.failure_rate()
        );
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            error_exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}

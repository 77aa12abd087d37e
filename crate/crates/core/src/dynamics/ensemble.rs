//! Monte-Carlo driver. Every path owns a ChaCha stream keyed by a mixed
//! `(seed, index)` pair, so results never depend on the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Integrator, ModelParams};
use crate::error::{Error, Result};
use crate::spectral::SpectralField;

pub type PathRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `index` under the master `seed`.
pub fn path_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Independent sub-seed for a named stage of an experiment.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    stage
        .bytes()
        .fold(splitmix64(seed ^ 0x5EED), |h, b| splitmix64(h ^ b as u64))
}

pub fn path_rng(seed: u64, index: u64) -> PathRng {
    ChaCha8Rng::seed_from_u64(path_seed(seed, index))
}

/// Evaluates `f(index, rng)` for every path, in parallel, returning results
/// in path order.
pub fn run_paths<T, F>(paths: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut PathRng) -> T + Sync,
{
    (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            f(i, &mut rng)
        })
        .collect()
}

/// Endpoints of an ensemble; failed paths keep their error.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub t_final: f64,
    pub seed: u64,
    pub endpoints: Vec<Result<SpectralField>>,
}

impl EnsembleResult {
    pub fn paths(&self) -> usize {
        self.endpoints.len()
    }

    pub fn successes(&self) -> impl Iterator<Item = &SpectralField> {
        self.endpoints.iter().filter_map(|r| r.as_ref().ok())
    }

    pub fn failures(&self) -> usize {
        self.endpoints.iter().filter(|r| r.is_err()).count()
    }

    pub fn failure_rate(&self) -> f64 {
        if self.endpoints.is_empty() {
            0.0
        } else {
            self.failures() as f64 / self.endpoints.len() as f64
        }
    }
}

/// Runs `paths` independent copies of the base dynamics from `x` to `t_final`.
pub fn simulate_ensemble(
    p: &ModelParams,
    x: &SpectralField,
    t_final: f64,
    paths: usize,
    seed: u64,
) -> Result<EnsembleResult> {
    let integ = Integrator::new(p)?;
    if x.truncation() != p.modes {
        return Err(Error::Shape(format!(
            "initial field has truncation {} but the model uses {}",
            x.truncation(),
            p.modes
        )));
    }
    if (x.mean() - p.mass_c).abs() > 1e-13 {
        return Err(Error::Validation(format!(
            "initial mean {} differs from mass {}",
            x.mean(),
            p.mass_c
        )));
    }
    let steps = integ.steps_for(t_final);
    let endpoints = run_paths(paths, seed, |_, rng| integ.run_path(x, steps, rng, |_, _, _| {}));
    Ok(EnsembleResult {
        t_final,
        seed,
        endpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseSpec;

    #[test]
    fn seeds_are_distinct() {
        let mut seen: Vec<u64> = (0..1000).map(|i| path_seed(7, i)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 1000);
        assert_ne!(path_seed(7, 0), path_seed(8, 0));
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
    }

    #[test]
    fn deterministic_and_mass_preserving() {
        let p = ModelParams::new(1.0, NoiseSpec::WhiteSqrtLaplacian)
            .with_modes(8)
            .with_mass(0.3);
        let x = SpectralField::single_mode(0.3, 2, 0.05, 8);
        let a = simulate_ensemble(&p, &x, 0.01, 1, 42).unwrap();
        let b = simulate_ensemble(&p, &x, 0.01, 1, 42).unwrap();
        assert_eq!(a.endpoints, b.endpoints);
        let many = simulate_ensemble(&p, &x, 0.002, 1000, 3).unwrap();
        assert_eq!(many.failures(), 0);
        let mean: f64 = many.successes().map(|u| u.mean()).sum::<f64>() / 1000.0;
        assert!((mean - 0.3).abs() < 1e-13);
        assert!(many.successes().all(|u| u.mean() == 0.3));
    }

    #[test]
    fn pool_size_does_not_matter() {
        let p = ModelParams::new(1.0, NoiseSpec::WhiteSqrtLaplacian).with_modes(8);
        let x = SpectralField::single_mode(0.0, 1, 0.1, 8);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_ensemble(&p, &x, 0.003, 64, 11).unwrap())
        };
        assert_eq!(run(1).endpoints, run(4).endpoints);
    }

    #[test]
    fn rejects_wrong_mass() {
        let p = ModelParams::new(1.0, NoiseSpec::WhiteSqrtLaplacian).with_modes(4);
        let x = SpectralField::single_mode(0.2, 1, 0.1, 4);
        assert!(matches!(
            simulate_ensemble(&p, &x, 0.01, 2, 1),
            Err(Error::Validation(_))
        ));
    }
}

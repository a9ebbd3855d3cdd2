//! Per-task hyper-parameter search: random search and sequential Bayesian
//! optimization with a Gaussian-process surrogate.

mod gp;
mod space;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub use gp::Gp;
pub use space::{
    apply_hparams, arch_preset, DimKind, Dimension, Hparams, Scale, SearchSpace, Value, ARCH, FLIP, LABEL_SMOOTHING,
    LEARNING_RATE, MAX_BATCH, MT_LAMBDA, RANDOM_CROP, SCHEDULE,
};

/// Default exploration weight of the confidence-bound acquisition.
pub const DEFAULT_BETA: f64 = 2.0;
/// Quasi-random candidates scored per acquisition step.
pub const ACQUISITION_CANDIDATES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub hparams: Hparams,
    pub val_error: f64,
    pub flops: u64,
    /// Set when the objective failed; such trials score error 1.0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// What an objective reports for one configuration.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub val_error: f64,
    pub flops: u64,
    pub artifact: T,
}

#[derive(Debug, Clone)]
pub struct TrialResult<T> {
    pub trial: Trial,
    pub artifact: Option<T>,
}

fn run_one<T>(index: usize, hparams: Hparams, result: Result<Evaluation<T>>) -> TrialResult<T> {
    match result {
        Ok(e) => TrialResult {
            trial: Trial { index, hparams, val_error: e.val_error, flops: e.flops, failure: None },
            artifact: Some(e.artifact),
        },
        Err(err) => {
            log::warn!("trial {index} failed: {err}");
            TrialResult {
                trial: Trial { index, hparams, val_error: 1.0, flops: 0, failure: Some(err.to_string()) },
                artifact: None,
            }
        }
    }
}

/// Search algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum Engine {
    Random,
    Bayesian { beta: f64 },
}

impl Engine {
    pub fn search<T: Send>(
        &self,
        space: &SearchSpace,
        n_trials: usize,
        seed: u64,
        objective: impl Fn(usize, &Hparams) -> Result<Evaluation<T>> + Sync,
    ) -> Result<Vec<TrialResult<T>>> {
        match *self {
            Engine::Random => random_search(space, n_trials, seed, objective),
            Engine::Bayesian { beta } => bhpo(space, n_trials, seed, beta, objective),
        }
    }
}

/// Independent random configurations. The sample sequence depends only on
/// the seed, so trials may be evaluated concurrently.
pub fn random_search<T: Send>(
    space: &SearchSpace,
    n_trials: usize,
    seed: u64,
    objective: impl Fn(usize, &Hparams) -> Result<Evaluation<T>> + Sync,
) -> Result<Vec<TrialResult<T>>> {
    space.validate()?;
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["random_search"]));
    let configs: Vec<Hparams> = (0..n_trials).map(|i| space.sample(i, &mut rng)).collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        Ok(configs.into_par_iter().enumerate().map(|(i, h)| run_one(i, h.clone(), objective(i, &h))).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok(configs.into_iter().enumerate().map(|(i, h)| run_one(i, h.clone(), objective(i, &h))).collect())
    }
}

fn primes(n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    let mut c = 2u64;
    while out.len() < n {
        if out.iter().all(|p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Shifted Halton sequence over `[0, 1)^dim`.
struct Halton {
    bases: Vec<u64>,
    shift: Vec<f64>,
}

impl Halton {
    fn new(dim: usize, rng: &mut impl Rng) -> Self {
        Self { bases: primes(dim), shift: (0..dim).map(|_| rng.random::<f64>()).collect() }
    }

    fn point(&self, i: u64) -> Vec<f64> {
        self.bases.iter().zip(&self.shift).map(|(&b, s)| (radical_inverse(i + 1, b) + s).fract()).collect()
    }
}

/// Number of space-filling trials before the surrogate takes over.
pub fn initial_design_size(space: &SearchSpace) -> usize {
    (space.dimensions.len() + 1).max(2)
}

/// Sequential Bayesian optimization. The first trials follow a shifted
/// Halton design; each later trial minimizes `mean - beta * std` of a GP
/// posterior over [`ACQUISITION_CANDIDATES`] quasi-random candidates. A
/// failed surrogate fit falls back to a random draw for that trial.
pub fn bhpo<T>(
    space: &SearchSpace,
    n_trials: usize,
    seed: u64,
    beta: f64,
    objective: impl Fn(usize, &Hparams) -> Result<Evaluation<T>>,
) -> Result<Vec<TrialResult<T>>> {
    space.validate()?;
    if n_trials < 2 {
        return Err(Error::Config("bayesian search needs at least 2 trials".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["bhpo"]));
    let dim = space.dimensions.len();
    let design = Halton::new(dim, &mut rng);
    let candidates = Halton::new(dim, &mut rng);
    let n_init = initial_design_size(space);
    let mut results: Vec<TrialResult<T>> = Vec::with_capacity(n_trials);
    for i in 0..n_trials {
        let h = if i < n_init {
            space.from_unit(&design.point(i as u64))
        } else {
            let xs: Vec<Vec<f64>> = results.iter().map(|r| space.encode(&r.trial.hparams)).collect();
            let ys: Vec<f64> = results.iter().map(|r| r.trial.val_error).collect();
            match fit_with_jitter(&xs, &ys) {
                Some(gp) => {
                    let offset = (i - n_init) as u64 * ACQUISITION_CANDIDATES as u64;
                    let mut best: Option<(f64, Hparams)> = None;
                    for c in 0..ACQUISITION_CANDIDATES as u64 {
                        let cand = space.from_unit(&candidates.point(offset + c));
                        let (m, s) = gp.predict(&space.encode(&cand));
                        let score = m - beta * s;
                        if best.as_ref().is_none_or(|(b, _)| score < *b) {
                            best = Some((score, cand));
                        }
                    }
                    best.expect("candidates nonempty").1
                }
                None => {
                    log::warn!("surrogate fit failed at trial {i}; sampling at random");
                    space.sample(i, &mut rng)
                }
            }
        };
        let r = objective(i, &h);
        results.push(run_one(i, h, r));
    }
    Ok(results)
}

fn fit_with_jitter(xs: &[Vec<f64>], ys: &[f64]) -> Option<Gp> {
    [1e-8, 1e-6, 1e-4, 1e-2].into_iter().find_map(|noise| Gp::fit(xs, ys, noise).ok())
}

/// Lowest validation error; ties go to fewer FLOPs, then the lower index.
pub fn best_trial(trials: &[Trial]) -> Result<&Trial> {
    trials
        .iter()
        .min_by(|a, b| a.val_error.total_cmp(&b.val_error).then(a.flops.cmp(&b.flops)).then(a.index.cmp(&b.index)))
        .ok_or_else(|| Error::Invalid("best_trial of an empty trial list".into()))
}

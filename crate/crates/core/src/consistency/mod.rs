//! Consistency of relaxed formulas: the integral of a formula's relaxation
//! over independent uniform atom values on `[0, 1]^k`.
//!
//! A tautology whose relaxation integrates to 1 is *consistent* under the
//! relaxation. The *self-consistency* of `P` is the consistency of
//! `P <-> P`.
//!
//! Three integrators are available. All of them split their work into
//! fixed-size chunks whose results are merged in chunk order, so an
//! estimate depends only on `(formula, family, method, samples, seed)` and
//! never on the number of worker threads.

mod closed_form;
mod sobol;
mod suite;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::formula::{Formula, FormulaError};
use crate::semantics::{CompiledFormula, TNorm};

pub use closed_form::{sproduct_monotone_conjunction_selfconsistency, ClosedForm};
pub use sobol::{Sobol, MAX_DIM as SOBOL_MAX_DIM};
pub use suite::{tautology_suite, SuiteRow, SuiteTable, Tautology, TAUTOLOGIES, TABLE_FAMILIES};

const CHUNK: u64 = 1 << 16;
/// Independent random digital shifts used for the low-discrepancy error bar.
pub const SOBOL_SHIFTS: u64 = 16;
/// Grids are limited to this many dimensions.
pub const GRID_MAX_DIM: usize = 4;
const MAX_EVALS: u64 = 1 << 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[serde(alias = "mc")]
    MonteCarlo,
    #[serde(alias = "sobol")]
    LowDiscrepancy,
    Grid,
}

impl Method {
    /// Short name used on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            Method::MonteCarlo => "mc",
            Method::LowDiscrepancy => "sobol",
            Method::Grid => "grid",
        }
    }

    pub fn is_deterministic(self) -> bool {
        self == Method::Grid
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Method {
    type Err = ConsistencyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mc" | "monte-carlo" => Ok(Method::MonteCarlo),
            "sobol" | "low-discrepancy" => Ok(Method::LowDiscrepancy),
            "grid" => Ok(Method::Grid),
            _ => Err(ConsistencyError::Config(format!(
                "unknown integration method `{s}` (expected mc, sobol or grid)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    pub method: Method,
    /// Total sample count for `mc`/`sobol`; points per dimension for `grid`.
    pub samples: u64,
    pub seed: u64,
    /// Threads used; results do not depend on it, so it is not serialized.
    #[serde(skip_serializing, default = "one_worker")]
    pub workers: usize,
}

fn one_worker() -> usize {
    1
}

impl IntegrationConfig {
    pub fn new(method: Method, samples: u64, seed: u64) -> Self {
        IntegrationConfig {
            method,
            samples,
            seed,
            workers: 1,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    fn validate(&self) -> Result<(), ConsistencyError> {
        if self.samples == 0 {
            return Err(ConsistencyError::Config("samples must be positive".into()));
        }
        if self.workers == 0 {
            return Err(ConsistencyError::Config("workers must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyEstimate {
    pub value: f64,
    /// Zero for the grid rule.
    pub std_error: f64,
    pub n_evals: u64,
    pub method: IntegrationConfig,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConsistencyError {
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("grid integration supports at most {GRID_MAX_DIM} atoms, formula has {0}")]
    GridDimension(usize),
    #[error("low-discrepancy integration supports at most {max} atoms, formula has {0}", max = sobol::MAX_DIM)]
    SobolDimension(usize),
    #[error("{0} evaluations requested, limit is {MAX_EVALS}")]
    TooManyEvaluations(u128),
    #[error("invalid integration config: {0}")]
    Config(String),
    #[error("n must be at least 1")]
    ZeroConjuncts,
}

/// κ: the integral of `f`'s relaxation over its atoms.
pub fn consistency(
    f: &Formula,
    family: TNorm,
    cfg: &IntegrationConfig,
) -> Result<ConsistencyEstimate, ConsistencyError> {
    let compiled = CompiledFormula::new(f)?;
    integrate(&compiled, family, cfg)
}

/// κ_S: the consistency of `f <-> f`, both sides sharing the same atoms.
pub fn self_consistency(
    f: &Formula,
    family: TNorm,
    cfg: &IntegrationConfig,
) -> Result<ConsistencyEstimate, ConsistencyError> {
    consistency(&Formula::iff(f.clone(), f.clone()), family, cfg)
}

/// Integrates an already compiled formula.
pub fn integrate(
    f: &CompiledFormula,
    family: TNorm,
    cfg: &IntegrationConfig,
) -> Result<ConsistencyEstimate, ConsistencyError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| ConsistencyError::Config(e.to_string()))?;
    let (value, std_error, n_evals) = pool.install(|| match cfg.method {
        Method::MonteCarlo => Ok(monte_carlo(f, family, cfg.samples, cfg.seed)),
        Method::LowDiscrepancy => low_discrepancy(f, family, cfg.samples, cfg.seed),
        Method::Grid => grid(f, family, cfg.samples),
    })?;
    Ok(ConsistencyEstimate {
        value,
        std_error,
        n_evals,
        method: *cfg,
    })
}

/// Running mean and sum of squared deviations (Welford), mergeable with
/// Chan's update.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        Moments {
            n,
            mean: self.mean + d * w,
            m2: self.m2 + other.m2 + d * d * self.n as f64 * w,
        }
    }

    fn std_error(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

fn chunk_bounds(total: u64) -> Vec<(u64, u64)> {
    (0..total.div_ceil(CHUNK))
        .map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(total)))
        .collect()
}

fn monte_carlo(f: &CompiledFormula, family: TNorm, samples: u64, seed: u64) -> (f64, f64, u64) {
    let k = f.dim();
    let chunks: Vec<Moments> = chunk_bounds(samples)
        .into_par_iter()
        .enumerate()
        .map(|(c, (lo, hi))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut point = vec![0.0; k];
            let mut stack = Vec::new();
            let mut m = Moments::default();
            for _ in lo..hi {
                for x in point.iter_mut() {
                    *x = rng.gen::<f64>();
                }
                m.push(f.eval_with(family, &point, &mut stack));
            }
            m
        })
        .collect();
    let total = chunks.into_iter().fold(Moments::default(), Moments::merge);
    (total.mean, total.std_error(), samples)
}

fn low_discrepancy(
    f: &CompiledFormula,
    family: TNorm,
    samples: u64,
    seed: u64,
) -> Result<(f64, f64, u64), ConsistencyError> {
    let k = f.dim();
    let sobol = Sobol::new(k).ok_or(ConsistencyError::SobolDimension(k))?;
    let per_shift = samples.div_ceil(SOBOL_SHIFTS);

    // One 52-bit digital shift per (replicate, dimension).
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let shifts: Vec<Vec<u64>> = (0..SOBOL_SHIFTS)
        .map(|_| (0..k).map(|_| rng.gen::<u64>() >> 12).collect())
        .collect();

    let bounds = chunk_bounds(per_shift);
    let jobs: Vec<(usize, u64, u64)> = (0..SOBOL_SHIFTS as usize)
        .flat_map(|r| bounds.iter().map(move |&(lo, hi)| (r, lo, hi)))
        .collect();
    let sums: Vec<f64> = jobs
        .into_par_iter()
        .map(|(r, lo, hi)| {
            let shift = &shifts[r];
            let mut ints = vec![0u32; k];
            let mut point = vec![0.0; k];
            let mut stack = Vec::new();
            let mut sum = 0.0;
            sobol.point(lo, &mut ints);
            for i in lo..hi {
                for d in 0..k {
                    let bits = ((ints[d] as u64) << 20) ^ shift[d];
                    point[d] = bits as f64 * (1.0 / (1u64 << 52) as f64);
                }
                sum += f.eval_with(family, &point, &mut stack);
                sobol.advance(i, &mut ints);
            }
            sum
        })
        .collect();

    let n_chunks = bounds.len();
    let means: Vec<f64> = sums
        .chunks(n_chunks)
        .map(|s| s.iter().sum::<f64>() / per_shift as f64)
        .collect();
    let mut m = Moments::default();
    means.iter().for_each(|&x| m.push(x));
    Ok((m.mean, m.std_error(), per_shift * SOBOL_SHIFTS))
}

fn grid(
    f: &CompiledFormula,
    family: TNorm,
    per_dim: u64,
) -> Result<(f64, f64, u64), ConsistencyError> {
    let k = f.dim();
    if k > GRID_MAX_DIM {
        return Err(ConsistencyError::GridDimension(k));
    }
    let total = (per_dim as u128).pow(k as u32);
    if total > MAX_EVALS as u128 {
        return Err(ConsistencyError::TooManyEvaluations(total));
    }
    let total = total as u64;
    let h = 1.0 / per_dim as f64;
    let sums: Vec<f64> = chunk_bounds(total)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut point = vec![0.0; k];
            let mut stack = Vec::new();
            let mut sum = 0.0;
            for flat in lo..hi {
                let mut rest = flat;
                for x in point.iter_mut() {
                    *x = snap(((rest % per_dim) as f64 + 0.5) * h);
                    rest /= per_dim;
                }
                sum += f.eval_with(family, &point, &mut stack);
            }
            sum
        })
        .collect();
    Ok((sums.iter().sum::<f64>() / total as f64, 0.0, total))
}

/// Rounds to a multiple of 2^-52, where `1 - (1 - x) == x` holds exactly.
/// Monte Carlo and shifted Sobol points already live on this lattice.
fn snap(x: f64) -> f64 {
    const SCALE: f64 = (1u64 << 52) as f64;
    (x * SCALE).round() / SCALE
}

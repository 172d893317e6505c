//! Desk-scale learning tasks: digit arithmetic with coherence constraints
//! and BIO tagging with transition constraints.
//!
//! Every experiment is described by an [`ExperimentConfig`] and run once
//! per seed; seeds are independent and may run in parallel, and results
//! are always reported in seed order.

pub mod data;
pub mod digits;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tagging;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;
use crate::loss::{GodelOptions, LossError};
use crate::semantics::TNorm;

pub use data::{
    generate_digit_task, generate_sequence_task, DigitTaskParams, SequenceDataset,
    SequenceTaskParams, SyntheticDigitDataset, Tag,
};
pub use digits::{evaluate_properties, joint_train, pipeline_train, DigitModels, PairClassifier, PropertyScores};
pub use metrics::Stat;
pub use model::Mlp;
pub use optim::{OptimizerConfig, OptimizerKind, Restarts};
pub use tagging::train_tagger;

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(LossError),
    #[error("seed {seed}, epoch {epoch}, step {step}: {source}")]
    Numerical {
        seed: u64,
        epoch: usize,
        step: usize,
        source: AutodiffError,
    },
    #[error("no evaluation examples of digit {0} to resample")]
    NoExamples(usize),
}

impl TaskError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, TaskError::Numerical { .. })
    }

    fn at(seed: u64, epoch: usize, step: usize) -> impl Fn(LossError) -> TaskError {
        move |e| match e {
            LossError::Autodiff(source) => TaskError::Numerical {
                seed,
                epoch,
                step,
                source,
            },
            other => TaskError::Loss(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Digits,
    Tagging,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Joint,
    Pipeline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub digit_hidden: Vec<usize>,
    pub operator_hidden: Vec<usize>,
    pub tagger_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            digit_hidden: vec![32],
            operator_hidden: vec![128],
            tagger_hidden: vec![32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaggingConfig {
    pub n_train: usize,
    pub n_eval: usize,
    /// Share of the training sentences used.
    pub fraction: f64,
    pub use_constraints: bool,
}

impl Default for TaggingConfig {
    fn default() -> Self {
        TaggingConfig {
            n_train: 1000,
            n_eval: 500,
            fraction: 0.1,
            use_constraints: true,
        }
    }
}

/// One experiment: a task, a relaxation and its training setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub regime: Regime,
    pub tnorm: TNorm,
    pub lambda: f64,
    pub n_labeled: usize,
    pub n_pairs: usize,
    pub dim: usize,
    pub sigma: f64,
    /// Seed of the synthetic dataset, shared by all runs.
    pub data_seed: u64,
    /// One training run per seed.
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub warm_start: GodelOptions,
    pub tagging: TaggingConfig,
    pub property_repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskKind::Digits,
            regime: Regime::Joint,
            tnorm: TNorm::RProduct,
            lambda: 1.0,
            n_labeled: 1000,
            n_pairs: 5000,
            dim: 32,
            sigma: 0.5,
            data_seed: 20,
            seeds: vec![0, 20, 50],
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            warm_start: GodelOptions::default(),
            tagging: TaggingConfig::default(),
            property_repeats: 6,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        let bad = |m: &str| Err(TaskError::Config(m.to_string()));
        if !self.tnorm.is_subdifferentiable() {
            return Err(TaskError::Loss(LossError::NotSubdifferentiable(self.tnorm)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a finite non-negative number");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) || o.batch_size == 0 || o.epochs == 0 {
            return bad("learning rate, batch size and epochs must be positive");
        }
        if let Some(r) = o.restarts {
            if !(r.t0 > 0.0 && r.t_mult >= 1.0) {
                return bad("restarts need t0 > 0 and t_mult >= 1");
            }
        }
        let m = &self.model;
        if [&m.digit_hidden, &m.operator_hidden, &m.tagger_hidden]
            .iter()
            .any(|h| h.contains(&0))
        {
            return bad("hidden layer sizes must be positive");
        }
        if self.property_repeats == 0 {
            return bad("property_repeats must be positive");
        }
        let t = &self.tagging;
        if !(t.fraction > 0.0 && t.fraction <= 1.0) {
            return bad("tagging fraction must be in (0, 1]");
        }
        if !self.warm_start.warm_start_family.is_subdifferentiable() {
            return Err(TaskError::Loss(LossError::NotSubdifferentiable(
                self.warm_start.warm_start_family,
            )));
        }
        Ok(())
    }

    pub fn digit_params(&self) -> DigitTaskParams {
        DigitTaskParams {
            seed: self.data_seed,
            n_labeled: self.n_labeled,
            n_pairs: self.n_pairs,
            dim: self.dim,
            sigma: self.sigma,
            scale: 1.0,
        }
    }

    pub fn sequence_params(&self) -> SequenceTaskParams {
        SequenceTaskParams {
            seed: self.data_seed,
            n_train: self.tagging.n_train,
            n_eval: self.tagging.n_eval,
            ..SequenceTaskParams::default()
        }
    }
}

/// Measurements of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digit_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sum_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prod_accuracy: Option<f64>,
    /// Mean of the Sum and Prod accuracies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operator_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sum_coherence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prod_coherence: Option<f64>,
    /// Mean of the Sum and Prod coherence fractions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coherence_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub commutativity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub associativity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distributivity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violation_rate: Option<f64>,
    pub final_loss: f64,
    /// Every parameter adjoint was exactly zero on the first step.
    pub zero_gradient_on_first_step: bool,
}

impl SeedMetrics {
    /// The metrics present in this run, in a fixed order.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        let fields = [
            ("digit_accuracy", self.digit_accuracy),
            ("sum_accuracy", self.sum_accuracy),
            ("prod_accuracy", self.prod_accuracy),
            ("operator_accuracy", self.operator_accuracy),
            ("sum_coherence", self.sum_coherence),
            ("prod_coherence", self.prod_coherence),
            ("coherence_fraction", self.coherence_fraction),
            ("commutativity", self.commutativity),
            ("associativity", self.associativity),
            ("distributivity", self.distributivity),
            ("f1", self.f1),
            ("violation_rate", self.violation_rate),
            ("final_loss", Some(self.final_loss)),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
            .collect()
    }
}

/// Trained models and measurements of one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub metrics: SeedMetrics,
    pub models: Vec<Mlp>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub per_seed: Vec<SeedMetrics>,
    /// Mean and standard deviation over seeds.
    pub summary: IndexMap<String, Stat>,
    pub zero_gradient_on_first_step: bool,
}

impl Metrics {
    pub fn from_runs(runs: &[SeedRun]) -> Metrics {
        let per_seed: Vec<SeedMetrics> = runs.iter().map(|r| r.metrics.clone()).collect();
        let mut columns: IndexMap<String, Vec<f64>> = IndexMap::new();
        for m in &per_seed {
            for (k, v) in m.named() {
                columns.entry(k.to_string()).or_default().push(v);
            }
        }
        let summary = columns.into_iter().map(|(k, v)| (k, Stat::of(&v))).collect();
        Metrics {
            zero_gradient_on_first_step: per_seed.iter().any(|m| m.zero_gradient_on_first_step),
            per_seed,
            summary,
        }
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.summary.get(name).map(|s| s.mean)
    }
}

/// Runs `f` for every seed, in parallel on the current rayon pool, and
/// returns the runs in seed order.
pub fn run_seeds<F>(seeds: &[u64], f: F) -> Result<Vec<SeedRun>, TaskError>
where
    F: Fn(u64) -> Result<SeedRun, TaskError> + Sync,
{
    seeds.par_iter().map(|&s| f(s)).collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
    pub metrics: Metrics,
}

/// Generates the configured dataset and trains every seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, TaskError> {
    cfg.validate()?;
    let runs = match cfg.task {
        TaskKind::Digits => {
            let ds = generate_digit_task(cfg.digit_params())?;
            match cfg.regime {
                Regime::Joint => digits::joint_runs(&ds, cfg, cfg.tnorm)?,
                Regime::Pipeline => digits::pipeline_runs(&ds, cfg, cfg.tnorm)?,
            }
        }
        TaskKind::Tagging => {
            let ds = generate_sequence_task(cfg.sequence_params())?;
            tagging::tagger_runs(&ds, cfg, cfg.tnorm, cfg.tagging.use_constraints)?
        }
    };
    let metrics = Metrics::from_runs(&runs);
    Ok(ExperimentResult {
        config: cfg.clone(),
        runs,
        metrics,
    })
}

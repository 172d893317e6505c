use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use tnlogic::consistency::{ConsistencyError, Method, TABLE_FAMILIES};
use tnlogic::loss::check::random_loss_gradcheck;
use tnlogic::loss::LossError;
use tnlogic::tasks::digits::{evaluate_properties, DigitModels};
use tnlogic::tasks::{generate_digit_task, run_experiment, ExperimentConfig, ExperimentResult, Mlp, TaskError, TaskKind};
use tnlogic::{
    consistency, parse_formula, self_consistency, sproduct_monotone_conjunction_selfconsistency, tautology_suite,
    Formula, IntegrationConfig, TNorm,
};

const DEFAULT_SEED: u64 = 20;

#[derive(Parser)]
#[command(
    name = "tnlogic",
    version,
    about = "Consistency of t-norm relaxations of logic, and training with logical constraints",
    after_help = "Results are printed as JSON on stdout; progress goes to stderr.\n\
                  Exit codes: 0 success, 1 usage error, 2 numerical failure."
)]
struct Cli {
    /// Seed for all randomness [env: TNORM_LOGIC_SEED] [default: 20]
    #[arg(long, global = true, env = "TNORM_LOGIC_SEED", hide_env = true)]
    seed: Option<u64>,
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a formula's relaxation over independent uniform atoms
    Consistency(IntegrateArgs),
    /// Consistency of `F <-> F`, or the exact value for an n-atom conjunction
    Selfconsistency(SelfArgs),
    /// Integrate the 22 built-in tautologies under several families
    Suite(SuiteArgs),
    /// Compare compiled-loss gradients with finite differences
    Gradcheck(GradArgs),
    /// Run an experiment described by a JSON config
    Train(TrainArgs),
    /// Arithmetic properties of trained digit models
    EvalProperties(EvalArgs),
}

#[derive(Args)]
struct Integration {
    /// mc, sobol or grid
    #[arg(long, default_value = "mc", value_parser = parse_method)]
    method: Method,
    /// Sample count, or points per axis for grid [default: 1000000, grid 1001]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    samples: Option<u64>,
}

#[derive(Args)]
struct IntegrateArgs {
    /// Formula text, e.g. "P -> (Q -> P)"
    #[arg(long)]
    formula: String,
    #[arg(long, value_parser = parse_tnorm)]
    tnorm: TNorm,
    #[command(flatten)]
    integration: Integration,
}

#[derive(Args)]
struct SelfArgs {
    #[arg(long, required_unless_present = "conjunction", conflicts_with = "conjunction")]
    formula: Option<String>,
    #[arg(long, value_parser = parse_tnorm, required_unless_present = "conjunction")]
    tnorm: Option<TNorm>,
    /// Exact S-Product self-consistency of a conjunction of N distinct atoms
    #[arg(long, value_name = "N")]
    conjunction: Option<u32>,
    #[command(flatten)]
    integration: Integration,
}

#[derive(Args)]
struct SuiteArgs {
    /// mc, sobol or grid
    #[arg(long, default_value = "sobol", value_parser = parse_method)]
    method: Method,
    #[arg(long, default_value_t = 2_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    /// Comma-separated families [default: s-product,s-godel,lukasiewicz,r-product,r-godel]
    #[arg(long, value_delimiter = ',', value_parser = parse_tnorm)]
    tnorms: Vec<TNorm>,
    /// Write the table as CSV here instead of printing it as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, value_parser = parse_tnorm)]
    tnorm: TNorm,
    /// Random losses to check
    #[arg(long, default_value_t = 50)]
    count: usize,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory for results.json, results.csv and model_seed<S>.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Experiment config the models were trained with
    #[arg(long)]
    config: PathBuf,
    /// A model_seed<S>.json file written by `train`
    #[arg(long)]
    models: PathBuf,
    /// Resampled vectors per intermediate digit
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u64).range(1..))]
    repeats: u64,
}

fn parse_tnorm(s: &str) -> Result<TNorm, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: ConsistencyError| e.to_string())
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }

    fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<ConsistencyError> for CliError {
    fn from(e: ConsistencyError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::Autodiff(_) => CliError::Numerical(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

struct Context {
    seed: Option<u64>,
    workers: usize,
}

impl Context {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    fn integration(&self, i: &Integration) -> IntegrationConfig {
        let samples = i.samples.unwrap_or(match i.method {
            Method::Grid => 1001,
            _ => 1_000_000,
        });
        IntegrationConfig::new(i.method, samples, self.seed()).with_workers(self.workers)
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

fn parse(text: &str) -> Result<Formula, CliError> {
    parse_formula(text).map_err(|e| CliError::Usage(format!("cannot parse formula: {e}")))
}

fn estimate_json(formula: &str, family: TNorm, e: &tnlogic::ConsistencyEstimate) -> Value {
    json!({
        "formula": formula,
        "tnorm": family,
        "value": e.value,
        "std_error": e.std_error,
        "n_evals": e.n_evals,
        "method": e.method,
    })
}

fn cmd_consistency(ctx: &Context, a: &IntegrateArgs) -> Result<Value, CliError> {
    let f = parse(&a.formula)?;
    let e = consistency(&f, a.tnorm, &ctx.integration(&a.integration))?;
    Ok(estimate_json(&a.formula, a.tnorm, &e))
}

fn cmd_selfconsistency(ctx: &Context, a: &SelfArgs) -> Result<Value, CliError> {
    if let Some(n) = a.conjunction {
        let c = sproduct_monotone_conjunction_selfconsistency(n)?;
        return Ok(json!({ "tnorm": TNorm::SProduct, "conjunction": n, "closed_form": c }));
    }
    let (text, family) = (a.formula.as_deref().unwrap_or_default(), a.tnorm.unwrap_or(TNorm::SProduct));
    let e = self_consistency(&parse(text)?, family, &ctx.integration(&a.integration))?;
    Ok(estimate_json(text, family, &e))
}

fn cmd_suite(ctx: &Context, a: &SuiteArgs) -> Result<Value, CliError> {
    let families = if a.tnorms.is_empty() { TABLE_FAMILIES.to_vec() } else { a.tnorms.clone() };
    let cfg = IntegrationConfig::new(a.method, a.samples, ctx.seed()).with_workers(ctx.workers);
    eprintln!("integrating 22 tautologies under {} families ({} samples each)", families.len(), a.samples);
    let table = tautology_suite(&families, &cfg)?;
    match &a.out {
        Some(path) => {
            fs::write(path, table.to_csv_string()).map_err(CliError::io(path))?;
            eprintln!("wrote {}", path.display());
            Ok(json!({ "out": path, "rows": table.rows.len(), "tnorms": families, "method": cfg }))
        }
        None => {
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|r| {
                    let cells: serde_json::Map<String, Value> = r
                        .cells
                        .iter()
                        .map(|(t, e)| (t.name().to_string(), json!({ "value": e.value, "std_error": e.std_error })))
                        .collect();
                    json!({ "group": r.group, "tautology": r.tautology, "cells": cells })
                })
                .collect();
            Ok(json!({ "method": cfg, "tnorms": families, "rows": rows }))
        }
    }
}

fn cmd_gradcheck(ctx: &Context, a: &GradArgs) -> Result<Value, CliError> {
    if !(a.h > 0.0 && a.h.is_finite()) {
        return Err(CliError::Usage("--h must be a positive number".into()));
    }
    let r = random_loss_gradcheck(a.tnorm, ctx.seed(), a.count, a.h)?;
    let passed = r.max_rel_error < a.tolerance;
    let out = json!({ "report": r, "tolerance": a.tolerance, "passed": passed });
    if passed {
        Ok(out)
    } else {
        println!("{}", pretty(&out));
        Err(CliError::Numerical(format!(
            "relative gradient error {:e} exceeds {:e}",
            r.max_rel_error, a.tolerance
        )))
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    seed: u64,
    models: Vec<Mlp>,
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    fs::write(path, pretty(v) + "\n").map_err(CliError::io(path))
}

fn results_csv(result: &ExperimentResult) -> Result<String, CliError> {
    let names: Vec<&String> = result.metrics.summary.keys().collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["seed".to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    header.push("zero_gradient_on_first_step".into());
    let csv_err = |e: csv::Error| CliError::Usage(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for m in &result.metrics.per_seed {
        let named = m.named();
        let mut rec = vec![m.seed.to_string()];
        for n in &names {
            let v = named.iter().find(|(k, _)| k == n).map(|(_, v)| v.to_string());
            rec.push(v.unwrap_or_default());
        }
        rec.push(m.zero_gradient_on_first_step.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    for (label, pick) in [("mean", 0), ("std", 1)] {
        let mut rec = vec![label.to_string()];
        for n in &names {
            let s = result.metrics.summary[n.as_str()];
            rec.push(if pick == 0 { s.mean } else { s.std }.to_string());
        }
        rec.push(if pick == 0 { result.metrics.zero_gradient_on_first_step.to_string() } else { String::new() });
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn cmd_train(ctx: &Context, a: &TrainArgs) -> Result<Value, CliError> {
    let mut cfg = read_config(&a.config)?;
    if let Some(seed) = ctx.seed {
        cfg.data_seed = seed;
    }
    eprintln!(
        "training {:?} with {} on seeds {:?} ({} workers)",
        cfg.task,
        cfg.tnorm,
        cfg.seeds,
        ctx.workers
    );
    let result = ctx.pool()?.install(|| run_experiment(&cfg))?;
    if result.metrics.zero_gradient_on_first_step {
        eprintln!("warning: every parameter gradient was exactly zero on the first step");
    }
    fs::create_dir_all(&a.out).map_err(CliError::io(&a.out))?;
    let mut files = vec!["results.json".to_string(), "results.csv".to_string()];
    write_json(&a.out.join("results.json"), &json!({ "config": cfg, "metrics": result.metrics }))?;
    let csv_path = a.out.join("results.csv");
    fs::write(&csv_path, results_csv(&result)?).map_err(CliError::io(&csv_path))?;
    for run in &result.runs {
        let name = format!("model_seed{}.json", run.metrics.seed);
        let file = ModelFile {
            seed: run.metrics.seed,
            models: run.models.clone(),
        };
        write_json(&a.out.join(&name), &file)?;
        files.push(name);
    }
    eprintln!("wrote {} files to {}", files.len(), a.out.display());
    Ok(json!({
        "out": a.out,
        "files": files,
        "summary": result.metrics.summary,
        "zero_gradient_on_first_step": result.metrics.zero_gradient_on_first_step,
    }))
}

fn cmd_eval_properties(ctx: &Context, a: &EvalArgs) -> Result<Value, CliError> {
    let cfg = read_config(&a.config)?;
    if cfg.task != TaskKind::Digits {
        return Err(CliError::Usage("eval-properties needs a digits experiment config".into()));
    }
    let text = fs::read_to_string(&a.models).map_err(CliError::io(&a.models))?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", a.models.display())))?;
    let find = |name: &str| {
        file.models
            .iter()
            .find(|m| m.name == name)
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("{} has no `{name}` model", a.models.display())))
    };
    let models = DigitModels {
        digit: find("digit")?,
        sum: find("sum")?,
        prod: find("prod")?,
    };
    let mut params = cfg.digit_params();
    if let Some(seed) = ctx.seed {
        params.seed = seed;
    }
    if models.digit.input_dim() != params.dim {
        return Err(CliError::Usage(format!(
            "models expect {}-dimensional inputs, config has dim {}",
            models.digit.input_dim(),
            params.dim
        )));
    }
    let ds = generate_digit_task(params)?;
    let scores = evaluate_properties(&models, &ds.eval_digits, &ds.eval_pairs, file.seed, a.repeats as usize)?;
    Ok(json!({ "seed": file.seed, "repeats": a.repeats, "properties": scores }))
}

fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("values serialize")
}

fn run(cli: Cli) -> Result<Value, CliError> {
    let workers = match cli.workers {
        Some(w) => w as usize,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let ctx = Context { seed: cli.seed, workers };
    match &cli.command {
        Command::Consistency(a) => cmd_consistency(&ctx, a),
        Command::Selfconsistency(a) => cmd_selfconsistency(&ctx, a),
        Command::Suite(a) => cmd_suite(&ctx, a),
        Command::Gradcheck(a) => cmd_gradcheck(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::EvalProperties(a) => cmd_eval_properties(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{}", pretty(&v));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

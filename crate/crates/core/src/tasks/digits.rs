//! Digit arithmetic: a Digit classifier and two pair classifiers, Sum and
//! Prod, tied together by mod-10 coherence constraints.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::data::{DigitExample, PairExample, SyntheticDigitDataset};
use super::model::{argmax, Mlp, Recorded};
use super::optim::Optimizer;
use super::{run_seeds, ExperimentConfig, Metrics, SeedMetrics, SeedRun, TaskError};
use crate::autodiff::{NodeId, Tape, Tensor};
use crate::formula::{Atom, Formula, Term};
use crate::loss::{compile, warmup_schedule, AtomBinding, LossError, LossSpec, ProbSource};
use crate::semantics::TNorm;

/// Decisions of a trained digit model and its two pair classifiers.
pub trait PairClassifier {
    fn digit(&self, x: &[f64]) -> usize;
    fn sum(&self, a: &[f64], b: &[f64]) -> usize;
    fn prod(&self, a: &[f64], b: &[f64]) -> usize;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DigitModels {
    pub digit: Mlp,
    pub sum: Mlp,
    pub prod: Mlp,
}

impl DigitModels {
    pub fn new(dim: usize, cfg: &ExperimentConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = &cfg.model;
        DigitModels {
            digit: Mlp::new("digit", dim, &m.digit_hidden, 10, &mut rng),
            sum: Mlp::new("sum", 2 * dim, &m.operator_hidden, 10, &mut rng),
            prod: Mlp::new("prod", 2 * dim, &m.operator_hidden, 10, &mut rng),
        }
    }

    pub fn into_vec(self) -> Vec<Mlp> {
        vec![self.digit, self.sum, self.prod]
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

impl PairClassifier for DigitModels {
    fn digit(&self, x: &[f64]) -> usize {
        self.digit.predict(x)
    }
    fn sum(&self, a: &[f64], b: &[f64]) -> usize {
        self.sum.predict(&concat(a, b))
    }
    fn prod(&self, a: &[f64], b: &[f64]) -> usize {
        self.prod.predict(&concat(a, b))
    }
}

fn int(v: usize) -> Term {
    Term::Int(v as i64)
}

pub fn digit_atom(id: usize, y: usize) -> Atom {
    Atom {
        predicate: "Digit".to_string(),
        args: vec![int(id), int(y)],
    }
}

fn op_atom(op: &str, i: usize, j: usize, v: usize) -> Atom {
    Atom {
        predicate: op.to_string(),
        args: vec![int(i), int(j), int(v)],
    }
}

/// Grounded coherence constraint for one pair of image ids:
/// `Digit(i,y1) ∧ Digit(j,y2) → Op(i,j,(y1 ∘ y2) mod 10)` for all digits.
pub fn coherence_constraint(op: &str, i: usize, j: usize) -> Vec<Formula> {
    let f = if op == "Sum" { |a: usize, b: usize| (a + b) % 10 } else { |a: usize, b: usize| (a * b) % 10 };
    let mut out = Vec::with_capacity(100);
    for y1 in 0..10 {
        for y2 in 0..10 {
            out.push(Formula::implies(
                Formula::and(vec![Formula::atom(digit_atom(i, y1)), Formula::atom(digit_atom(j, y2))]),
                Formula::atom(op_atom(op, i, j, f(y1, y2))),
            ));
        }
    }
    out
}

fn bind_rows(binding: &mut AtomBinding, head: NodeId, row: usize, atom: impl Fn(usize) -> Atom) {
    for y in 0..10 {
        binding.bind(atom(y), ProbSource { head, row, col: y });
    }
}

fn rows(xs: impl Iterator<Item = Vec<f64>>, cols: usize) -> Tensor {
    let data: Vec<f64> = xs.flatten().collect();
    Tensor::new(data.len() / cols, cols, data)
}

struct StepOutcome {
    loss: f64,
    all_zero: bool,
}

/// One model on the tape together with its optimizer and update rule.
struct Slot<'a> {
    model: &'a mut Mlp,
    opt: &'a mut Optimizer,
    rec: Recorded,
}

/// Differentiates `spec` and updates every recorded model that is not
/// frozen.
fn apply(
    tape: &mut Tape,
    spec: &LossSpec,
    binding: &AtomBinding,
    slots: Vec<Slot<'_>>,
    frozen: &BTreeSet<String>,
    lr: f64,
) -> Result<StepOutcome, LossError> {
    let loss = compile(spec, binding, tape)?;
    let grad = tape.backward(loss.loss)?;
    let mut all_zero = true;
    for slot in slots {
        let grads: Vec<&[f64]> = slot.rec.params.iter().map(|&p| grad.wrt(p)).collect();
        if grads.iter().any(|g| g.iter().any(|&v| !v.is_finite())) {
            return Err(crate::autodiff::AutodiffError::NonFiniteGradient.into());
        }
        all_zero &= grads.iter().all(|g| g.iter().all(|&v| v == 0.0));
        if !frozen.contains(&slot.model.name) {
            slot.opt.step(slot.model.params_mut(), &grads, lr);
        }
    }
    Ok(StepOutcome {
        loss: loss.value,
        all_zero,
    })
}

struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    family: TNorm,
    seed: u64,
    rng: ChaCha8Rng,
    models: DigitModels,
    opts: [Optimizer; 3],
    first_step_zero: Option<bool>,
}

impl<'a> Trainer<'a> {
    fn new(ds: &SyntheticDigitDataset, cfg: &'a ExperimentConfig, family: TNorm, seed: u64) -> Self {
        let kind = cfg.optimizer.kind;
        Trainer {
            cfg,
            family,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed).tap_stream(1),
            models: DigitModels::new(ds.params.dim, cfg, seed),
            opts: [Optimizer::new(kind), Optimizer::new(kind), Optimizer::new(kind)],
            first_step_zero: None,
        }
    }

    fn spec(&self) -> LossSpec {
        let mut s = LossSpec::new(self.family);
        s.godel_options = self.cfg.warm_start.clone();
        s
    }

    fn record_step(&mut self, epoch: usize, step: usize, r: Result<StepOutcome, LossError>) -> Result<f64, TaskError> {
        let out = r.map_err(TaskError::at(self.seed, epoch, step))?;
        if self.first_step_zero.is_none() {
            self.first_step_zero = Some(out.all_zero);
        }
        Ok(out.loss)
    }

    /// Joint regime: labeled digits plus coherence over unlabeled pairs.
    fn joint(&mut self, ds: &SyntheticDigitDataset) -> Result<f64, TaskError> {
        let o = &self.cfg.optimizer;
        let lambda = self.cfg.lambda;
        let n_lab = ds.labeled.len();
        let n_steps = ds.unlabeled_pairs.len().div_ceil(o.batch_size);
        let lab_bs = n_lab.div_ceil(n_steps);
        let mut pair_perm: Vec<usize> = (0..ds.unlabeled_pairs.len()).collect();
        let mut lab_perm: Vec<usize> = (0..n_lab).collect();
        let template = self.spec();
        let mut last = 0.0;
        for epoch in 0..o.epochs {
            let sched = warmup_schedule(&template, epoch);
            pair_perm.shuffle(&mut self.rng);
            lab_perm.shuffle(&mut self.rng);
            let mut total = 0.0;
            for s in 0..n_steps {
                let pairs = &pair_perm[s * o.batch_size..((s + 1) * o.batch_size).min(pair_perm.len())];
                let lab = &lab_perm[(s * lab_bs).min(n_lab)..((s + 1) * lab_bs).min(n_lab)];
                let lr = o.lr_at(epoch as f64 + s as f64 / n_steps as f64);
                let r = self.joint_step(ds, lab, pairs, sched.family, lambda, &sched.frozen, lr);
                if let Some(r) = r.transpose() {
                    total += self.record_step(epoch, s, r)?;
                }
            }
            last = total / n_steps as f64;
        }
        Ok(last)
    }

    #[allow(clippy::too_many_arguments)]
    fn joint_step(
        &mut self,
        ds: &SyntheticDigitDataset,
        lab: &[usize],
        pairs: &[usize],
        family: TNorm,
        lambda: f64,
        frozen: &BTreeSet<String>,
        lr: f64,
    ) -> Result<Option<StepOutcome>, LossError> {
        let use_constraints = lambda > 0.0;
        if lab.is_empty() && !use_constraints {
            return Ok(None);
        }
        let n_lab = ds.labeled.len();
        let dim = ds.params.dim;
        let pair = |k: usize| -> &PairExample { &ds.unlabeled_pairs[k] };
        let mut tape = Tape::new();
        let mut binding = AtomBinding::new();
        let mut spec = LossSpec::new(family);
        let (nl, np) = (lab.len(), pairs.len());

        let digit_rows = lab
            .iter()
            .map(|&i| ds.labeled[i].x.clone())
            .chain(if use_constraints {
                pairs.iter().map(|&k| pair(k).a.clone()).chain(pairs.iter().map(|&k| pair(k).b.clone())).collect()
            } else {
                Vec::new()
            });
        let x = tape.constant(rows(digit_rows, dim))?;
        let rd = self.models.digit.record(&mut tape, x)?;
        for (r, &i) in lab.iter().enumerate() {
            bind_rows(&mut binding, rd.probs, r, |y| digit_atom(i, y));
        }
        if !lab.is_empty() {
            spec = spec.with_data(Formula::and(
                lab.iter().map(|&i| Formula::atom(digit_atom(i, ds.labeled[i].digit))).collect(),
            ));
        }

        let [od, os, op] = &mut self.opts;
        let mut slots = Vec::with_capacity(3);
        if use_constraints {
            let xp = tape.constant(rows(pairs.iter().map(|&k| pair(k).concat()), 2 * dim))?;
            let rs = self.models.sum.record(&mut tape, xp)?;
            let rp = self.models.prod.record(&mut tape, xp)?;
            let mut sum_c = Vec::with_capacity(100 * np);
            let mut prod_c = Vec::with_capacity(100 * np);
            for (m, &k) in pairs.iter().enumerate() {
                let (i, j) = (n_lab + 2 * k, n_lab + 2 * k + 1);
                bind_rows(&mut binding, rd.probs, nl + m, |y| digit_atom(i, y));
                bind_rows(&mut binding, rd.probs, nl + np + m, |y| digit_atom(j, y));
                bind_rows(&mut binding, rs.probs, m, |v| op_atom("Sum", i, j, v));
                bind_rows(&mut binding, rp.probs, m, |v| op_atom("Prod", i, j, v));
                sum_c.extend(coherence_constraint("Sum", i, j));
                prod_c.extend(coherence_constraint("Prod", i, j));
            }
            spec = spec
                .with_constraint(Formula::and(sum_c), lambda)
                .with_constraint(Formula::and(prod_c), lambda);
            slots.push(Slot { model: &mut self.models.digit, opt: od, rec: rd });
            slots.push(Slot { model: &mut self.models.sum, opt: os, rec: rs });
            slots.push(Slot { model: &mut self.models.prod, opt: op, rec: rp });
        } else {
            slots.push(Slot { model: &mut self.models.digit, opt: od, rec: rd });
        }
        apply(&mut tape, &spec, &binding, slots, frozen, lr).map(Some)
    }

    /// Supervised Digit training on the labeled split.
    fn train_digit(&mut self, ds: &SyntheticDigitDataset) -> Result<(), TaskError> {
        let o = self.cfg.optimizer.clone();
        let dim = ds.params.dim;
        let n = ds.labeled.len();
        let n_steps = n.div_ceil(o.batch_size);
        let mut perm: Vec<usize> = (0..n).collect();
        let template = self.spec();
        for epoch in 0..o.epochs {
            let sched = warmup_schedule(&template, epoch);
            perm.shuffle(&mut self.rng);
            for (s, batch) in perm.chunks(o.batch_size).enumerate() {
                let lr = o.lr_at(epoch as f64 + s as f64 / n_steps as f64);
                let r = (|| {
                    let mut tape = Tape::new();
                    let x = tape.constant(rows(batch.iter().map(|&i| ds.labeled[i].x.clone()), dim))?;
                    let rd = self.models.digit.record(&mut tape, x)?;
                    let mut binding = AtomBinding::new();
                    for (r, &i) in batch.iter().enumerate() {
                        bind_rows(&mut binding, rd.probs, r, |y| digit_atom(i, y));
                    }
                    let spec = LossSpec::new(sched.family).with_data(Formula::and(
                        batch.iter().map(|&i| Formula::atom(digit_atom(i, ds.labeled[i].digit))).collect(),
                    ));
                    let slot = Slot { model: &mut self.models.digit, opt: &mut self.opts[0], rec: rd };
                    apply(&mut tape, &spec, &binding, vec![slot], &BTreeSet::new(), lr)
                })();
                self.record_step(epoch, s, r)?;
            }
        }
        Ok(())
    }

    /// Supervised Sum/Prod training on pairs labeled by the Digit model.
    fn train_operators(&mut self, ds: &SyntheticDigitDataset) -> Result<f64, TaskError> {
        let o = self.cfg.optimizer.clone();
        let dim = ds.params.dim;
        let n_lab = ds.labeled.len();
        let labels: Vec<(usize, usize)> = ds
            .unlabeled_pairs
            .iter()
            .map(|p| {
                let (a, b) = (self.models.digit.predict(&p.a), self.models.digit.predict(&p.b));
                ((a + b) % 10, (a * b) % 10)
            })
            .collect();
        let n = labels.len();
        let n_steps = n.div_ceil(o.batch_size);
        let mut perm: Vec<usize> = (0..n).collect();
        let template = self.spec();
        let mut last = 0.0;
        for epoch in 0..o.epochs {
            let sched = warmup_schedule(&template, epoch);
            perm.shuffle(&mut self.rng);
            let mut total = 0.0;
            for (s, batch) in perm.chunks(o.batch_size).enumerate() {
                let lr = o.lr_at(epoch as f64 + s as f64 / n_steps as f64);
                let r = (|| {
                    let mut tape = Tape::new();
                    let x = tape.constant(rows(batch.iter().map(|&k| ds.unlabeled_pairs[k].concat()), 2 * dim))?;
                    let rs = self.models.sum.record(&mut tape, x)?;
                    let rp = self.models.prod.record(&mut tape, x)?;
                    let mut binding = AtomBinding::new();
                    let mut data = Vec::with_capacity(2 * batch.len());
                    for (m, &k) in batch.iter().enumerate() {
                        let (i, j) = (n_lab + 2 * k, n_lab + 2 * k + 1);
                        bind_rows(&mut binding, rs.probs, m, |v| op_atom("Sum", i, j, v));
                        bind_rows(&mut binding, rp.probs, m, |v| op_atom("Prod", i, j, v));
                        data.push(Formula::atom(op_atom("Sum", i, j, labels[k].0)));
                        data.push(Formula::atom(op_atom("Prod", i, j, labels[k].1)));
                    }
                    let spec = LossSpec::new(sched.family).with_data(Formula::and(data));
                    let [_, os, op] = &mut self.opts;
                    let slots = vec![
                        Slot { model: &mut self.models.sum, opt: os, rec: rs },
                        Slot { model: &mut self.models.prod, opt: op, rec: rp },
                    ];
                    apply(&mut tape, &spec, &binding, slots, &BTreeSet::new(), lr)
                })();
                total += self.record_step(epoch, s, r)?;
            }
            last = total / n_steps as f64;
        }
        Ok(last)
    }

    fn finish(self, ds: &SyntheticDigitDataset, final_loss: f64) -> Result<SeedRun, TaskError> {
        let mut metrics = evaluate(&self.models, ds, self.seed, self.cfg.property_repeats)?;
        metrics.final_loss = final_loss;
        metrics.zero_gradient_on_first_step = self.first_step_zero.unwrap_or(false);
        Ok(SeedRun {
            metrics,
            models: self.models.into_vec(),
        })
    }
}

trait TapStream {
    fn tap_stream(self, stream: u64) -> Self;
}

impl TapStream for ChaCha8Rng {
    fn tap_stream(mut self, stream: u64) -> Self {
        self.set_stream(stream);
        self
    }
}

fn check_family(family: TNorm) -> Result<(), TaskError> {
    if family.is_subdifferentiable() {
        Ok(())
    } else {
        Err(TaskError::Loss(LossError::NotSubdifferentiable(family)))
    }
}

/// One joint-regime run per configured seed.
pub fn joint_runs(ds: &SyntheticDigitDataset, cfg: &ExperimentConfig, family: TNorm) -> Result<Vec<SeedRun>, TaskError> {
    check_family(family)?;
    run_seeds(&cfg.seeds, |seed| {
        let mut t = Trainer::new(ds, cfg, family, seed);
        let loss = t.joint(ds)?;
        t.finish(ds, loss)
    })
}

/// One pipeline-regime run per configured seed.
pub fn pipeline_runs(ds: &SyntheticDigitDataset, cfg: &ExperimentConfig, family: TNorm) -> Result<Vec<SeedRun>, TaskError> {
    check_family(family)?;
    run_seeds(&cfg.seeds, |seed| {
        let mut t = Trainer::new(ds, cfg, family, seed);
        t.train_digit(ds)?;
        let loss = t.train_operators(ds)?;
        t.finish(ds, loss)
    })
}

/// Trains Digit, Sum and Prod jointly: supervised Digit atoms on the
/// labeled split and Sum/Prod coherence constraints, weighted by λ, over
/// unlabeled pairs.
pub fn joint_train(ds: &SyntheticDigitDataset, cfg: &ExperimentConfig, family: TNorm) -> Result<Metrics, TaskError> {
    Ok(Metrics::from_runs(&joint_runs(ds, cfg, family)?))
}

/// Trains Digit on the labeled split, labels the pairs with its argmax
/// predictions and trains Sum and Prod on those labels. λ is unused.
pub fn pipeline_train(ds: &SyntheticDigitDataset, cfg: &ExperimentConfig, family: TNorm) -> Result<Metrics, TaskError> {
    Ok(Metrics::from_runs(&pipeline_runs(ds, cfg, family)?))
}

fn fraction(hits: usize, n: usize) -> f64 {
    hits as f64 / n as f64
}

/// Accuracy, coherence and property scores of trained models on the
/// held-out splits.
pub fn evaluate<C: PairClassifier>(
    models: &C,
    ds: &SyntheticDigitDataset,
    seed: u64,
    repeats: usize,
) -> Result<SeedMetrics, TaskError> {
    let digit_hits = ds.eval_digits.iter().filter(|e| models.digit(&e.x) == e.digit).count();
    let (mut sum_acc, mut prod_acc, mut sum_coh, mut prod_coh) = (0, 0, 0, 0);
    for p in &ds.eval_pairs {
        let (da, db) = (models.digit(&p.a), models.digit(&p.b));
        let (s, m) = (models.sum(&p.a, &p.b), models.prod(&p.a, &p.b));
        sum_acc += (s == p.sum()) as usize;
        prod_acc += (m == p.prod()) as usize;
        sum_coh += (s == (da + db) % 10) as usize;
        prod_coh += (m == (da * db) % 10) as usize;
    }
    let n = ds.eval_pairs.len();
    let props = evaluate_properties(models, &ds.eval_digits, &ds.eval_pairs, seed, repeats)?;
    let (sa, pa) = (fraction(sum_acc, n), fraction(prod_acc, n));
    let (sc, pc) = (fraction(sum_coh, n), fraction(prod_coh, n));
    Ok(SeedMetrics {
        seed,
        digit_accuracy: Some(fraction(digit_hits, ds.eval_digits.len())),
        sum_accuracy: Some(sa),
        prod_accuracy: Some(pa),
        operator_accuracy: Some((sa + pa) / 2.0),
        sum_coherence: Some(sc),
        prod_coherence: Some(pc),
        coherence_fraction: Some((sc + pc) / 2.0),
        commutativity: Some(props.commutativity),
        associativity: Some(props.associativity),
        distributivity: Some(props.distributivity),
        ..SeedMetrics::default()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropertyScores {
    pub commutativity: f64,
    pub associativity: f64,
    pub distributivity: f64,
}

#[derive(Clone, Copy)]
enum Op {
    Sum,
    Prod,
}

/// Draws feature vectors of a given digit from the held-out split.
struct Resampler<'a> {
    pools: Vec<Vec<&'a [f64]>>,
    rng: ChaCha8Rng,
}

impl<'a> Resampler<'a> {
    fn new(eval_digits: &'a [DigitExample], seed: u64) -> Self {
        let mut pools = vec![Vec::new(); 10];
        for e in eval_digits {
            pools[e.digit].push(e.x.as_slice());
        }
        Resampler {
            pools,
            rng: ChaCha8Rng::seed_from_u64(seed).tap_stream(2),
        }
    }

    fn draw(&mut self, digit: usize) -> Result<&'a [f64], TaskError> {
        let pool = &self.pools[digit];
        if pool.is_empty() {
            return Err(TaskError::NoExamples(digit));
        }
        Ok(pool[self.rng.gen_range(0..pool.len())])
    }
}

/// Most frequent value; the smallest digit on ties.
fn majority(votes: &[usize]) -> usize {
    let mut counts = [0usize; 10];
    votes.iter().for_each(|&v| counts[v] += 1);
    let mut best = 0;
    for d in 1..10 {
        if counts[d] > counts[best] {
            best = d;
        }
    }
    best
}

struct Props<'a, C> {
    m: &'a C,
    rs: Resampler<'a>,
    repeats: usize,
}

impl<C: PairClassifier> Props<'_, C> {
    fn apply(&self, op: Op, a: &[f64], b: &[f64]) -> usize {
        match op {
            Op::Sum => self.m.sum(a, b),
            Op::Prod => self.m.prod(a, b),
        }
    }

    /// Majority over `repeats` draws of `op(x_u, b)` with `x_u` a fresh
    /// vector of digit `u`.
    fn left(&mut self, op: Op, u: usize, b: &[f64]) -> Result<usize, TaskError> {
        let mut votes = Vec::with_capacity(self.repeats);
        for _ in 0..self.repeats {
            let x = self.rs.draw(u)?;
            votes.push(self.apply(op, x, b));
        }
        Ok(majority(&votes))
    }

    fn right(&mut self, op: Op, a: &[f64], u: usize) -> Result<usize, TaskError> {
        let mut votes = Vec::with_capacity(self.repeats);
        for _ in 0..self.repeats {
            let x = self.rs.draw(u)?;
            votes.push(self.apply(op, a, x));
        }
        Ok(majority(&votes))
    }

    fn both(&mut self, op: Op, u: usize, v: usize) -> Result<usize, TaskError> {
        let mut votes = Vec::with_capacity(self.repeats);
        for _ in 0..self.repeats {
            let (x, y) = (self.rs.draw(u)?, self.rs.draw(v)?);
            votes.push(self.apply(op, x, y));
        }
        Ok(majority(&votes))
    }
}

/// Commutativity, associativity and distributivity of the pair
/// classifiers on held-out pairs.
///
/// Triples are `(a, b, c)` with `c` the first image of the next pair.
/// Whenever a side needs a classifier applied to an intermediate result,
/// the predicted digit is replaced by `repeats` freshly drawn vectors of
/// that digit and the most frequent outcome is kept.
pub fn evaluate_properties<C: PairClassifier>(
    models: &C,
    eval_digits: &[DigitExample],
    eval_pairs: &[PairExample],
    seed: u64,
    repeats: usize,
) -> Result<PropertyScores, TaskError> {
    if repeats == 0 || eval_pairs.is_empty() {
        return Err(TaskError::Config("property evaluation needs pairs and repeats ≥ 1".into()));
    }
    let mut p = Props {
        m: models,
        rs: Resampler::new(eval_digits, seed),
        repeats,
    };
    let n = eval_pairs.len();
    let (mut comm, mut assoc, mut dist) = (0, 0, 0);
    for (k, pair) in eval_pairs.iter().enumerate() {
        let (a, b) = (pair.a.as_slice(), pair.b.as_slice());
        let c = eval_pairs[(k + 1) % n].a.as_slice();
        for op in [Op::Sum, Op::Prod] {
            comm += (p.apply(op, a, b) == p.apply(op, b, a)) as usize;
            let lhs = p.left(op, p.apply(op, a, b), c)?;
            let rhs = p.right(op, a, p.apply(op, b, c))?;
            assoc += (lhs == rhs) as usize;
        }
        // a·(b+c) = a·b + a·c
        let s = p.apply(Op::Sum, b, c);
        let lhs = p.right(Op::Prod, a, s)?;
        let rhs = p.both(Op::Sum, p.apply(Op::Prod, a, b), p.apply(Op::Prod, a, c))?;
        dist += (lhs == rhs) as usize;
        // (b+c)·a = b·a + c·a
        let lhs = p.left(Op::Prod, s, a)?;
        let rhs = p.both(Op::Sum, p.apply(Op::Prod, b, a), p.apply(Op::Prod, c, a))?;
        dist += (lhs == rhs) as usize;
    }
    Ok(PropertyScores {
        commutativity: fraction(comm, 2 * n),
        associativity: fraction(assoc, 2 * n),
        distributivity: fraction(dist, 2 * n),
    })
}

/// Reads the digit off the first ten coordinates; exact on noiseless data.
#[derive(Debug, Clone, Copy, Default)]
pub struct Oracle;

impl PairClassifier for Oracle {
    fn digit(&self, x: &[f64]) -> usize {
        argmax(&x[..10])
    }
    fn sum(&self, a: &[f64], b: &[f64]) -> usize {
        (self.digit(a) + self.digit(b)) % 10
    }
    fn prod(&self, a: &[f64], b: &[f64]) -> usize {
        (self.digit(a) * self.digit(b)) % 10
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::data::{generate_digit_task, DigitTaskParams};

    fn small(sigma: f64) -> SyntheticDigitDataset {
        generate_digit_task(DigitTaskParams {
            n_labeled: 100,
            n_pairs: 64,
            dim: 12,
            sigma,
            ..DigitTaskParams::default()
        })
        .unwrap()
    }

    fn cfg(lambda: f64) -> ExperimentConfig {
        let mut c = ExperimentConfig {
            lambda,
            seeds: vec![3],
            property_repeats: 2,
            ..ExperimentConfig::default()
        };
        c.model.digit_hidden = vec![8];
        c.model.operator_hidden = vec![8];
        c.optimizer.epochs = 2;
        c
    }

    #[test]
    fn coherence_grounding() {
        let c = coherence_constraint("Prod", 4, 5);
        assert_eq!(c.len(), 100);
        assert_eq!(c[37].to_string(), "(Digit(4, 3) & Digit(5, 7)) -> Prod(4, 5, 1)");
    }

    #[test]
    fn majority_vote() {
        assert_eq!(majority(&[3, 3, 1]), 3);
        assert_eq!(majority(&[7, 2]), 2);
    }

    #[test]
    fn oracle_scores_perfectly() {
        let ds = small(0.0);
        let m = evaluate(&Oracle, &ds, 0, 3).unwrap();
        for k in ["digit_accuracy", "operator_accuracy", "coherence_fraction", "commutativity", "associativity", "distributivity"] {
            let v = m.named().into_iter().find(|(n, _)| *n == k).unwrap().1;
            assert_eq!(v, 1.0, "{k}");
        }
    }

    #[test]
    fn missing_class_is_an_error() {
        let ds = small(0.0);
        let only_zeros: Vec<DigitExample> = ds.eval_digits.iter().filter(|e| e.digit == 0).cloned().collect();
        let r = evaluate_properties(&Oracle, &only_zeros, &ds.eval_pairs, 0, 1);
        assert!(matches!(r, Err(TaskError::NoExamples(_))));
    }

    #[test]
    fn lambda_zero_leaves_operator_heads_untouched() {
        let ds = small(0.5);
        let c = cfg(0.0);
        let init = DigitModels::new(12, &c, 3);
        let run = &joint_runs(&ds, &c, TNorm::RProduct).unwrap()[0];
        assert_eq!(run.models[1], init.sum);
        assert_eq!(run.models[2], init.prod);
        assert_ne!(run.models[0], init.digit);
    }

    #[test]
    fn constraints_move_every_head() {
        let ds = small(0.5);
        let c = cfg(1.0);
        let init = DigitModels::new(12, &c, 3);
        let run = &joint_runs(&ds, &c, TNorm::SProduct).unwrap()[0];
        assert_ne!(run.models[1], init.sum);
        assert_ne!(run.models[2], init.prod);
        assert!(!run.metrics.zero_gradient_on_first_step);
    }

    #[test]
    fn pipeline_is_identical_for_both_product_families() {
        let ds = small(0.5);
        let c = cfg(1.0);
        let s = pipeline_runs(&ds, &c, TNorm::SProduct).unwrap();
        let r = pipeline_runs(&ds, &c, TNorm::RProduct).unwrap();
        assert_eq!(s[0].models, r[0].models);
        assert_eq!(s[0].metrics, r[0].metrics);
    }

    #[test]
    fn rgodel_is_rejected() {
        let ds = small(0.5);
        assert!(matches!(joint_train(&ds, &cfg(1.0), TNorm::RGodel), Err(TaskError::Loss(_))));
    }
}

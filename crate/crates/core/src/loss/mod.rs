//! Compiling labeled data and constraints into a loss on a [`Tape`].
//!
//! The data term is the conjunction of the facts in a batch (e.g.
//! `Digit(3, 7) ∧ Digit(4, 1) ∧ …`). Each constraint term is a grounded
//! formula with a weight λ. Atoms are bound to entries of probability
//! matrices already recorded on the tape.
//!
//! The objective to minimize depends on the family:
//!
//! | family | loss |
//! |---|---|
//! | S-/R-Product | `−Σ log c` over data conjuncts, `−λ Σ log c` per constraint term |
//! | Łukasiewicz | `−max(0, Σ c − (n − 1))` over every conjunct of every term |
//! | Łukasiewicz (relaxed) | `−(Σ data c + λ Σ constraint c)` |
//! | S-Gödel | `−log min(data c) − λ log min(constraint c)` per term |
//!
//! Every `log` is applied to `max(c, 1e−12)`. R-Gödel cannot be compiled.
//!
//! Conjuncts with the same connective structure and the same probability
//! sources per leaf are lowered together as one vectorized expression.

pub mod check;

use std::collections::{BTreeSet, HashMap};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, NodeId, Tape};
use crate::formula::{Atom, Formula};
use crate::semantics::TNorm;

/// Floor applied before every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Where an atom's truth value lives: entry `(row, col)` of a probability
/// matrix recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProbSource {
    pub head: NodeId,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Default)]
pub struct AtomBinding {
    sources: HashMap<Atom, ProbSource>,
}

impl AtomBinding {
    pub fn new() -> Self {
        AtomBinding::default()
    }

    pub fn bind(&mut self, atom: Atom, source: ProbSource) {
        self.sources.insert(atom, source);
    }

    pub fn get(&self, atom: &Atom) -> Option<ProbSource> {
        self.sources.get(atom).copied()
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintTerm {
    pub formula: Formula,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GodelOptions {
    pub warm_start_epochs: usize,
    pub warm_start_family: TNorm,
    /// Models whose parameters stop updating once the warm start ends.
    pub freeze_after_warmup: BTreeSet<String>,
}

impl Default for GodelOptions {
    fn default() -> Self {
        GodelOptions {
            warm_start_epochs: 0,
            warm_start_family: TNorm::RProduct,
            freeze_after_warmup: BTreeSet::from(["digit".to_string()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub data_term: Option<Formula>,
    pub constraint_terms: Vec<ConstraintTerm>,
    pub family: TNorm,
    #[serde(default)]
    pub godel_options: GodelOptions,
}

impl LossSpec {
    pub fn new(family: TNorm) -> Self {
        LossSpec {
            data_term: None,
            constraint_terms: Vec::new(),
            family,
            godel_options: GodelOptions::default(),
        }
    }

    pub fn with_data(mut self, f: Formula) -> Self {
        self.data_term = Some(f);
        self
    }

    pub fn with_constraint(mut self, f: Formula, lambda: f64) -> Self {
        self.constraint_terms.push(ConstraintTerm { formula: f, lambda });
        self
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.family == TNorm::RGodel {
            return Err(LossError::NotSubdifferentiable(self.family));
        }
        let warm = self.godel_options.warm_start_family;
        if !warm.is_subdifferentiable() {
            return Err(LossError::NotSubdifferentiable(warm));
        }
        for c in &self.constraint_terms {
            if !(c.lambda >= 0.0 && c.lambda.is_finite()) {
                return Err(LossError::InvalidLambda(c.lambda));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("{0} implications are not sub-differentiable; it cannot be used as a training objective")]
    NotSubdifferentiable(TNorm),
    #[error("atom `{0}` has no probability binding")]
    UnboundAtom(Atom),
    #[error("formula must be grounded before compiling")]
    NotGrounded,
    #[error("lambda must be a finite non-negative number, got {0}")]
    InvalidLambda(f64),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Raw truth values of one term, before any log transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermDiagnostics {
    pub conjuncts: usize,
    /// The term's value under the family's n-ary conjunction.
    pub conjunction: f64,
    pub mean: f64,
    pub min: f64,
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: NodeId,
    pub value: f64,
    pub data: Option<TermDiagnostics>,
    pub constraints: Vec<TermDiagnostics>,
}

/// Values of every top-level conjunct of one term, as tape columns.
struct Lowered {
    groups: Vec<NodeId>,
    values: Vec<f64>,
}

/// Records `spec`'s objective on `tape`.
pub fn compile(
    spec: &LossSpec,
    binding: &AtomBinding,
    tape: &mut Tape,
) -> Result<BatchLoss, LossError> {
    spec.validate()?;
    let family = spec.family;
    let data = spec
        .data_term
        .as_ref()
        .map(|f| lower_term(f, family, binding, tape))
        .transpose()?;
    let constraints = spec
        .constraint_terms
        .iter()
        .map(|c| Ok((lower_term(&c.formula, family, binding, tape)?, c.lambda)))
        .collect::<Result<Vec<_>, LossError>>()?;

    let mut parts: Vec<NodeId> = Vec::new();
    match family {
        TNorm::SProduct | TNorm::RProduct => {
            if let Some(d) = &data {
                let s = sum_log(d, tape)?;
                parts.push(tape.neg(s)?);
            }
            for (c, lambda) in &constraints {
                if *lambda > 0.0 {
                    let s = sum_log(c, tape)?;
                    parts.push(tape.scale(s, -lambda)?);
                }
            }
        }
        TNorm::Lukasiewicz => {
            let mut sums = Vec::new();
            let mut n = 0usize;
            let active = data
                .iter()
                .chain(constraints.iter().filter(|(_, l)| *l > 0.0).map(|(c, _)| c));
            for term in active {
                n += term.values.len();
                for &g in &term.groups {
                    sums.push(tape.sum(g)?);
                }
            }
            if let Some(total) = add_all(&sums, tape)? {
                let shifted = tape.affine(total, 1.0, -(n as f64 - 1.0))?;
                let conj = tape.clamp01(shifted)?;
                parts.push(tape.neg(conj)?);
            }
        }
        TNorm::LukasiewiczRelaxed => {
            if let Some(d) = &data {
                let s = sum_groups(d, tape)?;
                parts.push(tape.neg(s)?);
            }
            for (c, lambda) in &constraints {
                if *lambda > 0.0 {
                    let s = sum_groups(c, tape)?;
                    parts.push(tape.scale(s, -lambda)?);
                }
            }
        }
        TNorm::SGodel => {
            if let Some(d) = &data {
                let m = log_min(d, tape)?;
                parts.push(tape.neg(m)?);
            }
            for (c, lambda) in &constraints {
                if *lambda > 0.0 {
                    let m = log_min(c, tape)?;
                    parts.push(tape.scale(m, -lambda)?);
                }
            }
        }
        TNorm::RGodel => unreachable!("rejected by validate"),
    }
    let loss = match add_all(&parts, tape)? {
        Some(l) => l,
        None => tape.scalar(0.0)?,
    };
    Ok(BatchLoss {
        loss,
        value: tape.scalar_value(loss),
        data: data.as_ref().map(|d| diagnostics(d, family)),
        constraints: constraints.iter().map(|(c, _)| diagnostics(c, family)).collect(),
    })
}

fn diagnostics(term: &Lowered, family: TNorm) -> TermDiagnostics {
    let v = &term.values;
    TermDiagnostics {
        conjuncts: v.len(),
        conjunction: family.conj_n(v),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        min: v.iter().cloned().fold(f64::INFINITY, f64::min),
    }
}

fn add_all(nodes: &[NodeId], tape: &mut Tape) -> Result<Option<NodeId>, AutodiffError> {
    let mut it = nodes.iter();
    let Some(&first) = it.next() else {
        return Ok(None);
    };
    let mut acc = first;
    for &n in it {
        acc = tape.add(acc, n)?;
    }
    Ok(Some(acc))
}

fn sum_groups(term: &Lowered, tape: &mut Tape) -> Result<NodeId, AutodiffError> {
    let sums = term
        .groups
        .iter()
        .map(|&g| tape.sum(g))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(add_all(&sums, tape)?.expect("terms have at least one conjunct"))
}

fn guarded_log(x: NodeId, tape: &mut Tape) -> Result<NodeId, AutodiffError> {
    let (r, c) = tape.shape(x);
    let floor = tape.full(r, c, LOG_FLOOR)?;
    let g = tape.max(x, floor)?;
    tape.log(g)
}

fn sum_log(term: &Lowered, tape: &mut Tape) -> Result<NodeId, AutodiffError> {
    let sums = term
        .groups
        .iter()
        .map(|&g| {
            let l = guarded_log(g, tape)?;
            tape.sum(l)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(add_all(&sums, tape)?.expect("terms have at least one conjunct"))
}

fn log_min(term: &Lowered, tape: &mut Tape) -> Result<NodeId, AutodiffError> {
    let mut acc: Option<NodeId> = None;
    for &g in &term.groups {
        let m = tape.min_all(g)?;
        acc = Some(match acc {
            Some(a) => tape.min(a, m)?,
            None => m,
        });
    }
    guarded_log(acc.expect("terms have at least one conjunct"), tape)
}

/// Lowers the top-level conjuncts of `f`, grouped by structure.
fn lower_term(
    f: &Formula,
    family: TNorm,
    binding: &AtomBinding,
    tape: &mut Tape,
) -> Result<Lowered, LossError> {
    let mut groups: IndexMap<String, (&Formula, Vec<Vec<ProbSource>>)> = IndexMap::new();
    for c in f.conjuncts() {
        let mut key = String::new();
        let mut slots = Vec::new();
        skeleton(c, binding, &mut key, &mut slots)?;
        groups.entry(key).or_insert_with(|| (c, Vec::new())).1.push(slots);
    }
    let mut nodes = Vec::with_capacity(groups.len());
    let mut values = Vec::new();
    for (_, (template, members)) in groups {
        let n_slots = members[0].len();
        let mut columns = Vec::with_capacity(n_slots);
        for s in 0..n_slots {
            let head = members[0][s].head;
            let cells: Vec<(usize, usize)> = members.iter().map(|m| (m[s].row, m[s].col)).collect();
            columns.push(tape.gather_cells(head, &cells)?);
        }
        let mut next = 0;
        let node = lower(template, family, &columns, &mut next, tape)?;
        values.extend_from_slice(tape.value(node));
        nodes.push(node);
    }
    Ok(Lowered {
        groups: nodes,
        values,
    })
}

fn skeleton(
    f: &Formula,
    binding: &AtomBinding,
    key: &mut String,
    slots: &mut Vec<ProbSource>,
) -> Result<(), LossError> {
    use std::fmt::Write;
    match f {
        Formula::Atom(a) => {
            let src = binding
                .get(a)
                .ok_or_else(|| LossError::UnboundAtom(a.clone()))?;
            let _ = write!(key, "@{}", src.head.index());
            slots.push(src);
        }
        Formula::Not { arg } => {
            key.push('~');
            skeleton(arg, binding, key, slots)?;
        }
        Formula::And { args } | Formula::Or { args } => {
            key.push(if matches!(f, Formula::And { .. }) { '&' } else { '|' });
            let _ = write!(key, "{}(", args.len());
            for a in args {
                skeleton(a, binding, key, slots)?;
                key.push(',');
            }
            key.push(')');
        }
        Formula::Implies {
            antecedent: a,
            consequent: b,
        }
        | Formula::Iff { left: a, right: b } => {
            key.push_str(if matches!(f, Formula::Implies { .. }) { ">(" } else { "=(" });
            skeleton(a, binding, key, slots)?;
            key.push(',');
            skeleton(b, binding, key, slots)?;
            key.push(')');
        }
        Formula::ForAll { .. } => return Err(LossError::NotGrounded),
    }
    Ok(())
}

fn lower(
    f: &Formula,
    family: TNorm,
    columns: &[NodeId],
    next: &mut usize,
    tape: &mut Tape,
) -> Result<NodeId, LossError> {
    Ok(match f {
        Formula::Atom(_) => {
            *next += 1;
            columns[*next - 1]
        }
        Formula::Not { arg } => {
            let x = lower(arg, family, columns, next, tape)?;
            tape.one_minus(x)?
        }
        Formula::And { args } => {
            let xs = args
                .iter()
                .map(|a| lower(a, family, columns, next, tape))
                .collect::<Result<Vec<_>, _>>()?;
            conj_n(family, &xs, tape)?
        }
        Formula::Or { args } => {
            let xs = args
                .iter()
                .map(|a| lower(a, family, columns, next, tape))
                .collect::<Result<Vec<_>, _>>()?;
            disj_n(family, &xs, tape)?
        }
        Formula::Implies {
            antecedent,
            consequent,
        } => {
            let x = lower(antecedent, family, columns, next, tape)?;
            let y = lower(consequent, family, columns, next, tape)?;
            implies(family, x, y, tape)?
        }
        Formula::Iff { left, right } => {
            let x = lower(left, family, columns, next, tape)?;
            let y = lower(right, family, columns, next, tape)?;
            let xy = implies(family, x, y, tape)?;
            let yx = implies(family, y, x, tape)?;
            conj_n(family, &[xy, yx], tape)?
        }
        Formula::ForAll { .. } => return Err(LossError::NotGrounded),
    })
}

fn conj_n(family: TNorm, xs: &[NodeId], tape: &mut Tape) -> Result<NodeId, AutodiffError> {
    match family {
        TNorm::SGodel | TNorm::RGodel => fold(xs, tape, Tape::min),
        TNorm::SProduct | TNorm::RProduct => fold(xs, tape, Tape::mul),
        TNorm::Lukasiewicz | TNorm::LukasiewiczRelaxed => {
            let s = fold(xs, tape, Tape::add)?;
            let shifted = tape.affine(s, 1.0, -(xs.len() as f64 - 1.0))?;
            tape.clamp01(shifted)
        }
    }
}

fn disj_n(family: TNorm, xs: &[NodeId], tape: &mut Tape) -> Result<NodeId, AutodiffError> {
    match family {
        TNorm::SGodel | TNorm::RGodel => fold(xs, tape, Tape::max),
        TNorm::SProduct | TNorm::RProduct => fold(xs, tape, |t, a, b| {
            // a + b − ab = 1 − (1 − a)(1 − b)
            let na = t.one_minus(a)?;
            let nb = t.one_minus(b)?;
            let p = t.mul(na, nb)?;
            t.one_minus(p)
        }),
        TNorm::Lukasiewicz | TNorm::LukasiewiczRelaxed => {
            let s = fold(xs, tape, Tape::add)?;
            tape.clamp01(s)
        }
    }
}

fn implies(family: TNorm, x: NodeId, y: NodeId, tape: &mut Tape) -> Result<NodeId, LossError> {
    Ok(match family {
        TNorm::SGodel => {
            let nx = tape.one_minus(x)?;
            tape.max(nx, y)?
        }
        TNorm::SProduct => {
            let nx = tape.one_minus(x)?;
            let xy = tape.mul(x, y)?;
            tape.add(nx, xy)?
        }
        TNorm::RProduct => tape.select_le(x, y)?,
        TNorm::Lukasiewicz | TNorm::LukasiewiczRelaxed => {
            let d = tape.sub(y, x)?;
            let s = tape.affine(d, 1.0, 1.0)?;
            tape.clamp01(s)?
        }
        TNorm::RGodel => return Err(LossError::NotSubdifferentiable(family)),
    })
}

fn fold(
    xs: &[NodeId],
    tape: &mut Tape,
    op: impl Fn(&mut Tape, NodeId, NodeId) -> Result<NodeId, AutodiffError>,
) -> Result<NodeId, AutodiffError> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = op(tape, acc, x)?;
    }
    Ok(acc)
}

/// The family in effect at `epoch` and the models frozen at that point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schedule {
    pub family: TNorm,
    pub frozen: BTreeSet<String>,
}

/// Gödel warm start: the first `warm_start_epochs` epochs train under
/// `warm_start_family`, after which S-Gödel takes over and the models in
/// `freeze_after_warmup` stop updating. Other families are unaffected.
pub fn warmup_schedule(spec: &LossSpec, epoch: usize) -> Schedule {
    let opts = &spec.godel_options;
    if spec.family != TNorm::SGodel {
        return Schedule {
            family: spec.family,
            frozen: BTreeSet::new(),
        };
    }
    if epoch < opts.warm_start_epochs {
        Schedule {
            family: opts.warm_start_family,
            frozen: BTreeSet::new(),
        }
    } else {
        Schedule {
            family: TNorm::SGodel,
            frozen: if opts.warm_start_epochs > 0 {
                opts.freeze_after_warmup.clone()
            } else {
                BTreeSet::new()
            },
        }
    }
}

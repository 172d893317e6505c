//! Real-valued semantics of formulas under the t-norm relaxations.
//!
//! Every family uses the involutive negation `1 - x`. The residuated
//! families (R-Gödel, R-Product, Łukasiewicz) define implication as the
//! residuum of their t-norm; the S-families use `¬x ∨ y` built from the
//! t-conorm.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::formula::{free_atoms, Atom, Formula, FormulaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TNorm {
    SGodel,
    RGodel,
    SProduct,
    RProduct,
    Lukasiewicz,
    /// Pointwise identical to [`TNorm::Lukasiewicz`]; only the compiled
    /// training objective differs (sum of conjuncts instead of the clamped
    /// n-ary conjunction).
    LukasiewiczRelaxed,
}

impl TNorm {
    pub const ALL: [TNorm; 6] = [
        TNorm::SGodel,
        TNorm::RGodel,
        TNorm::SProduct,
        TNorm::RProduct,
        TNorm::Lukasiewicz,
        TNorm::LukasiewiczRelaxed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TNorm::SGodel => "s-godel",
            TNorm::RGodel => "r-godel",
            TNorm::SProduct => "s-product",
            TNorm::RProduct => "r-product",
            TNorm::Lukasiewicz => "lukasiewicz",
            TNorm::LukasiewiczRelaxed => "lukasiewicz-relaxed",
        }
    }

    /// Implication is the residuum of the t-norm.
    pub fn is_residuated(self) -> bool {
        matches!(
            self,
            TNorm::RGodel | TNorm::RProduct | TNorm::Lukasiewicz | TNorm::LukasiewiczRelaxed
        )
    }

    /// R-Gödel implication jumps from `y` to 1 at `x = y`; it cannot be
    /// trained through and is only accepted by the integrator.
    pub fn is_subdifferentiable(self) -> bool {
        self != TNorm::RGodel
    }

    fn base(self) -> Base {
        match self {
            TNorm::SGodel | TNorm::RGodel => Base::Godel,
            TNorm::SProduct | TNorm::RProduct => Base::Product,
            TNorm::Lukasiewicz | TNorm::LukasiewiczRelaxed => Base::Lukasiewicz,
        }
    }

    #[inline]
    pub fn neg(self, x: f64) -> f64 {
        1.0 - x
    }

    #[inline]
    pub fn conj(self, x: f64, y: f64) -> f64 {
        match self.base() {
            Base::Godel => x.min(y),
            Base::Product => x * y,
            Base::Lukasiewicz => (x + y - 1.0).max(0.0),
        }
    }

    #[inline]
    pub fn disj(self, x: f64, y: f64) -> f64 {
        match self.base() {
            Base::Godel => x.max(y),
            Base::Product => (x + y - x * y).min(1.0),
            Base::Lukasiewicz => (x + y).min(1.0),
        }
    }

    /// Implication with antecedent `x` and consequent `y`.
    ///
    /// Branch predicates compare exactly; the R-Product quotient is only
    /// reached when `x > y >= 0`, so it never divides by zero.
    #[inline]
    pub fn implies(self, x: f64, y: f64) -> f64 {
        match self {
            TNorm::SGodel => (1.0 - x).max(y),
            TNorm::RGodel => {
                if x <= y {
                    1.0
                } else {
                    y
                }
            }
            TNorm::SProduct => (1.0 - x + x * y).clamp(0.0, 1.0),
            TNorm::RProduct => {
                if x <= y {
                    1.0
                } else {
                    y / x
                }
            }
            // min(1, 1 - x + y), written so that the value is exactly 1 iff x <= y
            TNorm::Lukasiewicz | TNorm::LukasiewiczRelaxed => {
                if x <= y {
                    1.0
                } else {
                    1.0 - x + y
                }
            }
        }
    }

    pub fn iff(self, x: f64, y: f64) -> f64 {
        self.conj(self.implies(x, y), self.implies(y, x))
    }

    /// n-ary conjunction: a left fold for Gödel and Product, the direct
    /// `max(0, Σx - (n-1))` form for Łukasiewicz.
    pub fn conj_n(self, xs: &[f64]) -> f64 {
        debug_assert!(!xs.is_empty());
        match self.base() {
            Base::Lukasiewicz => lukasiewicz_conj(xs),
            _ => xs[1..].iter().fold(xs[0], |acc, &x| self.conj(acc, x)),
        }
    }

    /// n-ary disjunction: a left fold, or `min(1, Σx)` for Łukasiewicz.
    pub fn disj_n(self, xs: &[f64]) -> f64 {
        debug_assert!(!xs.is_empty());
        match self.base() {
            Base::Lukasiewicz => xs.iter().sum::<f64>().min(1.0),
            _ => xs[1..].iter().fold(xs[0], |acc, &x| self.disj(acc, x)),
        }
    }
}

#[derive(Clone, Copy)]
enum Base {
    Godel,
    Product,
    Lukasiewicz,
}

fn lukasiewicz_conj(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    (xs.iter().sum::<f64>() - (n - 1.0)).max(0.0)
}

impl fmt::Display for TNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TNorm {
    type Err = SemanticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TNorm::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| SemanticsError::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SemanticsError {
    #[error("unknown t-norm family `{0}` (expected one of s-godel, r-godel, s-product, r-product, lukasiewicz, lukasiewicz-relaxed)")]
    UnknownFamily(String),
    #[error("no value assigned to atom `{0}`")]
    MissingAtom(Atom),
    #[error("value {value} for atom `{atom}` is outside [0, 1]")]
    OutOfRange { atom: Atom, value: f64 },
    #[error("empty conjunction")]
    Empty,
    #[error(transparent)]
    Formula(#[from] FormulaError),
}

/// Truth values in [0, 1] for atoms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    values: HashMap<Atom, f64>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, atom: Atom, value: f64) -> Result<(), SemanticsError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(SemanticsError::OutOfRange { atom, value });
        }
        self.values.insert(atom, value);
        Ok(())
    }

    pub fn with(mut self, atom: Atom, value: f64) -> Result<Self, SemanticsError> {
        self.set(atom, value)?;
        Ok(self)
    }

    pub fn get(&self, atom: &Atom) -> Option<f64> {
        self.values.get(atom).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl FromIterator<(Atom, f64)> for Assignment {
    /// Collects without range checks; [`eval`] validates before use.
    fn from_iter<I: IntoIterator<Item = (Atom, f64)>>(iter: I) -> Self {
        Assignment {
            values: iter.into_iter().collect(),
        }
    }
}

/// Evaluates a grounded formula under `family`.
pub fn eval(f: &Formula, family: TNorm, a: &Assignment) -> Result<f64, SemanticsError> {
    let compiled = CompiledFormula::new(f)?;
    let values = compiled
        .atoms()
        .iter()
        .map(|atom| {
            let v = a
                .get(atom)
                .ok_or_else(|| SemanticsError::MissingAtom(atom.clone()))?;
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(SemanticsError::OutOfRange {
                    atom: atom.clone(),
                    value: v,
                })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(compiled.eval(family, &values))
}

/// `max(0, Σv - (n-1))`, the Łukasiewicz conjunction of `values`.
pub fn eval_nary_lukasiewicz_conjunction(values: &[f64]) -> Result<f64, SemanticsError> {
    if values.is_empty() {
        return Err(SemanticsError::Empty);
    }
    if let Some(&v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(SemanticsError::OutOfRange {
            atom: Atom::prop("a"),
            value: v,
        });
    }
    Ok(lukasiewicz_conj(values))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Load(usize),
    Not,
    And(usize),
    Or(usize),
    Implies,
    Iff,
}

/// A grounded formula lowered to a postfix program over atom indices, for
/// evaluating the same formula at many points. Atom `i` is the `i`-th entry
/// of [`free_atoms`].
#[derive(Debug, Clone)]
pub struct CompiledFormula {
    atoms: Vec<Atom>,
    program: Vec<Instr>,
    max_stack: usize,
}

impl CompiledFormula {
    pub fn new(f: &Formula) -> Result<Self, FormulaError> {
        let atoms = free_atoms(f)?;
        let index: HashMap<&Atom, usize> = atoms.iter().enumerate().map(|(i, a)| (a, i)).collect();
        let mut program = Vec::new();
        lower(f, &index, &mut program);
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        for ins in &program {
            match ins {
                Instr::Load(_) => depth += 1,
                Instr::Not => {}
                Instr::And(n) | Instr::Or(n) => depth -= n - 1,
                Instr::Implies | Instr::Iff => depth -= 1,
            }
            max_stack = max_stack.max(depth);
        }
        Ok(CompiledFormula {
            atoms,
            program,
            max_stack,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Number of distinct atoms, i.e. the dimension of the integration domain.
    pub fn dim(&self) -> usize {
        self.atoms.len()
    }

    pub fn eval(&self, family: TNorm, values: &[f64]) -> f64 {
        let mut stack = Vec::with_capacity(self.max_stack);
        self.eval_with(family, values, &mut stack)
    }

    /// Like [`eval`](Self::eval) but reuses `stack` across calls.
    pub fn eval_with(&self, family: TNorm, values: &[f64], stack: &mut Vec<f64>) -> f64 {
        debug_assert_eq!(values.len(), self.atoms.len());
        stack.clear();
        for ins in &self.program {
            match *ins {
                Instr::Load(i) => stack.push(values[i]),
                Instr::Not => {
                    let x = stack.pop().unwrap();
                    stack.push(family.neg(x));
                }
                Instr::And(n) => {
                    let start = stack.len() - n;
                    let v = family.conj_n(&stack[start..]);
                    stack.truncate(start);
                    stack.push(v);
                }
                Instr::Or(n) => {
                    let start = stack.len() - n;
                    let v = family.disj_n(&stack[start..]);
                    stack.truncate(start);
                    stack.push(v);
                }
                Instr::Implies => {
                    let y = stack.pop().unwrap();
                    let x = stack.pop().unwrap();
                    stack.push(family.implies(x, y));
                }
                Instr::Iff => {
                    let y = stack.pop().unwrap();
                    let x = stack.pop().unwrap();
                    stack.push(family.iff(x, y));
                }
            }
        }
        stack[0]
    }
}

fn lower(f: &Formula, index: &HashMap<&Atom, usize>, out: &mut Vec<Instr>) {
    match f {
        Formula::Atom(a) => out.push(Instr::Load(index[a])),
        Formula::Not { arg } => {
            lower(arg, index, out);
            out.push(Instr::Not);
        }
        Formula::And { args } => {
            args.iter().for_each(|a| lower(a, index, out));
            out.push(Instr::And(args.len()));
        }
        Formula::Or { args } => {
            args.iter().for_each(|a| lower(a, index, out));
            out.push(Instr::Or(args.len()));
        }
        Formula::Implies {
            antecedent,
            consequent,
        } => {
            lower(antecedent, index, out);
            lower(consequent, index, out);
            out.push(Instr::Implies);
        }
        Formula::Iff { left, right } => {
            lower(left, index, out);
            lower(right, index, out);
            out.push(Instr::Iff);
        }
        Formula::ForAll { .. } => unreachable!("free_atoms rejects quantifiers"),
    }
}

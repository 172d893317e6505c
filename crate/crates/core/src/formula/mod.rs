//! Quantifier-free propositional formulas over named ground atoms.
//!
//! A [`Formula`] is the one representation shared by the evaluator, the
//! consistency integrator and the loss compiler. Formulas may contain
//! finite `forall` nodes until they are [grounded](ground); everything
//! downstream of grounding only ever sees atoms and connectives.
//!
//! Text syntax (loosest binding last):
//!
//! ```text
//! ~A          negation
//! A & B       conjunction (n-ary, flat)
//! A | B       disjunction (n-ary, flat)
//! A -> B      implication (right associative)
//! A <-> B     equivalence (left associative)
//! forall x in {1, 2}: P(x)
//! ```

mod ground;
mod parser;

use std::fmt;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

pub use ground::{ground, Bindings};
pub use parser::{parse_formula, ParseError};

/// A ground argument of an atom.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Term {
    Int(i64),
    Ident(String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Int(v) => write!(f, "{v}"),
            Term::Ident(s) => f.write_str(s),
        }
    }
}

impl From<i64> for Term {
    fn from(v: i64) -> Self {
        Term::Int(v)
    }
}

impl From<usize> for Term {
    fn from(v: usize) -> Self {
        Term::Int(v as i64)
    }
}

impl From<&str> for Term {
    fn from(s: &str) -> Self {
        Term::Ident(s.to_string())
    }
}

/// A predicate applied to ground terms. Two atoms denote the same variable
/// of integration iff their names and arguments are equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub predicate: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<Term>,
}

impl Atom {
    /// Builds an atom, panicking on a malformed predicate name.
    pub fn new(predicate: impl Into<String>, args: Vec<Term>) -> Self {
        let predicate = predicate.into();
        assert!(
            is_identifier(&predicate),
            "invalid predicate name {predicate:?}"
        );
        Atom { predicate, args }
    }

    /// A zero-arity atom such as `P`.
    pub fn prop(name: &str) -> Self {
        Atom::new(name, Vec::new())
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.predicate)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, t) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{t}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// `[A-Za-z][A-Za-z0-9_]*`, excluding the two keywords of the grammar.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && s != "forall" && s != "in"
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Formula {
    Atom(Atom),
    Not {
        arg: Box<Formula>,
    },
    And {
        args: Vec<Formula>,
    },
    Or {
        args: Vec<Formula>,
    },
    Implies {
        antecedent: Box<Formula>,
        consequent: Box<Formula>,
    },
    Iff {
        left: Box<Formula>,
        right: Box<Formula>,
    },
    /// Finite universal quantifier. A `None` domain is resolved from the
    /// bindings passed to [`ground`].
    ForAll {
        variable: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain: Option<Vec<Term>>,
        body: Box<Formula>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormulaError {
    #[error("quantified variable `{0}` has no domain")]
    MissingDomain(String),
    #[error("quantified variable `{0}` ranges over an empty domain")]
    EmptyDomain(String),
    #[error("formula is not grounded (contains a forall over `{0}`)")]
    NotGrounded(String),
    #[error("{0} node needs at least two arguments, got {1}")]
    Arity(&'static str, usize),
    #[error("invalid predicate name {0:?}")]
    BadPredicate(String),
}

impl Formula {
    pub fn atom(atom: Atom) -> Self {
        Formula::Atom(atom)
    }

    /// Shorthand for a zero-arity atom.
    pub fn prop(name: &str) -> Self {
        Formula::Atom(Atom::prop(name))
    }

    pub fn not(arg: Formula) -> Self {
        Formula::Not { arg: Box::new(arg) }
    }

    /// Conjunction of `args`; a single argument is returned unwrapped.
    ///
    /// Panics on an empty list: there is no neutral element that is
    /// meaningful across every relaxation.
    pub fn and(mut args: Vec<Formula>) -> Self {
        assert!(!args.is_empty(), "empty conjunction");
        if args.len() == 1 {
            args.pop().unwrap()
        } else {
            Formula::And { args }
        }
    }

    /// Disjunction of `args`; a single argument is returned unwrapped.
    pub fn or(mut args: Vec<Formula>) -> Self {
        assert!(!args.is_empty(), "empty disjunction");
        if args.len() == 1 {
            args.pop().unwrap()
        } else {
            Formula::Or { args }
        }
    }

    pub fn implies(antecedent: Formula, consequent: Formula) -> Self {
        Formula::Implies {
            antecedent: Box::new(antecedent),
            consequent: Box::new(consequent),
        }
    }

    pub fn iff(left: Formula, right: Formula) -> Self {
        Formula::Iff {
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn forall(variable: &str, domain: Option<Vec<Term>>, body: Formula) -> Self {
        Formula::ForAll {
            variable: variable.to_string(),
            domain,
            body: Box::new(body),
        }
    }

    /// True when the formula contains no `forall` node.
    pub fn is_grounded(&self) -> bool {
        self.first_quantifier().is_none()
    }

    fn first_quantifier(&self) -> Option<&str> {
        match self {
            Formula::Atom(_) => None,
            Formula::Not { arg } => arg.first_quantifier(),
            Formula::And { args } | Formula::Or { args } => {
                args.iter().find_map(|a| a.first_quantifier())
            }
            Formula::Implies {
                antecedent,
                consequent,
            } => antecedent
                .first_quantifier()
                .or_else(|| consequent.first_quantifier()),
            Formula::Iff { left, right } => {
                left.first_quantifier().or_else(|| right.first_quantifier())
            }
            Formula::ForAll { variable, .. } => Some(variable),
        }
    }

    /// Checks the structural invariants (n-ary nodes have at least two
    /// arguments, predicate names are identifiers). Deserialized formulas
    /// should pass through this before use.
    pub fn validate(&self) -> Result<(), FormulaError> {
        match self {
            Formula::Atom(a) => {
                if is_identifier(&a.predicate) {
                    Ok(())
                } else {
                    Err(FormulaError::BadPredicate(a.predicate.clone()))
                }
            }
            Formula::Not { arg } => arg.validate(),
            Formula::And { args } | Formula::Or { args } => {
                if args.len() < 2 {
                    let name = if matches!(self, Formula::And { .. }) {
                        "and"
                    } else {
                        "or"
                    };
                    return Err(FormulaError::Arity(name, args.len()));
                }
                args.iter().try_for_each(Formula::validate)
            }
            Formula::Implies {
                antecedent,
                consequent,
            } => {
                antecedent.validate()?;
                consequent.validate()
            }
            Formula::Iff { left, right } => {
                left.validate()?;
                right.validate()
            }
            Formula::ForAll { body, .. } => body.validate(),
        }
    }

    /// Top-level conjuncts: nested `And` nodes at the root are flattened,
    /// anything else is a single conjunct.
    pub fn conjuncts(&self) -> Vec<&Formula> {
        let mut out = Vec::new();
        fn walk<'a>(f: &'a Formula, out: &mut Vec<&'a Formula>) {
            match f {
                Formula::And { args } => args.iter().for_each(|a| walk(a, out)),
                other => out.push(other),
            }
        }
        walk(self, &mut out);
        out
    }

    /// Depth of the syntax tree; an atom has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Formula::Atom(_) => 0,
            Formula::Not { arg } => 1 + arg.depth(),
            Formula::And { args } | Formula::Or { args } => {
                1 + args.iter().map(Formula::depth).max().unwrap_or(0)
            }
            Formula::Implies {
                antecedent,
                consequent,
            } => 1 + antecedent.depth().max(consequent.depth()),
            Formula::Iff { left, right } => 1 + left.depth().max(right.depth()),
            Formula::ForAll { body, .. } => 1 + body.depth(),
        }
    }
}

/// Distinct atoms of a grounded formula in first-occurrence order
/// (depth-first, left to right). This order is the integration-variable
/// order used everywhere downstream.
pub fn free_atoms(f: &Formula) -> Result<Vec<Atom>, FormulaError> {
    fn walk(f: &Formula, seen: &mut IndexSet<Atom>) -> Result<(), FormulaError> {
        match f {
            Formula::Atom(a) => {
                if !seen.contains(a) {
                    seen.insert(a.clone());
                }
                Ok(())
            }
            Formula::Not { arg } => walk(arg, seen),
            Formula::And { args } | Formula::Or { args } => {
                args.iter().try_for_each(|a| walk(a, seen))
            }
            Formula::Implies {
                antecedent,
                consequent,
            } => {
                walk(antecedent, seen)?;
                walk(consequent, seen)
            }
            Formula::Iff { left, right } => {
                walk(left, seen)?;
                walk(right, seen)
            }
            Formula::ForAll { variable, .. } => Err(FormulaError::NotGrounded(variable.clone())),
        }
    }
    let mut seen = IndexSet::new();
    walk(f, &mut seen)?;
    Ok(seen.into_iter().collect())
}

// Printing wraps every compound operand in parentheses, so the output
// re-parses to the same tree regardless of associativity or nesting.
impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Atom(a) => write!(f, "{a}"),
            Formula::Not { arg } => {
                f.write_str("~")?;
                write_operand(f, arg, true)
            }
            Formula::And { args } | Formula::Or { args } => {
                let op = if matches!(self, Formula::And { .. }) {
                    " & "
                } else {
                    " | "
                };
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(op)?;
                    }
                    write_operand(f, a, false)?;
                }
                Ok(())
            }
            Formula::Implies {
                antecedent,
                consequent,
            } => {
                write_operand(f, antecedent, false)?;
                f.write_str(" -> ")?;
                write_operand(f, consequent, false)
            }
            Formula::Iff { left, right } => {
                write_operand(f, left, false)?;
                f.write_str(" <-> ")?;
                write_operand(f, right, false)
            }
            Formula::ForAll {
                variable,
                domain,
                body,
            } => {
                write!(f, "forall {variable}")?;
                if let Some(domain) = domain {
                    f.write_str(" in {")?;
                    for (i, t) in domain.iter().enumerate() {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        write!(f, "{t}")?;
                    }
                    f.write_str("}")?;
                }
                write!(f, ": {body}")
            }
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, op: &Formula, under_not: bool) -> fmt::Result {
    let bare = match op {
        Formula::Atom(_) => true,
        Formula::Not { .. } => under_not,
        _ => false,
    };
    if bare {
        write!(f, "{op}")
    } else {
        write!(f, "({op})")
    }
}

//! Relaxing propositional logic into sub-differentiable real-valued
//! functions under t-norm semantics.
//!
//! - [`formula`]: the formula AST, its text syntax and finite grounding.
//! - [`semantics`]: evaluation under the S-/R-Gödel, S-/R-Product and
//!   Łukasiewicz relaxations.
//! - [`consistency`]: how much of a tautology survives a relaxation,
//!   measured by integrating it over the unit hypercube.
//! - [`autodiff`]: a small reverse-mode tape.
//! - [`loss`]: compiling labeled data and constraints into a training
//!   objective.
//! - [`tasks`]: synthetic digit-arithmetic and BIO-tagging experiments.

pub mod autodiff;
pub mod consistency;
pub mod formula;
pub mod loss;
pub mod semantics;
pub mod tasks;

pub use consistency::{
    consistency, self_consistency, sproduct_monotone_conjunction_selfconsistency,
    tautology_suite, ConsistencyEstimate, IntegrationConfig, Method,
};
pub use formula::{free_atoms, ground, parse_formula, Atom, Formula, ParseError, Term};
pub use semantics::{eval, Assignment, CompiledFormula, TNorm};

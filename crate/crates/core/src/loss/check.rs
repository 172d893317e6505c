//! Finite-difference checks of compiled losses on random formulas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{compile, AtomBinding, LossError, LossSpec, ProbSource};
use crate::autodiff::{grad_check, AutodiffError, NodeId, Tape, Tensor};
use crate::formula::{Atom, Formula, Term};
use crate::semantics::TNorm;

/// Shapes of the two softmax heads the random atoms are bound to.
pub const HEADS: [(usize, usize); 2] = [(3, 4), (2, 3)];

fn atom(head: usize, row: usize, col: usize) -> Atom {
    Atom::new(format!("H{head}"), vec![Term::from(row), Term::from(col)])
}

fn atoms() -> Vec<Atom> {
    let mut out = Vec::new();
    for (h, &(r, c)) in HEADS.iter().enumerate() {
        for i in 0..r {
            for j in 0..c {
                out.push(atom(h, i, j));
            }
        }
    }
    out
}

fn bind_heads(tape: &mut Tape, logits: &[NodeId]) -> Result<AtomBinding, AutodiffError> {
    let mut b = AtomBinding::new();
    for (h, &(r, c)) in HEADS.iter().enumerate() {
        let p = tape.softmax_rows(logits[h])?;
        for i in 0..r {
            for j in 0..c {
                b.bind(atom(h, i, j), ProbSource { head: p, row: i, col: j });
            }
        }
    }
    Ok(b)
}

/// A random formula over `atoms` of at most `depth` connectives.
pub fn random_formula<R: Rng>(rng: &mut R, atoms: &[Atom], depth: u32) -> Formula {
    if depth == 0 || rng.gen_bool(0.3) {
        return Formula::atom(atoms[rng.gen_range(0..atoms.len())].clone());
    }
    let kind = rng.gen_range(0..5);
    let a = random_formula(rng, atoms, depth - 1);
    if kind == 0 {
        return Formula::not(a);
    }
    let b = random_formula(rng, atoms, depth - 1);
    match kind {
        1 => Formula::and(vec![a, b]),
        2 => Formula::or(vec![a, b]),
        3 => Formula::implies(a, b),
        _ => Formula::iff(a, b),
    }
}

/// A data term of 1 to 4 atoms and 1 or 2 weighted constraint terms.
pub fn random_spec<R: Rng>(rng: &mut R, atoms: &[Atom], family: TNorm) -> LossSpec {
    let data = (0..rng.gen_range(1..5))
        .map(|_| Formula::atom(atoms[rng.gen_range(0..atoms.len())].clone()))
        .collect();
    let mut spec = LossSpec::new(family).with_data(Formula::and(data));
    for _ in 0..rng.gen_range(1..3) {
        let conj = (0..rng.gen_range(1..6)).map(|_| random_formula(rng, atoms, 3)).collect();
        spec = spec.with_constraint(Formula::and(conj), rng.gen_range(0.1..2.0));
    }
    spec
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub tnorm: TNorm,
    pub seed: u64,
    /// Losses compared against finite differences.
    pub checked: usize,
    /// Draws rejected for lying too close to a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub h: f64,
}

/// Draws random losses until `count` of them sit at kink-safe points and
/// reports the largest relative gradient error among those.
pub fn random_loss_gradcheck(family: TNorm, seed: u64, count: usize, h: f64) -> Result<CheckReport, LossError> {
    if !family.is_subdifferentiable() {
        return Err(LossError::NotSubdifferentiable(family));
    }
    let atoms = atoms();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport {
        tnorm: family,
        seed,
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        h,
    };
    while report.checked < count {
        let spec = random_spec(&mut rng, &atoms, family);
        let point: Vec<Tensor> = HEADS
            .iter()
            .map(|&(r, c)| Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect()))
            .collect();
        let build = |t: &mut Tape, l: &[NodeId]| -> Result<NodeId, AutodiffError> {
            let b = bind_heads(t, l)?;
            match compile(&spec, &b, t) {
                Ok(bl) => Ok(bl.loss),
                Err(LossError::Autodiff(a)) => Err(a),
                Err(other) => unreachable!("random specs are well formed: {other}"),
            }
        };
        match grad_check(build, &point, h) {
            Ok(r) => {
                report.checked += 1;
                report.max_rel_error = report.max_rel_error.max(r.max_rel_error);
            }
            Err(AutodiffError::KinkMargin { .. }) => {
                report.skipped += 1;
                if report.skipped > 100 * count.max(1) {
                    return Err(LossError::Autodiff(AutodiffError::KinkMargin {
                        margin: 0.0,
                        required: 10.0 * h,
                    }));
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(report)
}

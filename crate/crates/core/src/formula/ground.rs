use std::collections::BTreeMap;

use super::{Atom, Formula, FormulaError, Term};

/// Finite domains for quantified variables whose `forall` node carries no
/// domain of its own.
pub type Bindings = BTreeMap<String, Vec<Term>>;

/// Expands every `forall` into the conjunction of its instantiated bodies.
///
/// A domain of size one yields the single body. A domain given on the node
/// takes precedence over `bindings`. Inner quantifiers over the same
/// variable shadow outer ones.
pub fn ground(f: &Formula, bindings: &Bindings) -> Result<Formula, FormulaError> {
    let mut env = BTreeMap::new();
    expand(f, bindings, &mut env)
}

fn substitute(t: &Term, env: &BTreeMap<String, Term>) -> Term {
    match t {
        Term::Ident(name) => env.get(name).cloned().unwrap_or_else(|| t.clone()),
        Term::Int(_) => t.clone(),
    }
}

fn expand(
    f: &Formula,
    bindings: &Bindings,
    env: &mut BTreeMap<String, Term>,
) -> Result<Formula, FormulaError> {
    Ok(match f {
        Formula::Atom(a) => Formula::Atom(Atom {
            predicate: a.predicate.clone(),
            args: a.args.iter().map(|t| substitute(t, env)).collect(),
        }),
        Formula::Not { arg } => Formula::not(expand(arg, bindings, env)?),
        Formula::And { args } => Formula::And {
            args: args
                .iter()
                .map(|a| expand(a, bindings, env))
                .collect::<Result<_, _>>()?,
        },
        Formula::Or { args } => Formula::Or {
            args: args
                .iter()
                .map(|a| expand(a, bindings, env))
                .collect::<Result<_, _>>()?,
        },
        Formula::Implies {
            antecedent,
            consequent,
        } => Formula::implies(
            expand(antecedent, bindings, env)?,
            expand(consequent, bindings, env)?,
        ),
        Formula::Iff { left, right } => {
            Formula::iff(expand(left, bindings, env)?, expand(right, bindings, env)?)
        }
        Formula::ForAll {
            variable,
            domain,
            body,
        } => {
            let domain = domain
                .as_ref()
                .or_else(|| bindings.get(variable))
                .ok_or_else(|| FormulaError::MissingDomain(variable.clone()))?;
            if domain.is_empty() {
                return Err(FormulaError::EmptyDomain(variable.clone()));
            }
            let domain: Vec<Term> = domain.iter().map(|t| substitute(t, env)).collect();
            let saved = env.get(variable).cloned();
            let mut instances = Vec::with_capacity(domain.len());
            for value in domain {
                env.insert(variable.clone(), value);
                let inst = expand(body, bindings, env);
                if inst.is_err() {
                    restore(env, variable, saved);
                    return inst;
                }
                instances.push(inst?);
            }
            restore(env, variable, saved);
            Formula::and(instances)
        }
    })
}

fn restore(env: &mut BTreeMap<String, Term>, variable: &str, saved: Option<Term>) {
    match saved {
        Some(t) => env.insert(variable.to_string(), t),
        None => env.remove(variable),
    };
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{free_atoms, parse_formula, testgen};
    use proptest::prelude::*;

    fn p(s: &str) -> Formula {
        parse_formula(s).unwrap()
    }

    #[test]
    fn two_element_domain() {
        let g = ground(&p("forall x in {1, 2}: P(x)"), &Bindings::new()).unwrap();
        assert_eq!(g, p("P(1) & P(2)"));
    }

    #[test]
    fn singleton_domain_unwraps() {
        let g = ground(&p("forall x in {a}: P(x) -> Q(x)"), &Bindings::new()).unwrap();
        assert_eq!(g, p("P(a) -> Q(a)"));
    }

    #[test]
    fn empty_domain_is_an_error() {
        let f = Formula::forall("x", Some(vec![]), p("P(x)"));
        assert_eq!(
            ground(&f, &Bindings::new()),
            Err(FormulaError::EmptyDomain("x".into()))
        );
    }

    #[test]
    fn missing_domain_is_an_error() {
        assert_eq!(
            ground(&p("forall x: P(x)"), &Bindings::new()),
            Err(FormulaError::MissingDomain("x".into()))
        );
    }

    #[test]
    fn domain_from_bindings() {
        let mut b = Bindings::new();
        b.insert("x".into(), vec![Term::Int(3), Term::Int(4), Term::Int(5)]);
        let g = ground(&p("forall x: P(x)"), &b).unwrap();
        assert_eq!(g, p("P(3) & P(4) & P(5)"));
        // The node's own domain wins over the bindings.
        let g = ground(&p("forall x in {9}: P(x)"), &b).unwrap();
        assert_eq!(g, p("P(9)"));
    }

    #[test]
    fn nested_quantifiers_and_shadowing() {
        let g = ground(
            &p("forall x in {1, 2}: forall y in {a, b}: R(x, y)"),
            &Bindings::new(),
        )
        .unwrap();
        assert_eq!(g, p("(R(1, a) & R(1, b)) & (R(2, a) & R(2, b))"));

        let g = ground(
            &p("forall x in {1}: (P(x) & (forall x in {2}: Q(x)))"),
            &Bindings::new(),
        )
        .unwrap();
        assert_eq!(g, p("P(1) & Q(2)"));
    }

    #[test]
    fn unbound_identifiers_are_constants() {
        let g = ground(&p("forall x in {1}: Sum(x, y)"), &Bindings::new()).unwrap();
        assert_eq!(g, p("Sum(1, y)"));
    }

    #[test]
    fn atom_count_matches_domain_size() {
        for n in 1..20i64 {
            let f = Formula::forall(
                "x",
                Some((0..n).map(Term::Int).collect()),
                p("P(x)"),
            );
            let g = ground(&f, &Bindings::new()).unwrap();
            assert_eq!(free_atoms(&g).unwrap().len(), n as usize);
        }
    }

    proptest! {
        #[test]
        fn ground_is_idempotent_on_grounded(f in testgen::formula_strategy(6)) {
            let g = ground(&f, &Bindings::new()).unwrap();
            prop_assert_eq!(&g, &f);
            prop_assert_eq!(ground(&g, &Bindings::new()).unwrap(), g);
        }
    }
}

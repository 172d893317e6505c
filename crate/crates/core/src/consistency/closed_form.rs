use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use serde::{Serialize, Serializer};

use super::ConsistencyError;

/// An exact rational value together with its nearest double.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosedForm {
    pub exact: BigRational,
}

impl ClosedForm {
    pub fn value(&self) -> f64 {
        self.exact.to_f64().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for ClosedForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ≈ {}", self.exact, self.value())
    }
}

impl Serialize for ClosedForm {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("ClosedForm", 2)?;
        st.serialize_field("exact", &self.exact.to_string())?;
        st.serialize_field("value", &self.value())?;
        st.end()
    }
}

/// Self-consistency of `A_1 ∧ … ∧ A_n` under S-Product:
/// `1 − 2/2ⁿ + 3/3ⁿ − 2/4ⁿ + 1/5ⁿ`.
pub fn sproduct_monotone_conjunction_selfconsistency(
    n: u32,
) -> Result<ClosedForm, ConsistencyError> {
    if n == 0 {
        return Err(ConsistencyError::ZeroConjuncts);
    }
    let term = |c: i64, base: u32| {
        BigRational::new(BigInt::from(c), BigInt::from(base).pow(n))
    };
    let exact = BigRational::one() - term(2, 2) + term(3, 3) - term(2, 4) + term(1, 5);
    Ok(ClosedForm { exact })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rational(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn small_cases() {
        let one = sproduct_monotone_conjunction_selfconsistency(1).unwrap();
        assert_eq!(one.exact, rational(7, 10));
        let two = sproduct_monotone_conjunction_selfconsistency(2).unwrap();
        assert_eq!(two.exact, rational(449, 600));
        assert!((two.value() - 0.748333).abs() < 1e-6);
    }

    #[test]
    fn matches_simpson_integral_for_one_atom() {
        // (1 − a + a²)² integrated with composite Simpson.
        let n = 2000;
        let h = 1.0 / n as f64;
        let g = |a: f64| (1.0 - a + a * a).powi(2);
        let mut s = g(0.0) + g(1.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
        }
        let simpson = s * h / 3.0;
        let c = sproduct_monotone_conjunction_selfconsistency(1).unwrap();
        assert!((simpson - c.value()).abs() < 1e-12);
    }

    #[test]
    fn approaches_one() {
        let c = sproduct_monotone_conjunction_selfconsistency(60).unwrap();
        assert!(c.exact < BigRational::one());
        assert!((1.0 - c.value()).abs() < 1e-15);
        let mut prev = rational(0, 1);
        for n in 1..40 {
            let c = sproduct_monotone_conjunction_selfconsistency(n).unwrap().exact;
            if n >= 2 {
                assert!(c > prev, "n={n}");
            }
            prev = c;
        }
    }

    #[test]
    fn zero_is_rejected() {
        assert_eq!(
            sproduct_monotone_conjunction_selfconsistency(0),
            Err(ConsistencyError::ZeroConjuncts)
        );
    }

    #[test]
    fn serializes_exact_and_float() {
        let c = sproduct_monotone_conjunction_selfconsistency(2).unwrap();
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["exact"], "449/600");
        assert!((v["value"].as_f64().unwrap() - 449.0 / 600.0).abs() < 1e-15);
    }
}

use serde::{Deserialize, Serialize};

use super::data::{violates, Tag};

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }
}

/// Phrase spans `(type, start, end_exclusive)` in conlleval style: an `I`
/// tag that does not continue a phrase of its type opens a new one.
pub fn spans(tags: &[Tag]) -> Vec<(char, usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<(char, usize)> = None;
    for (i, &t) in tags.iter().enumerate() {
        let continues = matches!((open, t.phrase()), (Some((a, _)), Some(b)) if a == b)
            && !t.is_begin();
        if continues {
            continue;
        }
        if let Some((ty, start)) = open.take() {
            out.push((ty, start, i));
        }
        if let Some(ty) = t.phrase() {
            open = Some((ty, i));
        }
    }
    if let Some((ty, start)) = open {
        out.push((ty, start, tags.len()));
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SpanCounts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl SpanCounts {
    pub fn add(&mut self, gold: &[Tag], predicted: &[Tag]) {
        let g = spans(gold);
        let p = spans(predicted);
        self.gold += g.len();
        self.predicted += p.len();
        self.correct += p.iter().filter(|s| g.contains(s)).count();
    }

    /// Span-level F1; 1 when there are no spans at all.
    pub fn f1(&self) -> f64 {
        if self.gold == 0 && self.predicted == 0 {
            return 1.0;
        }
        if self.correct == 0 {
            return 0.0;
        }
        let p = self.correct as f64 / self.predicted as f64;
        let r = self.correct as f64 / self.gold as f64;
        2.0 * p * r / (p + r)
    }
}

/// Violations of the transition constraints and the number of adjacent
/// positions checked.
pub fn violations(tags: &[Tag]) -> (usize, usize) {
    let bad = tags.windows(2).filter(|w| violates(w[0], w[1])).count();
    (bad, tags.len().saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Tag::*;

    #[test]
    fn stat() {
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(Stat::of(&[0.4]).std, 0.0);
    }

    #[test]
    fn span_extraction() {
        assert_eq!(
            spans(&[BX, IX, O, BY, BY, IY, O]),
            vec![('X', 0, 2), ('Y', 3, 4), ('Y', 4, 6)]
        );
        // Dangling I opens a span; a type switch closes the previous one.
        assert_eq!(spans(&[O, IX, IY]), vec![('X', 1, 2), ('Y', 2, 3)]);
        assert_eq!(spans(&[O, O]), vec![]);
    }

    #[test]
    fn f1_scores() {
        let gold = [BX, IX, O, BY, IY];
        let mut c = SpanCounts::default();
        c.add(&gold, &gold);
        assert_eq!(c.f1(), 1.0);
        let mut c = SpanCounts::default();
        c.add(&gold, &[BX, O, O, BY, IY]);
        // 2 gold, 2 predicted, 1 correct.
        assert_eq!(c.f1(), 0.5);
    }

    #[test]
    fn violation_count() {
        assert_eq!(violations(&[BX, IY, O, BY, IX, IX]), (2, 5));
        assert_eq!(violations(&[O]), (0, 0));
    }
}

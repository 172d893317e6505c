//! Synthetic datasets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TaskError;

/// Size of each held-out split.
pub const EVAL_DIGITS: usize = 1000;
pub const EVAL_PAIRS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitExample {
    pub x: Vec<f64>,
    pub digit: usize,
}

/// Two digit images. The digits are hidden from training and only used
/// for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairExample {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub digit_a: usize,
    pub digit_b: usize,
}

impl PairExample {
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.a.clone();
        v.extend_from_slice(&self.b);
        v
    }

    pub fn sum(&self) -> usize {
        (self.digit_a + self.digit_b) % 10
    }

    pub fn prod(&self) -> usize {
        (self.digit_a * self.digit_b) % 10
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DigitTaskParams {
    pub seed: u64,
    pub n_labeled: usize,
    pub n_pairs: usize,
    pub dim: usize,
    pub sigma: f64,
    /// Magnitude of the class signal in the first ten coordinates.
    pub scale: f64,
}

impl Default for DigitTaskParams {
    fn default() -> Self {
        DigitTaskParams {
            seed: 20,
            n_labeled: 1000,
            n_pairs: 5000,
            dim: 32,
            sigma: 0.5,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDigitDataset {
    pub params: DigitTaskParams,
    pub labeled: Vec<DigitExample>,
    pub unlabeled_pairs: Vec<PairExample>,
    pub eval_digits: Vec<DigitExample>,
    pub eval_pairs: Vec<PairExample>,
}

struct FeatureSampler {
    noise: Normal<f64>,
    dim: usize,
    scale: f64,
}

impl FeatureSampler {
    fn sample(&self, digit: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.dim).map(|_| self.noise.sample(rng)).collect();
        x[digit] += self.scale;
        x
    }
}

fn balanced_labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    labels.shuffle(rng);
    labels
}

/// Features are `scale · onehot(digit)` (padded to `dim`) plus
/// `N(0, sigma²)` noise in every coordinate. Labeled and held-out digits
/// are class-balanced; pair digits are uniform.
pub fn generate_digit_task(p: DigitTaskParams) -> Result<SyntheticDigitDataset, TaskError> {
    if p.n_labeled == 0 || p.n_pairs == 0 {
        return Err(TaskError::Config("n_labeled and n_pairs must be positive".into()));
    }
    if p.dim < 10 {
        return Err(TaskError::Config(format!("dim must be at least 10, got {}", p.dim)));
    }
    let noise = Normal::new(0.0, p.sigma)
        .map_err(|e| TaskError::Config(format!("invalid sigma {}: {e}", p.sigma)))?;
    let f = FeatureSampler {
        noise,
        dim: p.dim,
        scale: p.scale,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let digits = |n: usize, rng: &mut ChaCha8Rng| -> Vec<DigitExample> {
        balanced_labels(n, rng)
            .into_iter()
            .map(|d| DigitExample {
                x: f.sample(d, rng),
                digit: d,
            })
            .collect()
    };
    let pairs = |n: usize, rng: &mut ChaCha8Rng| -> Vec<PairExample> {
        (0..n)
            .map(|_| {
                let (da, db) = (rng.gen_range(0..10), rng.gen_range(0..10));
                PairExample {
                    a: f.sample(da, rng),
                    b: f.sample(db, rng),
                    digit_a: da,
                    digit_b: db,
                }
            })
            .collect()
    };
    let labeled = digits(p.n_labeled, &mut rng);
    let unlabeled_pairs = pairs(p.n_pairs, &mut rng);
    let eval_digits = digits(EVAL_DIGITS, &mut rng);
    let eval_pairs = pairs(EVAL_PAIRS, &mut rng);
    Ok(SyntheticDigitDataset {
        params: p,
        labeled,
        unlabeled_pairs,
        eval_digits,
        eval_pairs,
    })
}

/// BIO tags over two phrase types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    O,
    BX,
    IX,
    BY,
    IY,
}

impl Tag {
    pub const ALL: [Tag; 5] = [Tag::O, Tag::BX, Tag::IX, Tag::BY, Tag::IY];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Tag {
        Tag::ALL[i]
    }

    /// Identifier used in atoms, e.g. `Tag(3, B_X)`.
    pub fn name(self) -> &'static str {
        match self {
            Tag::O => "O",
            Tag::BX => "B_X",
            Tag::IX => "I_X",
            Tag::BY => "B_Y",
            Tag::IY => "I_Y",
        }
    }

    /// Phrase type, if inside a phrase.
    pub fn phrase(self) -> Option<char> {
        match self {
            Tag::O => None,
            Tag::BX | Tag::IX => Some('X'),
            Tag::BY | Tag::IY => Some('Y'),
        }
    }

    pub fn is_begin(self) -> bool {
        matches!(self, Tag::BX | Tag::BY)
    }
}

/// Adjacent tags forbidden by the transition constraints: a tag of one
/// phrase type cannot be followed by `I` of the other type.
pub fn violates(prev: Tag, next: Tag) -> bool {
    matches!(
        (prev, next),
        (Tag::BX | Tag::IX, Tag::IY) | (Tag::BY | Tag::IY, Tag::IX)
    )
}

/// Token vocabulary: `O` words, `B` words per type and a shared pool of
/// `I` words, each type preferring its own half.
pub const VOCAB: usize = 36;
/// Padding id for positions outside the sentence.
pub const PAD: usize = VOCAB;
const O_WORDS: std::ops::Range<usize> = 0..8;
const BX_WORDS: std::ops::Range<usize> = 8..12;
const BY_WORDS: std::ops::Range<usize> = 12..16;
const I_X_WORDS: std::ops::Range<usize> = 16..26;
const I_Y_WORDS: std::ops::Range<usize> = 26..36;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<usize>,
    pub tags: Vec<Tag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceTaskParams {
    pub seed: u64,
    pub n_train: usize,
    pub n_eval: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token is replaced by a uniformly random word.
    pub token_noise: f64,
    /// Probability that an `I` word comes from its own type's half of the
    /// shared pool.
    pub inside_bias: f64,
}

impl Default for SequenceTaskParams {
    fn default() -> Self {
        SequenceTaskParams {
            seed: 20,
            n_train: 1000,
            n_eval: 500,
            min_len: 10,
            max_len: 25,
            token_noise: 0.1,
            inside_bias: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDataset {
    pub params: SequenceTaskParams,
    pub train: Vec<Sentence>,
    pub eval: Vec<Sentence>,
}

fn next_tag(prev: Option<Tag>, rng: &mut ChaCha8Rng) -> Tag {
    let u: f64 = rng.gen();
    match prev.and_then(Tag::phrase) {
        None => {
            if u < 0.5 {
                Tag::O
            } else if u < 0.75 {
                Tag::BX
            } else {
                Tag::BY
            }
        }
        Some(t) => {
            if u < 0.6 {
                if t == 'X' {
                    Tag::IX
                } else {
                    Tag::IY
                }
            } else if u < 0.85 {
                Tag::O
            } else if u < 0.925 {
                Tag::BX
            } else {
                Tag::BY
            }
        }
    }
}

fn word(tag: Tag, p: &SequenceTaskParams, rng: &mut ChaCha8Rng) -> usize {
    if rng.gen::<f64>() < p.token_noise {
        return rng.gen_range(0..VOCAB);
    }
    let own = rng.gen::<f64>() < p.inside_bias;
    let range = match tag {
        Tag::O => O_WORDS,
        Tag::BX => BX_WORDS,
        Tag::BY => BY_WORDS,
        Tag::IX if own => I_X_WORDS,
        Tag::IX => I_Y_WORDS,
        Tag::IY if own => I_Y_WORDS,
        Tag::IY => I_X_WORDS,
    };
    rng.gen_range(range)
}

/// Sentences from a BIO Markov chain; gold sequences never contain a
/// forbidden transition or an `I` outside a phrase of its type.
pub fn generate_sequence_task(p: SequenceTaskParams) -> Result<SequenceDataset, TaskError> {
    if p.n_train == 0 || p.n_eval == 0 || p.min_len < 2 || p.min_len > p.max_len {
        return Err(TaskError::Config("invalid sequence task sizes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let sentence = |rng: &mut ChaCha8Rng| {
        let len = rng.gen_range(p.min_len..=p.max_len);
        let mut tags = Vec::with_capacity(len);
        for _ in 0..len {
            tags.push(next_tag(tags.last().copied(), rng));
        }
        let tokens = tags.iter().map(|&t| word(t, &p, rng)).collect();
        Sentence { tokens, tags }
    };
    let train = (0..p.n_train).map(|_| sentence(&mut rng)).collect();
    let eval = (0..p.n_eval).map(|_| sentence(&mut rng)).collect();
    Ok(SequenceDataset {
        params: p,
        train,
        eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, sigma: f64) -> SyntheticDigitDataset {
        generate_digit_task(DigitTaskParams {
            seed,
            n_labeled: 100,
            n_pairs: 50,
            dim: 16,
            sigma,
            scale: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn shapes_and_balance() {
        let ds = generate_digit_task(DigitTaskParams::default()).unwrap();
        assert_eq!(ds.labeled.len(), 1000);
        assert_eq!(ds.unlabeled_pairs.len(), 5000);
        assert_eq!(ds.eval_digits.len(), EVAL_DIGITS);
        assert_eq!(ds.eval_pairs.len(), EVAL_PAIRS);
        let mut counts = [0; 10];
        ds.labeled.iter().for_each(|e| counts[e.digit] += 1);
        assert_eq!(counts, [100; 10]);
        assert!(ds.labeled.iter().all(|e| e.x.len() == 32));
    }

    #[test]
    fn deterministic() {
        let a = serde_json::to_vec(&small(3, 0.5)).unwrap();
        let b = serde_json::to_vec(&small(3, 0.5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, serde_json::to_vec(&small(4, 0.5)).unwrap());
    }

    #[test]
    fn noiseless_features_are_one_hot() {
        let ds = small(1, 0.0);
        for e in &ds.labeled {
            for (i, &v) in e.x.iter().enumerate() {
                assert_eq!(v, if i == e.digit { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        let mut p = DigitTaskParams::default();
        p.n_pairs = 0;
        assert!(generate_digit_task(p).is_err());
        let mut p = DigitTaskParams::default();
        p.dim = 5;
        assert!(generate_digit_task(p).is_err());
    }

    #[test]
    fn gold_tags_are_well_formed() {
        let ds = generate_sequence_task(SequenceTaskParams::default()).unwrap();
        for s in ds.train.iter().chain(&ds.eval) {
            assert_eq!(s.tokens.len(), s.tags.len());
            assert!(s.tokens.iter().all(|&t| t < VOCAB));
            for w in s.tags.windows(2) {
                assert!(!violates(w[0], w[1]));
                if !w[1].is_begin() && w[1] != Tag::O {
                    assert_eq!(w[0].phrase(), w[1].phrase());
                }
            }
            assert!(matches!(s.tags[0], Tag::O | Tag::BX | Tag::BY));
        }
        let again = generate_sequence_task(SequenceTaskParams::default()).unwrap();
        assert_eq!(again, ds);
    }
}

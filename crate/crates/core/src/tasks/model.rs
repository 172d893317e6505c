//! Feed-forward classifiers with ReLU hidden layers and a softmax output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, NodeId, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out × in`.
    pub w: Tensor,
    /// `1 × out`.
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub name: String,
    pub layers: Vec<Dense>,
}

/// Node ids of one model's parameters on a tape, in [`Mlp::params_mut`]
/// order.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub probs: NodeId,
    pub params: Vec<NodeId>,
}

impl Mlp {
    /// He-uniform weights for hidden layers, Glorot-uniform for the output
    /// layer, zero biases.
    pub fn new<R: Rng>(name: &str, input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
                let bound = if l + 1 < n {
                    (6.0 / fan_in as f64).sqrt()
                } else {
                    (6.0 / (fan_in + fan_out) as f64).sqrt()
                };
                let w = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                Dense {
                    w: Tensor::new(fan_out, fan_in, w),
                    b: Tensor::zeros(1, fan_out),
                }
            })
            .collect();
        Mlp {
            name: name.to_string(),
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.rows
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b])
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Records the forward pass for a batch `x` (rows are examples) and
    /// returns the row-softmax output.
    pub fn record(&self, tape: &mut Tape, x: NodeId) -> Result<Recorded, AutodiffError> {
        let mut params = Vec::with_capacity(2 * self.layers.len());
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            let w = tape.param(l.w.clone())?;
            let b = tape.param(l.b.clone())?;
            params.extend([w, b]);
            h = tape.matvec(h, w, b)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(Recorded {
            probs: tape.softmax_rows(h)?,
            params,
        })
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut out = l.b.data.clone();
            for (k, o) in out.iter_mut().enumerate() {
                *o += l.w.row(k).iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            }
            if i + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        h
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_and_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::new("digit", 32, &[16, 8], 10, &mut rng);
        assert_eq!((m.input_dim(), m.output_dim()), (32, 10));
        assert_eq!(m.param_count(), 32 * 16 + 16 + 16 * 8 + 8 + 8 * 10 + 10);
        let bound = (6.0f64 / 32.0).sqrt();
        assert!(m.layers[0].w.data.iter().all(|w| w.abs() < bound));
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::new("m", 4, &[5], 3, &mut rng);
        let x = vec![0.5, -1.0, 0.25, 2.0, 1.0, 0.0, -0.5, 0.3];
        let mut t = Tape::new();
        let xn = t.constant(Tensor::new(2, 4, x.clone())).unwrap();
        let r = m.record(&mut t, xn).unwrap();
        for row in 0..2 {
            let logits = m.logits(&x[row * 4..row * 4 + 4]);
            let z: f64 = logits.iter().map(|v| v.exp()).sum();
            for k in 0..3 {
                let p = t.value(r.probs)[row * 3 + k];
                assert!((p - logits[k].exp() / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_through_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Mlp::new("m", 3, &[4], 3, &mut rng);
        // Shift hidden pre-activations away from the ReLU kink.
        m.layers[0].b.data = vec![0.5, 0.6, 0.7, 0.8];
        let point: Vec<Tensor> = m.params_mut().map(|t| t.clone()).collect();
        let r = grad_check(
            |t, p| {
                let x = t.constant(Tensor::new(2, 3, vec![0.1, 0.2, 0.3, -0.2, 0.1, 0.05]))?;
                let mut h = t.matvec(x, p[0], p[1])?;
                h = t.relu(h)?;
                h = t.matvec(h, p[2], p[3])?;
                let s = t.softmax_rows(h)?;
                let g = t.gather(s, vec![0, 4])?;
                let l = t.log(g)?;
                t.sum(l)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6);
    }

    #[test]
    fn argmax_ties_first() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }
}

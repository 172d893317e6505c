//! First-order optimizers and the warm-restart learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Cosine annealing with warm restarts: the rate decays from `lr` to 0
/// over `t0` epochs, then restarts; each cycle is `t_mult` times longer
/// than the last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Restarts {
    pub t0: f64,
    #[serde(default = "one")]
    pub t_mult: f64,
}

fn one() -> f64 {
    1.0
}

impl Restarts {
    /// Learning-rate factor at fractional epoch `t`.
    pub fn factor(&self, t: f64) -> f64 {
        let mut len = self.t0;
        let mut pos = t;
        if self.t_mult == 1.0 {
            pos = t % len;
        } else {
            while pos >= len {
                pos -= len;
                len *= self.t_mult;
            }
        }
        0.5 * (1.0 + (std::f64::consts::PI * pos / len).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub restarts: Option<Restarts>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            batch_size: 32,
            epochs: 30,
            restarts: None,
        }
    }
}

impl OptimizerConfig {
    pub fn lr_at(&self, epoch: f64) -> f64 {
        match self.restarts {
            Some(r) => self.lr * r.factor(epoch),
            None => self.lr,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Per-model optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// One update of `params` along `grads` (same order and sizes).
    pub fn step<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut Tensor>,
        grads: &[&[f64]],
        lr: f64,
    ) {
        self.t += 1;
        for (i, p) in params.enumerate() {
            let g = grads[i];
            debug_assert_eq!(g.len(), p.data.len());
            match self.kind {
                OptimizerKind::Sgd => {
                    p.data.iter_mut().zip(g).for_each(|(w, d)| *w -= lr * d);
                }
                OptimizerKind::Adam => {
                    if self.m.len() <= i {
                        self.m.push(vec![0.0; g.len()]);
                        self.v.push(vec![0.0; g.len()]);
                    }
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    let c1 = 1.0 - BETA1.powi(self.t);
                    let c2 = 1.0 - BETA2.powi(self.t);
                    for k in 0..g.len() {
                        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                        p.data[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimize(kind: OptimizerKind, lr: f64, steps: usize) -> f64 {
        // f(w) = Σ (w_i − 3)²
        let mut w = Tensor::new(1, 2, vec![0.0, 10.0]);
        let mut opt = Optimizer::new(kind);
        for _ in 0..steps {
            let g: Vec<f64> = w.data.iter().map(|x| 2.0 * (x - 3.0)).collect();
            opt.step(std::iter::once(&mut w), &[&g], lr);
        }
        w.data.iter().map(|x| (x - 3.0).powi(2)).sum()
    }

    #[test]
    fn both_optimizers_converge() {
        assert!(minimize(OptimizerKind::Sgd, 0.1, 200) < 1e-12);
        assert!(minimize(OptimizerKind::Adam, 0.1, 2000) < 1e-6);
    }

    #[test]
    fn adam_first_step_has_size_lr() {
        let mut w = Tensor::new(1, 2, vec![0.0, 0.0]);
        let mut opt = Optimizer::new(OptimizerKind::Adam);
        opt.step(std::iter::once(&mut w), &[&[5.0, -0.01]], 1e-3);
        assert!((w.data[0] + 1e-3).abs() < 1e-9);
        assert!((w.data[1] - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn warm_restarts() {
        let r = Restarts { t0: 50.0, t_mult: 1.0 };
        assert_eq!(r.factor(0.0), 1.0);
        assert!((r.factor(25.0) - 0.5).abs() < 1e-12);
        assert!(r.factor(49.9) < 1e-4);
        assert_eq!(r.factor(50.0), 1.0);
        assert!((r.factor(75.0) - 0.5).abs() < 1e-12);
        let doubling = Restarts { t0: 10.0, t_mult: 2.0 };
        assert_eq!(doubling.factor(10.0), 1.0);
        assert!((doubling.factor(20.0) - 0.5).abs() < 1e-12);
        assert_eq!(doubling.factor(30.0), 1.0);
        let cfg = OptimizerConfig {
            restarts: Some(r),
            ..OptimizerConfig::default()
        };
        assert!((cfg.lr_at(25.0) - 5e-4).abs() < 1e-15);
    }
}

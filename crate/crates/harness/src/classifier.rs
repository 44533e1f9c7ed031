//! Binary classifiers over flat parameter vectors, trained by mini-batch
//! gradient descent on the logistic loss.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::task::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelKind {
    /// `[w (d), b]`.
    #[default]
    Logistic,
    /// One tanh hidden layer: `[W1 (h×d, row-major), b1 (h), w2 (h), b2]`.
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 2,
            batch_size: 32,
            weight_decay: 1e-3,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ModelKind {
    pub fn param_count(self, dim: usize) -> usize {
        match self {
            ModelKind::Logistic => dim + 1,
            ModelKind::Mlp { hidden } => hidden * dim + 2 * hidden + 1,
        }
    }

    /// Initial parameters: zeros for the linear model, scaled Gaussians for
    /// the hidden layer of the MLP.
    pub fn init<R: Rng>(self, dim: usize, rng: &mut R) -> Vec<f32> {
        let mut params = vec![0.0f32; self.param_count(dim)];
        if let ModelKind::Mlp { hidden } = self {
            let w1 = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive std");
            for v in &mut params[..hidden * dim] {
                *v = w1.sample(rng) as f32;
            }
            let w2 = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("positive std");
            for v in &mut params[hidden * dim + hidden..hidden * dim + 2 * hidden] {
                *v = w2.sample(rng) as f32;
            }
        }
        params
    }

    /// Logit of class 1.
    pub fn logit(self, params: &[f64], x: &[f32]) -> f64 {
        let d = x.len();
        match self {
            ModelKind::Logistic => {
                params[..d].iter().zip(x).map(|(w, v)| w * f64::from(*v)).sum::<f64>() + params[d]
            }
            ModelKind::Mlp { hidden } => {
                let (w1, rest) = params.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                let mut z = b2[0];
                for j in 0..hidden {
                    let pre: f64 = w1[j * d..(j + 1) * d]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * f64::from(*v))
                        .sum::<f64>()
                        + b1[j];
                    z += w2[j] * pre.tanh();
                }
                z
            }
        }
    }

    /// Adds `scale · ∂loss/∂params` for one sample to `grad`.
    fn accumulate_gradient(self, params: &[f64], x: &[f32], y: u8, scale: f64, grad: &mut [f64]) {
        let d = x.len();
        match self {
            ModelKind::Logistic => {
                let err = (sigmoid(self.logit(params, x)) - f64::from(y)) * scale;
                for (g, v) in grad[..d].iter_mut().zip(x) {
                    *g += err * f64::from(*v);
                }
                grad[d] += err;
            }
            ModelKind::Mlp { hidden } => {
                let (w1, rest) = params.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                let act: Vec<f64> = (0..hidden)
                    .map(|j| {
                        (w1[j * d..(j + 1) * d]
                            .iter()
                            .zip(x)
                            .map(|(w, v)| w * f64::from(*v))
                            .sum::<f64>()
                            + b1[j])
                            .tanh()
                    })
                    .collect();
                let z = b2[0] + w2.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>();
                let err = (sigmoid(z) - f64::from(y)) * scale;
                let (g_w1, rest) = grad.split_at_mut(hidden * d);
                let (g_b1, rest) = rest.split_at_mut(hidden);
                let (g_w2, g_b2) = rest.split_at_mut(hidden);
                g_b2[0] += err;
                for j in 0..hidden {
                    g_w2[j] += err * act[j];
                    let delta = err * w2[j] * (1.0 - act[j] * act[j]);
                    g_b1[j] += delta;
                    for (g, v) in g_w1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g += delta * f64::from(*v);
                    }
                }
            }
        }
    }

    pub fn predict(self, params: &[f64], x: &[f32]) -> u8 {
        u8::from(self.logit(params, x) >= 0.0)
    }

    /// Fraction of samples whose prediction equals their label.
    pub fn accuracy(self, params: &[f32], data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let wide: Vec<f64> = params.iter().map(|&v| f64::from(v)).collect();
        let hits = (0..data.len())
            .filter(|&i| {
                let (x, y) = data.sample(i);
                self.predict(&wide, x) == y
            })
            .count();
        hits as f64 / data.len() as f64
    }

    /// Fraction of samples predicted as `label`.
    pub fn rate_of(self, params: &[f32], data: &Dataset, label: u8) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let wide: Vec<f64> = params.iter().map(|&v| f64::from(v)).collect();
        let hits = (0..data.len())
            .filter(|&i| self.predict(&wide, data.sample(i).0) == label)
            .count();
        hits as f64 / data.len() as f64
    }

    /// Mini-batch gradient descent from `start`; the shuffle order comes from `rng`.
    pub fn train<R: Rng>(self, start: &[f32], data: &Dataset, config: &TrainConfig, rng: &mut R) -> Vec<f32> {
        let mut params: Vec<f64> = start.iter().map(|&v| f64::from(v)).collect();
        if data.is_empty() || config.epochs == 0 {
            return start.to_vec();
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut grad = vec![0.0f64; params.len()];
        let batch = config.batch_size.max(1);
        for _ in 0..config.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(batch) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / chunk.len() as f64;
                for &i in chunk {
                    let (x, y) = data.sample(i);
                    self.accumulate_gradient(&params, x, y, scale, &mut grad);
                }
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= config.learning_rate * (g + config.weight_decay * *p);
                }
            }
        }
        params.iter().map(|&v| v as f32).collect()
    }
}

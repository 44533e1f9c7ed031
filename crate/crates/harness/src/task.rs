//! Two-class Gaussian blob task with a feature-patch backdoor trigger.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

/// Class-conditional Gaussians. Class `c` has mean `±separation/2` on every
/// informative feature (`+` for class 1) and mean 0 on the trigger features,
/// which carry no class signal.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTask {
    pub feature_dim: usize,
    pub separation: f64,
    /// Standard deviation of the informative features.
    pub noise_std: f64,
    /// Standard deviation of the trigger features in clean data.
    pub background_std: f64,
    pub trigger_indices: Vec<usize>,
    pub trigger_value: f32,
    pub target_label: u8,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            separation: 1.2,
            noise_std: 1.0,
            background_std: 0.1,
            trigger_indices: vec![13, 14, 15],
            trigger_value: 2.0,
            target_label: 0,
        }
    }
}

/// Row-major samples with 0/1 labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub features: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> (&[f32], u8) {
        (&self.features[i * self.dim..(i + 1) * self.dim], self.labels[i])
    }

    pub fn push(&mut self, x: &[f32], y: u8) {
        debug_assert_eq!(x.len(), self.dim);
        self.features.extend_from_slice(x);
        self.labels.push(y);
    }
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<(), String> {
        if self.feature_dim == 0 {
            return Err("feature_dim must be positive".into());
        }
        if self.target_label > 1 {
            return Err("target_label must be 0 or 1".into());
        }
        if self.trigger_indices.is_empty() {
            return Err("trigger_indices must not be empty".into());
        }
        let mut seen = vec![false; self.feature_dim];
        for &i in &self.trigger_indices {
            match seen.get_mut(i) {
                Some(s) if !*s => *s = true,
                Some(_) => return Err(format!("trigger index {i} repeated")),
                None => return Err(format!("trigger index {i} outside feature_dim {}", self.feature_dim)),
            }
        }
        if self.trigger_indices.len() == self.feature_dim {
            return Err("at least one feature must be informative".into());
        }
        if !(self.noise_std > 0.0 && self.background_std > 0.0 && self.separation.is_finite()) {
            return Err("noise_std and background_std must be positive".into());
        }
        if !self.trigger_value.is_finite() {
            return Err("trigger_value must be finite".into());
        }
        Ok(())
    }

    fn is_trigger(&self, k: usize) -> bool {
        self.trigger_indices.contains(&k)
    }

    /// `count` clean samples with balanced random labels.
    pub fn generate<R: Rng>(&self, rng: &mut R, count: usize) -> Dataset {
        let informative = Normal::new(0.0, self.noise_std).expect("positive std");
        let background = Normal::new(0.0, self.background_std).expect("positive std");
        let mut data = Dataset::new(self.feature_dim);
        let mut x = vec![0.0f32; self.feature_dim];
        for _ in 0..count {
            let y: u8 = rng.random_range(0..=1);
            let sign = if y == 1 { 0.5 } else { -0.5 };
            for (k, v) in x.iter_mut().enumerate() {
                *v = if self.is_trigger(k) {
                    background.sample(rng) as f32
                } else {
                    (sign * self.separation + informative.sample(rng)) as f32
                };
            }
            data.push(&x, y);
        }
        data
    }

    /// Writes the trigger pattern into `x`.
    pub fn apply_trigger(&self, x: &mut [f32]) {
        for &i in &self.trigger_indices {
            x[i] = self.trigger_value;
        }
    }

    /// Triggered copies of every sample, relabelled to the target.
    pub fn poisoned(&self, clean: &Dataset) -> Dataset {
        let mut out = Dataset::new(clean.dim);
        let mut x = vec![0.0f32; clean.dim];
        for i in 0..clean.len() {
            x.copy_from_slice(clean.sample(i).0);
            self.apply_trigger(&mut x);
            out.push(&x, self.target_label);
        }
        out
    }

    /// Triggered copies of the samples whose true label is not the target,
    /// keeping the true label. Used to measure backdoor accuracy.
    pub fn backdoor_eval(&self, clean: &Dataset) -> Dataset {
        let mut out = Dataset::new(clean.dim);
        let mut x = vec![0.0f32; clean.dim];
        for i in 0..clean.len() {
            let (sample, y) = clean.sample(i);
            if y == self.target_label {
                continue;
            }
            x.copy_from_slice(sample);
            self.apply_trigger(&mut x);
            out.push(&x, y);
        }
        out
    }

    /// The first `(1 - ratio)` of `clean` as is, the rest triggered and relabelled.
    pub fn mix(&self, clean: &Dataset, ratio: f64) -> Dataset {
        let cut = ((1.0 - ratio) * clean.len() as f64).round() as usize;
        let mut out = Dataset::new(clean.dim);
        let mut x = vec![0.0f32; clean.dim];
        for i in 0..clean.len() {
            let (sample, y) = clean.sample(i);
            x.copy_from_slice(sample);
            if i < cut {
                out.push(&x, y);
            } else {
                self.apply_trigger(&mut x);
                out.push(&x, self.target_label);
            }
        }
        out
    }
}

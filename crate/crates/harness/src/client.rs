//! Simulated clients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::classifier::{ModelKind, TrainConfig};
use crate::task::{Dataset, SyntheticTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Benign,
    Malicious,
}

/// Data poisoning with update boosting.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Fraction of a malicious client's samples that carry the trigger.
    pub poison_ratio: f64,
    /// The submitted model is `global + boost · (local − global)`.
    pub boost: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            poison_ratio: 0.5,
            boost: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientSim {
    pub id: usize,
    pub role: Role,
    pub data: Dataset,
    pub boost: f64,
    rng: ChaCha8Rng,
}

/// RNG stream for client `id`; stream 0 is kept for the shared test set and
/// the initial model.
pub fn client_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64 + 1);
    rng
}

impl ClientSim {
    pub fn benign(id: usize, task: &SyntheticTask, samples: usize, seed: u64) -> Self {
        let mut rng = client_rng(seed, id);
        let data = task.generate(&mut rng, samples);
        Self {
            id,
            role: Role::Benign,
            data,
            boost: 1.0,
            rng,
        }
    }

    pub fn malicious(id: usize, task: &SyntheticTask, samples: usize, seed: u64, attack: &AttackConfig) -> Self {
        let mut rng = client_rng(seed, id);
        let clean = task.generate(&mut rng, samples);
        Self {
            id,
            role: Role::Malicious,
            data: task.mix(&clean, attack.poison_ratio),
            boost: attack.boost,
            rng,
        }
    }

    pub fn is_malicious(&self) -> bool {
        self.role == Role::Malicious
    }

    /// One round of local training starting from `global`.
    pub fn train_local(&mut self, kind: ModelKind, global: &[f32], config: &TrainConfig) -> Vec<f32> {
        let local = kind.train(global, &self.data, config, &mut self.rng);
        if self.boost == 1.0 {
            return local;
        }
        global
            .iter()
            .zip(&local)
            .map(|(&g, &l)| (f64::from(g) + self.boost * (f64::from(l) - f64::from(g))) as f32)
            .collect()
    }
}

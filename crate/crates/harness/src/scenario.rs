//! Scenario files.

use std::path::Path;
use std::str::FromStr;

use flame_core::Defense;
use serde::{Deserialize, Deserializer};

use crate::classifier::{ModelKind, TrainConfig};
use crate::client::AttackConfig;
use crate::task::SyntheticTask;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Where the local models go for aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    /// Direct calls into the pipeline.
    #[default]
    InProcess,
    /// Attested, encrypted submission to a scheduler on localhost.
    Service,
}

fn defense<'de, D: Deserializer<'de>>(d: D) -> Result<Defense, D::Error> {
    let s = String::deserialize(d)?;
    Defense::from_str(&s).map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub seed: u64,
    pub rounds: usize,
    pub clients: usize,
    /// Clients `0..malicious` are attackers.
    pub malicious: usize,
    pub samples_per_client: usize,
    pub test_samples: usize,
    #[serde(deserialize_with = "defense")]
    pub defense: Defense,
    /// Noise range `λ`, relative to the median update norm.
    pub lambda: f64,
    pub stages: usize,
    pub transport: Transport,
    pub model: ModelKind,
    pub task: SyntheticTask,
    pub train: TrainConfig,
    pub attack: AttackConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 30,
            clients: 20,
            malicious: 0,
            samples_per_client: 200,
            test_samples: 2000,
            defense: Defense::Flame,
            lambda: flame_core::config::DEFAULT_NOISE_RANGE,
            stages: flame_core::config::DEFAULT_STAGES,
            transport: Transport::InProcess,
            model: ModelKind::Logistic,
            task: SyntheticTask::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |msg: String| Err(ScenarioError::Invalid(msg));
        if self.clients == 0 {
            return invalid("clients must be positive".into());
        }
        // the adversary controls strictly fewer than half of the clients
        if 2 * self.malicious >= self.clients {
            return invalid(format!(
                "malicious = {} must be below clients / 2 (clients = {})",
                self.malicious, self.clients
            ));
        }
        if self.samples_per_client == 0 || self.test_samples == 0 {
            return invalid("sample counts must be positive".into());
        }
        if self.stages == 0 {
            return invalid("stages must be positive".into());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return invalid(format!("lambda must be a non-negative number, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.attack.poison_ratio) {
            return invalid("attack.poison_ratio must lie in [0, 1]".into());
        }
        if !(self.attack.boost.is_finite() && self.attack.boost > 0.0) {
            return invalid("attack.boost must be positive".into());
        }
        if !(self.train.learning_rate > 0.0 && self.train.batch_size > 0) {
            return invalid("train.learning_rate and train.batch_size must be positive".into());
        }
        if let ModelKind::Mlp { hidden: 0 } = self.model {
            return invalid("mlp.hidden must be positive".into());
        }
        self.task.validate().map_err(ScenarioError::Invalid)
    }
}

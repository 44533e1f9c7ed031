use crate::aggregate::NoiseScale;
use crate::error::ConfigError;

pub const DEFAULT_STAGES: usize = 8;
pub const DEFAULT_NOISE_RANGE: f64 = 0.001;

/// Parameters of one aggregation round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub clients: usize,
    pub params: usize,
    /// Number of cascade stages, i.e. rows of the distance matrix produced per pass.
    pub stages: usize,
    /// The noise range `λ`.
    pub noise_range: f64,
    pub noise_scale: NoiseScale,
    pub seed: u64,
    /// Accept every model when no majority cluster is found instead of failing
    /// with [`PipelineError::NoAcceptedModels`](crate::PipelineError::NoAcceptedModels).
    pub all_noise_fallback: bool,
}

impl RoundConfig {
    pub fn new(clients: usize, params: usize) -> Self {
        Self {
            clients,
            params,
            stages: DEFAULT_STAGES,
            noise_range: DEFAULT_NOISE_RANGE,
            noise_scale: NoiseScale::RelativeToMedian,
            seed: 0,
            all_noise_fallback: true,
        }
    }

    pub fn with_stages(mut self, stages: usize) -> Self {
        self.stages = stages;
        self
    }

    pub fn with_noise_range(mut self, noise_range: f64) -> Self {
        self.noise_range = noise_range;
        self
    }

    pub fn with_noise_scale(mut self, noise_scale: NoiseScale) -> Self {
        self.noise_scale = noise_scale;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_all_noise_fallback(mut self, enabled: bool) -> Self {
        self.all_noise_fallback = enabled;
        self
    }

    /// `floor(n/2) + 1`: the smallest strict majority of clients.
    pub fn min_cluster_size(&self) -> usize {
        majority(self.clients)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.clients == 0 {
            return Err(ConfigError::NoClients);
        }
        if self.params == 0 {
            return Err(ConfigError::NoParameters);
        }
        if self.stages == 0 {
            return Err(ConfigError::StageCountZero);
        }
        if !self.noise_range.is_finite() || self.noise_range < 0.0 {
            return Err(ConfigError::InvalidNoiseRange(self.noise_range));
        }
        Ok(())
    }
}

/// Smallest strict majority of `n`.
pub fn majority(n: usize) -> usize {
    n / 2 + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_cluster_size_is_strict_majority() {
        for (n, m) in [(1, 1), (2, 2), (3, 2), (4, 3), (10, 6), (11, 6), (20, 11)] {
            assert_eq!(RoundConfig::new(n, 1).min_cluster_size(), m);
        }
    }

    #[test]
    fn validation() {
        assert!(RoundConfig::new(3, 5).validate().is_ok());
        assert_eq!(RoundConfig::new(0, 5).validate(), Err(ConfigError::NoClients));
        assert_eq!(RoundConfig::new(3, 0).validate(), Err(ConfigError::NoParameters));
        assert_eq!(
            RoundConfig::new(3, 5).with_stages(0).validate(),
            Err(ConfigError::StageCountZero)
        );
        assert!(matches!(
            RoundConfig::new(3, 5).with_noise_range(-1.0).validate(),
            Err(ConfigError::InvalidNoiseRange(_))
        ));
        assert!(RoundConfig::new(3, 5)
            .with_noise_range(f64::NAN)
            .validate()
            .is_err());
    }
}

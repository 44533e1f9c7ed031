//! Scheduler configuration and its TOML file form.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use flame_core::{Defense, ModelVector, NoiseScale};
use serde::Deserialize;
use thiserror::Error;

use crate::attest::{DeviceKey, Measurement};

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub device_key: DeviceKey,
    pub measurement: Measurement,
    /// Models needed before a round runs.
    pub quorum: usize,
    pub stages: usize,
    pub noise_range: f64,
    pub noise_scale: NoiseScale,
    /// Round `r` aggregates with seed `seed + r` (wrapping).
    pub seed: u64,
    pub defense: Defense,
    pub initial_model: ModelVector,
}

impl ServiceConfig {
    pub fn new(device_key: DeviceKey, measurement: Measurement, initial_model: ModelVector, quorum: usize) -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 0)),
            device_key,
            measurement,
            quorum,
            stages: flame_core::config::DEFAULT_STAGES,
            noise_range: flame_core::config::DEFAULT_NOISE_RANGE,
            noise_scale: NoiseScale::RelativeToMedian,
            seed: 0,
            defense: Defense::Flame,
            initial_model,
        }
    }

    pub fn round_seed(&self, round: u64) -> u64 {
        self.seed.wrapping_add(round)
    }
}

/// On-disk form. Relative paths resolve against the file's directory.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    listen: Option<String>,
    device_key: Option<String>,
    device_key_file: Option<PathBuf>,
    /// Hex digest; defaults to SHA-256 of the running executable.
    measurement: Option<String>,
    quorum: usize,
    stages: Option<usize>,
    lambda: Option<f64>,
    absolute_sigma: Option<bool>,
    seed: Option<u64>,
    defense: Option<String>,
    params: Option<usize>,
    global_model: Option<PathBuf>,
}

fn hex32(field: &str, text: &str) -> Result<[u8; 32], ConfigFileError> {
    let bytes = hex::decode(text.trim())
        .map_err(|e| ConfigFileError::Invalid(format!("{field}: {e}")))?;
    bytes
        .try_into()
        .map_err(|b: Vec<u8>| ConfigFileError::Invalid(format!("{field}: expected 32 bytes, got {}", b.len())))
}

fn read(path: &Path) -> Result<Vec<u8>, ConfigFileError> {
    std::fs::read(path).map_err(|source| ConfigFileError::Read {
        path: path.to_path_buf(),
        source,
    })
}

/// Measurement of the running binary.
pub fn self_measurement() -> std::io::Result<Measurement> {
    let exe = std::env::current_exe()?;
    Ok(crate::attest::measure(&std::fs::read(exe)?))
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = String::from_utf8(read(path)?)
            .map_err(|_| ConfigFileError::Invalid("config is not UTF-8".into()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigFileError> {
        let file: ConfigFile = toml::from_str(text)?;
        let invalid = |m: &str| ConfigFileError::Invalid(m.to_string());

        let device_key = match (&file.device_key, &file.device_key_file) {
            (Some(k), None) => hex32("device_key", k)?,
            (None, Some(p)) => {
                let text = String::from_utf8(read(&base.join(p))?)
                    .map_err(|_| invalid("device key file is not hex text"))?;
                hex32("device_key_file", &text)?
            }
            _ => return Err(invalid("exactly one of device_key and device_key_file is required")),
        };
        let measurement = match &file.measurement {
            Some(m) => hex32("measurement", m)?,
            None => self_measurement().map_err(|e| ConfigFileError::Invalid(format!("measuring executable: {e}")))?,
        };
        let initial_model = match (file.params, &file.global_model) {
            (Some(0), None) => return Err(invalid("params must be at least 1")),
            (Some(p), None) => ModelVector::zeros(p),
            (None, Some(path)) => ModelVector::from_bytes(&read(&base.join(path))?)
                .map_err(|e| ConfigFileError::Invalid(format!("global_model: {e}")))?,
            _ => return Err(invalid("exactly one of params and global_model is required")),
        };
        if file.quorum == 0 {
            return Err(invalid("quorum must be at least 1"));
        }

        let mut config = ServiceConfig::new(DeviceKey(device_key), measurement, initial_model, file.quorum);
        if let Some(listen) = file.listen {
            config.listen = listen
                .parse()
                .map_err(|e| ConfigFileError::Invalid(format!("listen: {e}")))?;
        }
        if let Some(stages) = file.stages {
            if stages == 0 {
                return Err(invalid("stages must be at least 1"));
            }
            config.stages = stages;
        }
        if let Some(lambda) = file.lambda {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(invalid("lambda must be a finite non-negative number"));
            }
            config.noise_range = lambda;
        }
        if file.absolute_sigma == Some(true) {
            config.noise_scale = NoiseScale::Absolute;
        }
        if let Some(seed) = file.seed {
            config.seed = seed;
        }
        if let Some(defense) = file.defense {
            config.defense = defense.parse().map_err(ConfigFileError::Invalid)?;
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEY: &str = "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f";

    #[test]
    fn minimal_file() {
        let text = format!("quorum = 3\nparams = 10\ndevice_key = \"{KEY}\"\nmeasurement = \"{KEY}\"\n");
        let c = ServiceConfig::parse(&text, Path::new(".")).unwrap();
        assert_eq!(c.quorum, 3);
        assert_eq!(c.initial_model.len(), 10);
        assert_eq!(c.device_key.0[31], 0x1f);
        assert_eq!(c.defense, Defense::Flame);
        assert_eq!(c.stages, 8);
    }

    #[test]
    fn all_fields() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("device.key"), format!("{KEY}\n")).unwrap();
        std::fs::write(dir.path().join("g.flsg"), ModelVector::zeros(4).to_bytes()).unwrap();
        let text = format!(
            "listen = \"127.0.0.1:7000\"\ndevice_key_file = \"device.key\"\nmeasurement = \"{KEY}\"\n\
             quorum = 2\nstages = 3\nlambda = 0.5\nabsolute_sigma = true\nseed = 9\n\
             defense = \"fedavg\"\nglobal_model = \"g.flsg\"\n"
        );
        let c = ServiceConfig::parse(&text, dir.path()).unwrap();
        assert_eq!(c.listen.port(), 7000);
        assert_eq!((c.stages, c.noise_range, c.seed), (3, 0.5, 9));
        assert_eq!(c.noise_scale, NoiseScale::Absolute);
        assert_eq!(c.defense, Defense::FedAvg);
        assert_eq!(c.round_seed(2), 11);
    }

    #[test]
    fn rejects_bad_files() {
        let base = Path::new(".");
        for text in [
            format!("quorum = 1\nparams = 2\ndevice_key = \"{KEY}\"\nmeasurement = \"{KEY}\"\ncolour = 1\n"),
            format!("quorum = 1\nparams = 2\nmeasurement = \"{KEY}\"\n"),
            format!("quorum = 1\nparams = 2\ndevice_key = \"abcd\"\nmeasurement = \"{KEY}\"\n"),
            format!("quorum = 0\nparams = 2\ndevice_key = \"{KEY}\"\nmeasurement = \"{KEY}\"\n"),
            format!("quorum = 1\ndevice_key = \"{KEY}\"\nmeasurement = \"{KEY}\"\n"),
            format!("quorum = 1\nparams = 2\ndevice_key = \"{KEY}\"\nmeasurement = \"{KEY}\"\nlambda = -1.0\n"),
        ] {
            assert!(ServiceConfig::parse(&text, base).is_err(), "{text}");
        }
    }
}

//! One aggregation round: preprocess, cascade distances, then clustering and
//! scaling side by side, then aggregation.

use std::thread;

use tracing::{info, warn};

use crate::aggregate::{aggregate, federated_average};
use crate::clip::{compute_scales, ScaleResult};
use crate::config::RoundConfig;
use crate::cosine::{cascade_distances, CascadeReport, DistanceMatrix};
use crate::error::PipelineError;
use crate::hdbscan::{cluster_and_label, ClusterLabels, ClusterOutcome};
use crate::model::ModelVector;
use crate::noise::NoiseSource;
use crate::preprocess::preprocess;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Defense {
    /// Filtering, median clipping and noising.
    #[default]
    Flame,
    /// Unweighted mean of all local models.
    FedAvg,
}

impl std::str::FromStr for Defense {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flame" => Ok(Defense::Flame),
            "fedavg" => Ok(Defense::FedAvg),
            other => Err(format!("unknown defense {other:?}; expected flame or fedavg")),
        }
    }
}

impl std::fmt::Display for Defense {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Defense::Flame => "flame",
            Defense::FedAvg => "fedavg",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub model: ModelVector,
    pub labels: ClusterLabels,
    /// No majority cluster was found and every model was accepted.
    pub all_noise_fallback: bool,
    /// Present for [`Defense::Flame`] only.
    pub scale: Option<ScaleResult>,
    pub cascade: Option<CascadeReport>,
    pub distances: Option<DistanceMatrix>,
}

/// Aggregates `locals` (client `i` is `locals[i]`) into a new global model.
pub fn run_round(
    global: &ModelVector,
    locals: &[ModelVector],
    config: &RoundConfig,
    defense: Defense,
) -> Result<RoundOutcome, PipelineError> {
    config.validate()?;
    if locals.len() != config.clients {
        return Err(PipelineError::ClientCountMismatch {
            what: "local models",
            expected: config.clients,
            found: locals.len(),
        });
    }
    if global.len() != config.params {
        return Err(PipelineError::DimensionMismatch {
            client: usize::MAX,
            expected: config.params,
            found: global.len(),
        });
    }

    let pre = preprocess(global, locals)?;
    if defense == Defense::FedAvg {
        return Ok(RoundOutcome {
            model: federated_average(global, &pre.diffs)?,
            labels: ClusterLabels::accept_all(locals.len()),
            all_noise_fallback: false,
            scale: None,
            cascade: None,
            distances: None,
        });
    }

    let (distances, cascade) = cascade_distances(&pre.diffs, &pre.norms, config.stages)?;

    // clustering and scaling share no data
    let (clustered, scale) = thread::scope(|scope| {
        let clustering = scope.spawn(|| cluster_and_label(&distances, config.min_cluster_size()));
        let scale = compute_scales(&pre.norms);
        (clustering.join().expect("clustering thread panicked"), scale)
    });

    let (labels, all_noise_fallback) = match clustered? {
        ClusterOutcome::Majority(labels) => (labels, false),
        ClusterOutcome::AllNoise if config.all_noise_fallback => {
            warn!(clients = locals.len(), "no majority cluster; accepting every model");
            (ClusterLabels::accept_all(locals.len()), true)
        }
        ClusterOutcome::AllNoise => return Err(PipelineError::NoAcceptedModels),
    };

    let mut noise = NoiseSource::new(config.seed);
    let model = aggregate(
        global,
        &pre.diffs,
        &labels,
        &scale,
        config.noise_range,
        config.noise_scale,
        &mut noise,
    )?;
    info!(
        accepted = labels.accepted_count(),
        median_norm = scale.median_norm,
        passes = cascade.pass_count,
        "aggregation round complete"
    );

    Ok(RoundOutcome {
        model,
        labels,
        all_noise_fallback,
        scale: Some(scale),
        cascade: Some(cascade),
        distances: Some(distances),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(v: &[f32]) -> ModelVector {
        ModelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identical_submissions_are_a_fixed_point() {
        let global = model(&[0.0, 0.0, 0.0]);
        let m = model(&[0.5, -1.25, 2.0]);
        let cfg = RoundConfig::new(3, 3).with_noise_range(0.0);
        let out = run_round(&global, &vec![m.clone(); 3], &cfg, Defense::Flame).unwrap();
        assert_eq!(out.model, m);
        assert_eq!(out.labels.accepted_count(), 3);
    }

    #[test]
    fn outlier_is_filtered_and_clipped_mean_returned() {
        let global = model(&[0.0, 0.0]);
        let locals = vec![
            model(&[1.0, 0.1]),
            model(&[1.0, 0.0]),
            model(&[1.0, -0.1]),
            model(&[0.9, 0.05]),
            model(&[-5.0, 40.0]),
        ];
        let cfg = RoundConfig::new(5, 2).with_noise_range(0.0).with_stages(2);
        let out = run_round(&global, &locals, &cfg, Defense::Flame).unwrap();
        assert!(!out.labels.is_accepted(4));
        assert!(out.labels.accepted_count() >= 3);
        assert!(out.model.params()[1].abs() < 0.1);
        assert_eq!(out.cascade.unwrap().pass_count, 3);
    }

    #[test]
    fn fedavg_skips_the_defense() {
        let global = model(&[0.0]);
        let locals = vec![model(&[1.0]), model(&[2.0]), model(&[30.0])];
        let cfg = RoundConfig::new(3, 1);
        let out = run_round(&global, &locals, &cfg, Defense::FedAvg).unwrap();
        assert_eq!(out.model, model(&[11.0]));
        assert!(out.scale.is_none());
    }

    #[test]
    fn config_must_match_inputs() {
        let global = model(&[0.0]);
        let cfg = RoundConfig::new(2, 1);
        assert!(matches!(
            run_round(&global, &[model(&[1.0])], &cfg, Defense::Flame),
            Err(PipelineError::ClientCountMismatch { .. })
        ));
        let cfg = RoundConfig::new(1, 1).with_stages(0);
        assert!(matches!(
            run_round(&global, &[model(&[1.0])], &cfg, Defense::Flame),
            Err(PipelineError::Config(_))
        ));
    }

    #[test]
    fn defense_names() {
        assert_eq!("flame".parse::<Defense>().unwrap(), Defense::Flame);
        assert_eq!("fedavg".parse::<Defense>().unwrap(), Defense::FedAvg);
        assert!("krum".parse::<Defense>().is_err());
        assert_eq!(Defense::FedAvg.to_string(), "fedavg");
    }
}

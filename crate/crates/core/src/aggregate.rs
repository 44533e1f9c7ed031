//! Aggregation element: clipped averaging of accepted updates plus noise.

use crate::clip::ScaleResult;
use crate::error::PipelineError;
use crate::hdbscan::ClusterLabels;
use crate::model::{DifferentialVector, ModelVector};
use crate::noise::NoiseSource;

/// How the noise range `λ` turns into a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseScale {
    /// `σ = λ · S_t`, proportional to the clipping bound.
    #[default]
    RelativeToMedian,
    /// `σ = λ`.
    Absolute,
}

impl NoiseScale {
    pub fn sigma(self, noise_range: f64, median_norm: f64) -> f64 {
        match self {
            NoiseScale::RelativeToMedian => noise_range * median_norm,
            NoiseScale::Absolute => noise_range,
        }
    }
}

/// Averages `global + scales[i] * d_i` over the accepted clients and adds
/// `σ · z_c` to every coordinate, `z_c` being the next standard-normal
/// variate of `noise` in coordinate order.
///
/// Sums run in `f64` over ascending client index and are narrowed to `f32`
/// once, after the noise is added. No variates are drawn when `σ == 0`.
pub fn aggregate(
    global: &ModelVector,
    diffs: &[DifferentialVector],
    labels: &ClusterLabels,
    scale: &ScaleResult,
    noise_range: f64,
    noise_scale: NoiseScale,
    noise: &mut NoiseSource,
) -> Result<ModelVector, PipelineError> {
    narrow(aggregate_wide(global, diffs, labels, scale, noise_range, noise_scale, noise)?)
}

/// [`aggregate`] without the final narrowing to `f32`.
pub fn aggregate_wide(
    global: &ModelVector,
    diffs: &[DifferentialVector],
    labels: &ClusterLabels,
    scale: &ScaleResult,
    noise_range: f64,
    noise_scale: NoiseScale,
    noise: &mut NoiseSource,
) -> Result<Vec<f64>, PipelineError> {
    let p = global.len();
    check_shapes(global, diffs)?;
    if labels.len() != diffs.len() {
        return Err(PipelineError::ClientCountMismatch {
            what: "labels",
            expected: diffs.len(),
            found: labels.len(),
        });
    }
    if scale.scales.len() != diffs.len() {
        return Err(PipelineError::ClientCountMismatch {
            what: "scales",
            expected: diffs.len(),
            found: scale.scales.len(),
        });
    }
    let accepted = labels.accepted_count();
    if accepted == 0 {
        return Err(PipelineError::NoAcceptedModels);
    }

    let mut sum = vec![0.0f64; p];
    for i in labels.accepted_indices() {
        let factor = scale.scales[i];
        for ((acc, g), d) in sum.iter_mut().zip(global.params()).zip(&diffs[i].values) {
            *acc += f64::from(*g) + factor * f64::from(*d);
        }
    }

    let sigma = noise_scale.sigma(noise_range, scale.median_norm);
    let count = accepted as f64;
    if sigma > 0.0 {
        let z = noise.standard_normal_stream(p);
        Ok(sum.iter().zip(&z).map(|(s, z)| s / count + sigma * z).collect())
    } else {
        Ok(sum.iter().map(|s| s / count).collect())
    }
}

/// Plain federated averaging: every client accepted, no clipping, no noise.
pub fn federated_average(
    global: &ModelVector,
    diffs: &[DifferentialVector],
) -> Result<ModelVector, PipelineError> {
    check_shapes(global, diffs)?;
    if diffs.is_empty() {
        return Err(PipelineError::NoAcceptedModels);
    }
    let mut sum = vec![0.0f64; global.len()];
    for d in diffs {
        for ((acc, g), v) in sum.iter_mut().zip(global.params()).zip(&d.values) {
            *acc += f64::from(*g) + f64::from(*v);
        }
    }
    let count = diffs.len() as f64;
    narrow(sum.iter().map(|s| s / count).collect())
}

fn check_shapes(global: &ModelVector, diffs: &[DifferentialVector]) -> Result<(), PipelineError> {
    match diffs.iter().find(|d| d.len() != global.len()) {
        Some(d) => Err(PipelineError::DimensionMismatch {
            client: d.client,
            expected: global.len(),
            found: d.len(),
        }),
        None => Ok(()),
    }
}

fn narrow(wide: Vec<f64>) -> Result<ModelVector, PipelineError> {
    let out: Vec<f32> = wide.iter().map(|&v| v as f32).collect();
    if let Some(coordinate) = out.iter().position(|v| !v.is_finite()) {
        return Err(PipelineError::NonFiniteResult { coordinate });
    }
    Ok(ModelVector::new(out).expect("non-empty and finite"))
}

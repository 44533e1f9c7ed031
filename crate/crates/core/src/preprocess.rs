//! Preprocessor element: differential vectors and their L2 norms.

use rayon::prelude::*;

use crate::error::PipelineError;
use crate::model::{dot64, DifferentialVector, L2Norms, ModelVector};

/// Output of the preprocessor, in client order `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub diffs: Vec<DifferentialVector>,
    pub norms: L2Norms,
}

impl Preprocessed {
    pub fn clients(&self) -> usize {
        self.diffs.len()
    }
}

/// Computes `d_i = local_i - global` (in `f32`) and `||d_i||_2` (accumulated
/// in `f64`, ascending parameter index). Client `i` is `locals[i]`.
pub fn preprocess(
    global: &ModelVector,
    locals: &[ModelVector],
) -> Result<Preprocessed, PipelineError> {
    let tagged: Vec<(usize, &ModelVector)> = locals.iter().enumerate().collect();
    run(global, &tagged)
}

/// Like [`preprocess`], but each model carries its client index. The indices
/// must form a permutation of `0..n`; output is emitted in client order
/// regardless of the order models were supplied in.
pub fn preprocess_tagged(
    global: &ModelVector,
    locals: &[(usize, ModelVector)],
) -> Result<Preprocessed, PipelineError> {
    let n = locals.len();
    let mut slots: Vec<Option<&ModelVector>> = vec![None; n];
    for (client, model) in locals {
        match slots.get_mut(*client) {
            Some(slot @ None) => *slot = Some(model),
            _ => {
                return Err(PipelineError::InvalidClientIndex {
                    index: *client,
                    clients: n,
                })
            }
        }
    }
    let tagged: Vec<(usize, &ModelVector)> = slots
        .into_iter()
        .enumerate()
        .map(|(i, m)| (i, m.expect("every slot filled by a permutation")))
        .collect();
    run(global, &tagged)
}

fn run(global: &ModelVector, locals: &[(usize, &ModelVector)]) -> Result<Preprocessed, PipelineError> {
    if locals.is_empty() {
        return Err(PipelineError::NoClients);
    }
    let p = global.len();
    if let Some((client, model)) = locals.iter().find(|(_, m)| m.len() != p) {
        return Err(PipelineError::DimensionMismatch {
            client: *client,
            expected: p,
            found: model.len(),
        });
    }

    // Clients are independent; the collected order is the client order.
    let (diffs, norms): (Vec<DifferentialVector>, Vec<f64>) = locals
        .par_iter()
        .map(|(client, model)| {
            let values: Vec<f32> = model
                .params()
                .iter()
                .zip(global.params())
                .map(|(l, g)| l - g)
                .collect();
            let norm = dot64(&values, &values).sqrt();
            (
                DifferentialVector {
                    client: *client,
                    values,
                },
                norm,
            )
        })
        .unzip();

    Ok(Preprocessed {
        diffs,
        norms: L2Norms(norms),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(v: &[f32]) -> ModelVector {
        ModelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identical_model_has_zero_norm() {
        let out = preprocess(&model(&[1.0, 1.0]), &[model(&[1.0, 1.0])]).unwrap();
        assert_eq!(out.diffs[0].values, vec![0.0, 0.0]);
        assert_eq!(out.norms[0], 0.0);
    }

    #[test]
    fn three_four_five() {
        let out = preprocess(&model(&[0.0, 0.0]), &[model(&[3.0, 4.0])]).unwrap();
        assert_eq!(out.diffs[0].values, vec![3.0, 4.0]);
        assert_eq!(out.norms[0], 5.0);
    }

    #[test]
    fn dimension_mismatch() {
        let err = preprocess(&model(&[0.0, 0.0]), &[model(&[1.0, 2.0]), model(&[1.0])]).unwrap_err();
        assert_eq!(
            err,
            PipelineError::DimensionMismatch {
                client: 1,
                expected: 2,
                found: 1
            }
        );
        assert_eq!(
            preprocess(&model(&[0.0]), &[]).unwrap_err(),
            PipelineError::NoClients
        );
    }

    fn random_models(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<ModelVector> {
        (0..n)
            .map(|_| model(&(0..p).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>()))
            .collect()
    }

    #[test]
    fn norms_match_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let global = random_models(&mut rng, 1, 1000).pop().unwrap();
        let locals = random_models(&mut rng, 20, 1000);
        let out = preprocess(&global, &locals).unwrap();
        for i in 0..locals.len() {
            let mut sum = 0.0f64;
            for k in 0..1000 {
                let d = locals[i].params()[k] - global.params()[k];
                sum += (d as f64) * (d as f64);
            }
            assert_eq!(out.norms[i], sum.sqrt(), "client {i}");
            assert_eq!(out.diffs[i].client, i);
        }
    }

    #[test]
    fn tagged_input_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let global = random_models(&mut rng, 1, 50).pop().unwrap();
        let locals = random_models(&mut rng, 6, 50);
        let direct = preprocess(&global, &locals).unwrap();
        let mut tagged: Vec<(usize, ModelVector)> = locals.into_iter().enumerate().collect();
        tagged.reverse();
        tagged.swap(1, 4);
        assert_eq!(preprocess_tagged(&global, &tagged).unwrap(), direct);
    }

    #[test]
    fn tagged_rejects_duplicate_or_out_of_range_index() {
        let g = model(&[0.0]);
        let dup = vec![(0, model(&[1.0])), (0, model(&[2.0]))];
        assert!(matches!(
            preprocess_tagged(&g, &dup),
            Err(PipelineError::InvalidClientIndex { index: 0, .. })
        ));
        let far = vec![(0, model(&[1.0])), (5, model(&[2.0]))];
        assert!(matches!(
            preprocess_tagged(&g, &far),
            Err(PipelineError::InvalidClientIndex { index: 5, .. })
        ));
    }

    #[test]
    fn zero_norm_iff_bitwise_equal_difference() {
        let global = model(&[0.5, -2.0, 3.25]);
        let same = global.clone();
        let nudged = model(&[0.5, -2.0, 3.2500002]);
        let out = preprocess(&global, &[same, nudged]).unwrap();
        assert_eq!(out.norms[0], 0.0);
        assert!(out.norms[1] > 0.0);
    }
}

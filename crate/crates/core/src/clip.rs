//! Scale element: median-norm clipping factors.

use crate::model::L2Norms;

/// Median norm `S_t` and per-client clipping factors `min(1, S_t / norm_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleResult {
    pub median_norm: f64,
    pub scales: Vec<f64>,
}

/// Sorts the norms, takes the element at index `floor(n/2)` as the median
/// (the upper middle for even `n`), and derives each client's factor from
/// its own, unsorted norm. Zero-norm clients get a factor of 1.
///
/// # Panics
///
/// Panics if `norms` is empty.
pub fn compute_scales(norms: &L2Norms) -> ScaleResult {
    assert!(!norms.is_empty(), "at least one norm is required");
    let mut sorted = norms.as_slice().to_vec();
    sorted.sort_by(f64::total_cmp);
    let median_norm = sorted[sorted.len() / 2];
    let scales = norms
        .as_slice()
        .iter()
        .map(|&norm| {
            if norm > 0.0 {
                (median_norm / norm).min(1.0)
            } else {
                1.0
            }
        })
        .collect();
    ScaleResult {
        median_norm,
        scales,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn odd_count() {
        let r = compute_scales(&L2Norms(vec![1.0, 2.0, 3.0]));
        assert_eq!(r.median_norm, 2.0);
        assert_eq!(r.scales, vec![1.0, 1.0, 2.0 / 3.0]);
    }

    #[test]
    fn even_count_takes_upper_middle() {
        let r = compute_scales(&L2Norms(vec![1.0, 2.0, 3.0, 4.0]));
        assert_eq!(r.median_norm, 3.0);
        assert_eq!(r.scales, vec![1.0, 1.0, 1.0, 0.75]);
    }

    #[test]
    fn unsorted_input_keeps_client_alignment() {
        let r = compute_scales(&L2Norms(vec![4.0, 1.0, 3.0, 2.0]));
        assert_eq!(r.median_norm, 3.0);
        assert_eq!(r.scales, vec![0.75, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn equal_norms() {
        let r = compute_scales(&L2Norms(vec![2.5; 6]));
        assert_eq!(r.median_norm, 2.5);
        assert!(r.scales.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn zero_norm_gets_unit_scale() {
        let r = compute_scales(&L2Norms(vec![0.0, 0.0, 5.0]));
        assert_eq!(r.median_norm, 0.0);
        assert_eq!(r.scales, vec![1.0, 1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn clipping_invariants(norms in prop::collection::vec(0.0f64..1e6, 1..64)) {
            let r = compute_scales(&L2Norms(norms.clone()));
            prop_assert!(norms.contains(&r.median_norm));
            for (norm, scale) in norms.iter().zip(&r.scales) {
                prop_assert!((0.0..=1.0).contains(scale));
                prop_assert!(scale * norm <= r.median_norm * (1.0 + 1e-9));
                prop_assert_eq!(*scale == 1.0, *norm <= r.median_norm);
            }
        }
    }
}

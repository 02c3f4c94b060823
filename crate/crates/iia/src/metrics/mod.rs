//! Evaluation metrics for attribution maps: perturbation and
//! insertion/deletion curves, confidence drop/increase statistics,
//! information curves over progressively sharpened images, and
//! segmentation agreement scores.

pub mod confidence;
pub mod curves;
pub mod info;
pub mod seg;

pub use confidence::{adp_pic, adp_pic_from_pairs, ConfidenceScores};
pub use curves::{
    auc, insertion_deletion, masking_order, perturbation_curve, InsDel, MetricCurve,
    PerturbOrder, ScoreKind,
};
pub use info::{gaussian_blur, information_curves, sic_aic, InfoScores};
pub use seg::{aggregate_seg, segmentation_scores, SegScore};

use ndarray::Array2;

use crate::error::{AttributionError, Result};

/// Row-major pixel indices sorted by descending map value. Ties keep raster
/// order, so the ranking is deterministic for any map.
pub fn ranked_pixels_desc(map: &Array2<f64>) -> Result<Vec<usize>> {
    if map.iter().any(|v| !v.is_finite()) {
        return Err(AttributionError::Numeric(
            "attribution map contains non-finite values".into(),
        ));
    }
    let flat: Vec<f64> = map.iter().copied().collect();
    let mut idx: Vec<usize> = (0..flat.len()).collect();
    idx.sort_by(|&a, &b| {
        flat[b]
            .partial_cmp(&flat[a])
            .expect("values checked finite")
            .then(a.cmp(&b))
    });
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ranking_is_descending_with_raster_ties() {
        let map = array![[0.5, 2.0], [2.0, -1.0]];
        assert_eq!(ranked_pixels_desc(&map).unwrap(), vec![1, 2, 0, 3]);
    }

    #[test]
    fn uniform_map_ranks_in_raster_order() {
        let map = Array2::<f64>::ones((3, 3));
        assert_eq!(
            ranked_pixels_desc(&map).unwrap(),
            (0..9).collect::<Vec<_>>()
        );
    }

    #[test]
    fn non_finite_maps_are_rejected() {
        let map = array![[1.0, f64::NAN]];
        assert!(ranked_pixels_desc(&map).is_err());
    }
}

//! Agreement between attribution maps and ground-truth segmentation masks:
//! pixel accuracy, average precision, intersection-over-union, and F1.

use ndarray::Array2;

use crate::error::{AttributionError, Result};

use super::ranked_pixels_desc;

/// Per-image segmentation agreement, every field in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegScore {
    /// Pixel accuracy: correctly labeled pixels over all pixels.
    pub pa: f64,
    /// Average precision of the map treated as a pixel ranking.
    pub ap: f64,
    /// Foreground intersection over union.
    pub iou: f64,
    /// Foreground F1 (Dice) score.
    pub f1: f64,
}

/// Threshold the map at its mean to predict foreground, compare against a
/// binary mask, and also score the raw map as a ranking (AP).
pub fn segmentation_scores(map: &Array2<f64>, mask: &Array2<bool>) -> Result<SegScore> {
    if map.dim() != mask.dim() {
        return Err(AttributionError::shape(
            "segmentation mask",
            &[map.nrows(), map.ncols()],
            &[mask.nrows(), mask.ncols()],
        ));
    }
    let ranking = ranked_pixels_desc(map)?; // also rejects non-finite maps
    let total = map.len();
    if total == 0 {
        return Err(AttributionError::InvalidArgument(
            "segmentation needs a non-empty map".into(),
        ));
    }
    let mean = map.iter().sum::<f64>() / total as f64;

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let mut tn = 0usize;
    for (pred, &truth) in map.iter().map(|&v| v >= mean).zip(mask.iter()) {
        match (pred, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let positives = tp + fn_;
    let pa = (tp + tn) as f64 / total as f64;
    let (iou, f1, ap);
    if positives == 0 {
        // No foreground to find: perfect if nothing was predicted, else zero.
        let clean = tp + fp == 0;
        iou = if clean { 1.0 } else { 0.0 };
        f1 = iou;
        ap = iou;
    } else {
        iou = tp as f64 / (tp + fp + fn_) as f64;
        f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        // AP: walk pixels by descending relevance, averaging precision at
        // each ground-truth hit.
        let w = map.ncols();
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (seen, &pix) in ranking.iter().enumerate() {
            if mask[(pix / w, pix % w)] {
                hits += 1;
                precision_sum += hits as f64 / (seen + 1) as f64;
            }
        }
        ap = precision_sum / positives as f64;
    }
    Ok(SegScore { pa, ap, iou, f1 })
}

/// Field-wise mean of per-image scores.
pub fn aggregate_seg(scores: &[SegScore]) -> Result<SegScore> {
    if scores.is_empty() {
        return Err(AttributionError::InvalidArgument(
            "segmentation aggregation needs at least one score".into(),
        ));
    }
    let n = scores.len() as f64;
    Ok(SegScore {
        pa: scores.iter().map(|s| s.pa).sum::<f64>() / n,
        ap: scores.iter().map(|s| s.ap).sum::<f64>() / n,
        iou: scores.iter().map(|s| s.iou).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(seed: u64, h: usize, w: usize) -> (Array2<f64>, Array2<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..1.0));
        let mask = Array2::from_shape_fn((h, w), |_| rng.random_bool(0.4));
        (map, mask)
    }

    #[test]
    fn map_equal_to_mask_scores_perfectly() {
        let mask = Array2::from_shape_fn((5, 5), |(i, j)| (i + j) % 3 == 0);
        let map = mask.mapv(|b| if b { 1.0 } else { 0.0 });
        let s = segmentation_scores(&map, &mask).unwrap();
        assert_eq!(s.pa, 1.0);
        assert_eq!(s.iou, 1.0);
        assert_eq!(s.f1, 1.0);
        assert_eq!(s.ap, 1.0);
    }

    #[test]
    fn inverted_map_scores_zero_overlap() {
        let mask = Array2::from_shape_fn((4, 4), |(i, _)| i < 2);
        let map = mask.mapv(|b| if b { 0.0 } else { 1.0 });
        let s = segmentation_scores(&map, &mask).unwrap();
        assert_eq!(s.iou, 0.0);
        assert_eq!(s.f1, 0.0);
        assert_eq!(s.pa, 0.0);
    }

    #[test]
    fn random_8x8_matches_a_brute_force_confusion_oracle() {
        for seed in 0..20 {
            let (map, mask) = random_case(seed, 8, 8);
            let s = segmentation_scores(&map, &mask).unwrap();

            let mean = map.iter().sum::<f64>() / 64.0;
            let (mut tp, mut fp, mut fn_, mut tn) = (0f64, 0f64, 0f64, 0f64);
            for (p, &t) in map.iter().map(|&v| v >= mean).zip(mask.iter()) {
                match (p, t) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fn_ += 1.0,
                    (false, false) => tn += 1.0,
                }
            }
            assert!((s.pa - (tp + tn) / 64.0).abs() < 1e-15, "seed {seed}");
            assert!((s.iou - tp / (tp + fp + fn_)).abs() < 1e-15, "seed {seed}");
            assert!((s.f1 - 2.0 * tp / (2.0 * tp + fp + fn_)).abs() < 1e-15, "seed {seed}");

            // AP oracle: sort (value, raster) pairs descending and average
            // precision at every relevant pixel.
            let mut order: Vec<usize> = (0..64).collect();
            order.sort_by(|&a, &b| {
                map[(b / 8, b % 8)]
                    .partial_cmp(&map[(a / 8, a % 8)])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut hits = 0.0;
            let mut sum = 0.0;
            for (rank, &pix) in order.iter().enumerate() {
                if mask[(pix / 8, pix % 8)] {
                    hits += 1.0;
                    sum += hits / (rank + 1) as f64;
                }
            }
            let want_ap = sum / (tp + fn_);
            assert!((s.ap - want_ap).abs() < 1e-15, "seed {seed}");
        }
    }

    #[test]
    fn perfect_ranking_has_unit_ap_even_with_imperfect_threshold() {
        // Map values strictly ordered so that every mask pixel outranks every
        // background pixel; AP must be 1 regardless of the mean split.
        let mask = Array2::from_shape_fn((3, 3), |(i, j)| i * 3 + j < 2);
        let map = Array2::from_shape_fn((3, 3), |(i, j)| {
            if mask[(i, j)] {
                10.0 + (i * 3 + j) as f64
            } else {
                (i * 3 + j) as f64
            }
        });
        let s = segmentation_scores(&map, &mask).unwrap();
        assert_eq!(s.ap, 1.0);
    }

    #[test]
    fn empty_mask_gives_unit_scores_only_for_empty_predictions() {
        let mask = Array2::from_elem((3, 3), false);
        // A constant map thresholds entirely to foreground (v >= mean).
        let all_fg = Array2::from_elem((3, 3), 1.0);
        let s = segmentation_scores(&all_fg, &mask).unwrap();
        assert_eq!(s.iou, 0.0);
        assert_eq!(s.f1, 0.0);
        assert_eq!(s.pa, 0.0);
        assert_eq!(s.ap, 0.0);
    }

    #[test]
    fn aggregation_is_the_field_wise_mean() {
        let a = SegScore { pa: 1.0, ap: 0.5, iou: 0.25, f1: 0.0 };
        let b = SegScore { pa: 0.0, ap: 0.5, iou: 0.75, f1: 1.0 };
        let m = aggregate_seg(&[a, b]).unwrap();
        assert_eq!(m, SegScore { pa: 0.5, ap: 0.5, iou: 0.5, f1: 0.5 });
        assert!(aggregate_seg(&[]).is_err());
    }

    #[test]
    fn shape_and_finiteness_violations_are_rejected() {
        let map = Array2::zeros((3, 3));
        let mask = Array2::from_elem((3, 4), false);
        assert!(segmentation_scores(&map, &mask).is_err());
        let mut bad = Array2::zeros((3, 3));
        bad[(0, 0)] = f64::NAN;
        let mask = Array2::from_elem((3, 3), false);
        assert!(segmentation_scores(&bad, &mask).is_err());
    }
}

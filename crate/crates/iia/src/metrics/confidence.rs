//! Confidence drop and confidence increase statistics: how much class
//! probability is lost when the image is multiplied by its normalized
//! attribution map, and how often it goes up instead.

use iia_models::{Scalar, TapModel};
use ndarray::{Array2, ArrayD};

use crate::error::{AttributionError, Result};
use crate::tensor::softmax_f64;

/// Batch-aggregated confidence metrics, both on a 0–100 scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceScores {
    /// Average drop in class probability, `100 * mean(max(0, Y - O) / Y)`.
    pub adp: f64,
    /// Percentage of images whose class probability increased, `100 * mean(1[Y < O])`.
    pub pic: f64,
}

/// Core arithmetic over `(full, explained)` probability pairs.
pub fn adp_pic_from_pairs(pairs: &[(f64, f64)]) -> Result<ConfidenceScores> {
    if pairs.is_empty() {
        return Err(AttributionError::InvalidArgument(
            "confidence statistics need at least one image".into(),
        ));
    }
    let mut drop_sum = 0.0;
    let mut up_count = 0usize;
    for &(y, o) in pairs {
        if !(y.is_finite() && o.is_finite()) {
            return Err(AttributionError::Numeric(
                "confidence pair is not finite".into(),
            ));
        }
        if y <= 0.0 {
            return Err(AttributionError::Numeric(format!(
                "full-image probability {y} is not positive"
            )));
        }
        drop_sum += (y - o).max(0.0) / y;
        if y < o {
            up_count += 1;
        }
    }
    let n = pairs.len() as f64;
    Ok(ConfidenceScores {
        adp: 100.0 * drop_sum / n,
        pic: 100.0 * up_count as f64 / n,
    })
}

fn class_probability<T: Scalar, M: TapModel<T>>(
    model: &M,
    image: &ArrayD<T>,
    class_index: usize,
) -> Result<f64> {
    let mut run = model.begin(image.clone())?;
    let logits = model.finish(&mut run)?;
    Ok(softmax_f64(&logits)[class_index])
}

/// Multiply an image by its min-max-normalized map (a constant map keeps the
/// image intact) and return the explained-image probability pair.
fn probability_pair<T: Scalar, M: TapModel<T>>(
    model: &M,
    image: &ArrayD<T>,
    map: &Array2<f64>,
    class_index: usize,
) -> Result<(f64, f64)> {
    let meta = model.meta();
    let expected = [meta.in_channels, meta.input_hw.0, meta.input_hw.1];
    if image.shape() != expected {
        return Err(AttributionError::shape(
            "input image",
            &expected,
            image.shape(),
        ));
    }
    if map.dim() != meta.input_hw {
        return Err(AttributionError::shape(
            "attribution map",
            &[meta.input_hw.0, meta.input_hw.1],
            &[map.nrows(), map.ncols()],
        ));
    }
    if class_index >= meta.num_classes {
        return Err(AttributionError::InvalidArgument(format!(
            "class {class_index} out of range for {} classes",
            meta.num_classes
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in map.iter() {
        if !v.is_finite() {
            return Err(AttributionError::Numeric(
                "attribution map contains a non-finite value".into(),
            ));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    let mut explained = image.clone();
    if span > 0.0 {
        let (c, _h, w) = (expected[0], expected[1], expected[2]);
        for ((i, j), &v) in map.indexed_iter() {
            let scale = (v - lo) / span;
            for ch in 0..c {
                let _ = w;
                explained[[ch, i, j]] =
                    T::from_f64(Scalar::to_f64(image[[ch, i, j]]) * scale);
            }
        }
    }
    let y = class_probability(model, image, class_index)?;
    let o = class_probability(model, &explained, class_index)?;
    Ok((y, o))
}

/// Average drop percentage and percentage-increase-in-confidence over a batch
/// of `(image, map, class)` triples.
pub fn adp_pic<T: Scalar, M: TapModel<T>>(
    model: &M,
    batch: &[(ArrayD<T>, Array2<f64>, usize)],
) -> Result<ConfidenceScores> {
    let mut pairs = Vec::with_capacity(batch.len());
    for (image, map, class_index) in batch {
        pairs.push(probability_pair(model, image, map, *class_index)?);
    }
    adp_pic_from_pairs(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use iia_models::models::toy::toy_cnn;
    use ndarray::Array2 as NdArray2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pair_arithmetic_matches_hand_values() {
        // (0.8 -> 0.4): drop 50%, no increase; (0.5 -> 0.6): no drop, increase.
        let scores = adp_pic_from_pairs(&[(0.8, 0.4), (0.5, 0.6)]).unwrap();
        assert!((scores.adp - 25.0).abs() < 1e-12);
        assert!((scores.pic - 50.0).abs() < 1e-12);
    }

    #[test]
    fn unchanged_probability_counts_as_neither_drop_nor_increase() {
        let scores = adp_pic_from_pairs(&[(0.7, 0.7)]).unwrap();
        assert_eq!(scores.adp, 0.0);
        assert_eq!(scores.pic, 0.0);
    }

    #[test]
    fn invalid_pairs_are_rejected() {
        assert!(adp_pic_from_pairs(&[]).is_err());
        assert!(adp_pic_from_pairs(&[(0.0, 0.5)]).is_err());
        assert!(adp_pic_from_pairs(&[(-0.1, 0.5)]).is_err());
        assert!(adp_pic_from_pairs(&[(f64::NAN, 0.5)]).is_err());
    }

    #[test]
    fn constant_map_keeps_the_image_and_scores_zero_drop() {
        let model = toy_cnn::<f64>(23);
        let m = model.meta().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let x = ArrayD::from_shape_fn(
            ndarray::IxDyn(&[m.in_channels, m.input_hw.0, m.input_hw.1]),
            |_| rng.random_range(-1.0..1.0),
        );
        let map = NdArray2::from_elem(m.input_hw, 3.25);
        let scores = adp_pic(&model, &[(x, map, 0)]).unwrap();
        assert_eq!(scores.adp, 0.0);
        assert_eq!(scores.pic, 0.0);
    }

    #[test]
    fn masked_image_pair_matches_a_direct_forward_pass() {
        let model = toy_cnn::<f64>(29);
        let m = model.meta().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let x = ArrayD::from_shape_fn(
            ndarray::IxDyn(&[m.in_channels, m.input_hw.0, m.input_hw.1]),
            |_| rng.random_range(-1.0..1.0),
        );
        let map = NdArray2::from_shape_fn(m.input_hw, |_| rng.random_range(-2.0..5.0));
        let class = 3;
        let (y, o) = probability_pair(&model, &x, &map, class).unwrap();

        // Oracle: normalize the map by hand, multiply, and run the model.
        let lo = map.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut masked = x.clone();
        for ((i, j), &v) in map.indexed_iter() {
            for c in 0..m.in_channels {
                masked[[c, i, j]] = x[[c, i, j]] * ((v - lo) / (hi - lo));
            }
        }
        let prob = |img: &ArrayD<f64>| {
            let mut run = model.begin(img.clone()).unwrap();
            let logits = model.finish(&mut run).unwrap();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&v| (v - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps[class] / z
        };
        assert!((y - prob(&x)).abs() < 1e-12);
        assert!((o - prob(&masked)).abs() < 1e-12);
    }

    #[test]
    fn batch_aggregation_averages_per_image_pairs() {
        let model = toy_cnn::<f64>(31);
        let m = model.meta().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let mut batch = Vec::new();
        let mut pairs = Vec::new();
        for class in 0..3 {
            let x = ArrayD::from_shape_fn(
                ndarray::IxDyn(&[m.in_channels, m.input_hw.0, m.input_hw.1]),
                |_| rng.random_range(-1.0..1.0),
            );
            let map = NdArray2::from_shape_fn(m.input_hw, |_| rng.random_range(-1.0..1.0));
            pairs.push(probability_pair(&model, &x, &map, class).unwrap());
            batch.push((x, map, class));
        }
        let got = adp_pic(&model, &batch).unwrap();
        let want = adp_pic_from_pairs(&pairs).unwrap();
        assert_eq!(got, want);
    }
}

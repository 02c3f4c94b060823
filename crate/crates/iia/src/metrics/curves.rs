//! Relevance-ordered masking curves: POS/NEG perturbation over 10–90%
//! erasure, and insertion/deletion over the full 0–100% range.

use iia_models::{Scalar, TapModel};
use ndarray::{Array2, ArrayD};

use crate::error::{AttributionError, Result};
use crate::tensor::softmax_f64;

use super::ranked_pixels_desc;

/// A fraction-indexed score curve plus its normalized trapezoidal area.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricCurve {
    pub fractions: Vec<f64>,
    pub scores: Vec<f64>,
    pub auc: f64,
}

/// POS masks the most relevant pixels first; NEG the least relevant first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbOrder {
    Pos,
    Neg,
}

impl PerturbOrder {
    pub fn name(&self) -> &'static str {
        match self {
            PerturbOrder::Pos => "pos",
            PerturbOrder::Neg => "neg",
        }
    }
}

/// What the curve records at each masking step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreKind {
    /// Raw class logit.
    #[default]
    Logit,
    /// Post-softmax class probability.
    Probability,
}

/// Deletion removes most-relevant-first from the full image; insertion
/// reveals most-relevant-first onto an all-zero image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsDel {
    Insertion,
    Deletion,
}

/// Trapezoidal area under `scores` over `fractions`, normalized by the
/// fraction span so a constant curve integrates to that constant.
pub fn auc(fractions: &[f64], scores: &[f64]) -> Result<f64> {
    if fractions.len() != scores.len() {
        return Err(AttributionError::InvalidArgument(format!(
            "curve has {} fractions but {} scores",
            fractions.len(),
            scores.len()
        )));
    }
    if fractions.len() < 2 {
        return Err(AttributionError::InvalidArgument(
            "area under a curve needs at least two points".into(),
        ));
    }
    for pair in fractions.windows(2) {
        if pair[1] < pair[0] {
            return Err(AttributionError::InvalidArgument(
                "curve fractions must be ascending".into(),
            ));
        }
    }
    let span = fractions[fractions.len() - 1] - fractions[0];
    if span <= 0.0 {
        return Err(AttributionError::InvalidArgument(
            "curve fractions must span a positive range".into(),
        ));
    }
    let mut area = 0.0;
    for i in 0..fractions.len() - 1 {
        area += 0.5 * (scores[i] + scores[i + 1]) * (fractions[i + 1] - fractions[i]);
    }
    Ok(area / span)
}

/// The deterministic pixel visit order for a masking run: descending
/// relevance for POS, exactly reversed for NEG.
pub fn masking_order(map: &Array2<f64>, order: PerturbOrder) -> Result<Vec<usize>> {
    let mut idx = ranked_pixels_desc(map)?;
    if order == PerturbOrder::Neg {
        idx.reverse();
    }
    Ok(idx)
}

fn check_geometry<T: Scalar, M: TapModel<T>>(
    model: &M,
    image: &ArrayD<T>,
    map: &Array2<f64>,
    class_index: usize,
) -> Result<(usize, usize, usize)> {
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
    Ok((meta.in_channels, meta.input_hw.0, meta.input_hw.1))
}

fn model_score<T: Scalar, M: TapModel<T>>(
    model: &M,
    image: &ArrayD<T>,
    class_index: usize,
    kind: ScoreKind,
) -> Result<f64> {
    let mut run = model.begin(image.clone())?;
    let logits = model.finish(&mut run)?;
    Ok(match kind {
        ScoreKind::Logit => Scalar::to_f64(logits[class_index]),
        ScoreKind::Probability => softmax_f64(&logits)[class_index],
    })
}

/// Score the class while masking a growing fraction of pixels to zero in
/// relevance order. Fractions run 0.1 through 0.9; the pixel count at each
/// step is `round(fraction * pixels)`.
pub fn perturbation_curve<T: Scalar, M: TapModel<T>>(
    model: &M,
    image: &ArrayD<T>,
    map: &Array2<f64>,
    class_index: usize,
    order: PerturbOrder,
    kind: ScoreKind,
) -> Result<MetricCurve> {
    let (c, h, w) = check_geometry(model, image, map, class_index)?;
    let ranking = masking_order(map, order)?;
    let total = h * w;
    let fractions: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();

    let mut cur = image.clone();
    let mut masked = 0usize;
    let mut scores = Vec::with_capacity(fractions.len());
    for &f in &fractions {
        let k = ((f * total as f64).round() as usize).min(total);
        while masked < k {
            let pix = ranking[masked];
            let (i, j) = (pix / w, pix % w);
            for ch in 0..c {
                cur[[ch, i, j]] = T::zero();
            }
            masked += 1;
        }
        scores.push(model_score(model, &cur, class_index, kind)?);
    }
    let area = auc(&fractions, &scores)?;
    Ok(MetricCurve {
        fractions,
        scores,
        auc: area,
    })
}

/// Probability-of-class curve while deleting from (or inserting onto) the
/// image in relevance order, over fractions 0.0 through 1.0.
pub fn insertion_deletion<T: Scalar, M: TapModel<T>>(
    model: &M,
    image: &ArrayD<T>,
    map: &Array2<f64>,
    class_index: usize,
    mode: InsDel,
) -> Result<MetricCurve> {
    let (c, h, w) = check_geometry(model, image, map, class_index)?;
    let ranking = ranked_pixels_desc(map)?;
    let total = h * w;
    let fractions: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();

    let mut cur = match mode {
        InsDel::Deletion => image.clone(),
        InsDel::Insertion => ArrayD::zeros(image.raw_dim()),
    };
    let mut touched = 0usize;
    let mut scores = Vec::with_capacity(fractions.len());
    for &f in &fractions {
        let k = ((f * total as f64).round() as usize).min(total);
        while touched < k {
            let pix = ranking[touched];
            let (i, j) = (pix / w, pix % w);
            for ch in 0..c {
                cur[[ch, i, j]] = match mode {
                    InsDel::Deletion => T::zero(),
                    InsDel::Insertion => image[[ch, i, j]],
                };
            }
            touched += 1;
        }
        scores.push(model_score(model, &cur, class_index, ScoreKind::Probability)?);
    }
    let area = auc(&fractions, &scores)?;
    Ok(MetricCurve {
        fractions,
        scores,
        auc: area,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use iia_models::instrument::{ArchKind, ModelMeta, Preproc};
    use iia_models::layers::{Conv2d, Layer, Linear};
    use iia_models::models::toy::toy_cnn;
    use iia_models::models::{CnnHead, StagedCnn};
    use ndarray::{Array1, Array2 as NdArray2, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded_image(seed: u64, c: usize, h: usize, w: usize) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(ndarray::IxDyn(&[c, h, w]), |_| rng.random_range(-1.0..1.0))
    }

    fn meta(id: &str, hw: (usize, usize), cin: usize, classes: usize) -> ModelMeta {
        ModelMeta {
            id: id.into(),
            arch: ArchKind::Cnn,
            layer_count: 1,
            input_hw: hw,
            in_channels: cin,
            num_classes: classes,
            token_grid: None,
            heads: None,
            preproc: Preproc::unit(cin),
        }
    }

    /// Zero conv weights make the features, and hence the logits, independent
    /// of the input: the head bias is the whole output.
    fn constant_model(bias: Vec<f64>) -> StagedCnn<f64> {
        let classes = bias.len();
        let stage = vec![Layer::Conv(Conv2d::new(
            Array4::zeros((2, 1, 1, 1)),
            None,
            (1, 1),
            (0, 0),
            1,
        ))];
        StagedCnn {
            meta: meta("const_logits", (3, 3), 1, classes),
            stages: vec![stage],
            head: CnnHead::GapLinear {
                fc: Linear::new(NdArray2::zeros((classes, 2)), Some(Array1::from_vec(bias))),
            },
        }
    }

    fn linear_3x3() -> StagedCnn<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let w = Array4::from_shape_fn((2, 1, 1, 1), |_| rng.random_range(-1.0..1.0));
        let stage = vec![Layer::Conv(Conv2d::new(w, None, (1, 1), (0, 0), 1))];
        let fc_w = NdArray2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
        StagedCnn {
            meta: meta("linear_3x3", (3, 3), 1, 3),
            stages: vec![stage],
            head: CnnHead::GapLinear {
                fc: Linear::new(fc_w, Some(Array1::zeros(3))),
            },
        }
    }

    #[test]
    fn auc_of_a_constant_curve_is_that_constant() {
        let f = [0.0, 0.25, 1.0];
        assert_eq!(auc(&f, &[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.5);
    }

    #[test]
    fn auc_matches_a_per_segment_midpoint_oracle() {
        // Midpoint sums are exact on each linear segment, so a fine midpoint
        // evaluation of the piecewise-linear interpolant reproduces the
        // trapezoid value.
        let fractions = [0.05, 0.2, 0.45, 0.7, 1.0];
        let scores = [0.3, -0.8, 1.9, 0.2, 0.6];
        let got = auc(&fractions, &scores).unwrap();
        let mut total = 0.0;
        let m = 1000;
        for i in 0..fractions.len() - 1 {
            let (x0, x1) = (fractions[i], fractions[i + 1]);
            let (y0, y1) = (scores[i], scores[i + 1]);
            let dx = (x1 - x0) / m as f64;
            for j in 0..m {
                let xm = x0 + (j as f64 + 0.5) * dx;
                let t = (xm - x0) / (x1 - x0);
                total += (y0 + t * (y1 - y0)) * dx;
            }
        }
        let oracle = total / (fractions[4] - fractions[0]);
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }

    #[test]
    fn auc_rejects_degenerate_inputs() {
        assert!(auc(&[0.5], &[1.0]).is_err());
        assert!(auc(&[0.2, 0.1], &[1.0, 1.0]).is_err());
        assert!(auc(&[0.5, 0.5], &[1.0, 1.0]).is_err());
        assert!(auc(&[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn constant_model_gives_flat_curves_with_known_auc() {
        let model = constant_model(vec![0.4, 1.3]);
        let x = seeded_image(51, 1, 3, 3);
        let map = NdArray2::from_shape_fn((3, 3), |(i, j)| (i * 3 + j) as f64);
        let pos = perturbation_curve(&model, &x, &map, 1, PerturbOrder::Pos, ScoreKind::Logit)
            .unwrap();
        assert!(pos.scores.iter().all(|&s| s == 1.3));
        assert_eq!(pos.auc, 1.3);

        let del = insertion_deletion(&model, &x, &map, 1, InsDel::Deletion).unwrap();
        let ins = insertion_deletion(&model, &x, &map, 1, InsDel::Insertion).unwrap();
        let p = (1.3f64 - 0.4).exp() / (1.0 + (1.3f64 - 0.4).exp());
        assert!((del.auc - ins.auc).abs() < 1e-15);
        assert!((del.auc - p).abs() < 1e-12);
    }

    #[test]
    fn single_hot_pixel_matches_the_masking_sequence_oracle() {
        let model = toy_cnn::<f64>(17);
        let m = model.meta().clone();
        let x = seeded_image(52, m.in_channels, m.input_hw.0, m.input_hw.1);
        let mut map = NdArray2::zeros(m.input_hw);
        map[(5, 7)] = 10.0;
        let curve =
            perturbation_curve(&model, &x, &map, 2, PerturbOrder::Pos, ScoreKind::Logit).unwrap();

        // Independent masking order: the hot pixel first, everything else in
        // raster order.
        let (h, w) = m.input_hw;
        let hot = 5 * w + 7;
        let mut order = vec![hot];
        order.extend((0..h * w).filter(|&p| p != hot));
        let mut oracle_scores = Vec::new();
        for step in 1..=9 {
            let k = ((step as f64 / 10.0) * (h * w) as f64).round() as usize;
            let mut masked = x.clone();
            for &pix in order.iter().take(k) {
                for c in 0..m.in_channels {
                    masked[[c, pix / w, pix % w]] = 0.0;
                }
            }
            let mut run = model.begin(masked).unwrap();
            let logits = model.finish(&mut run).unwrap();
            oracle_scores.push(logits[2]);
        }
        assert_eq!(curve.scores, oracle_scores);
    }

    #[test]
    fn neg_visits_pixels_in_exactly_reversed_pos_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let map = NdArray2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
        let pos = masking_order(&map, PerturbOrder::Pos).unwrap();
        let neg = masking_order(&map, PerturbOrder::Neg).unwrap();
        let mut reversed = pos.clone();
        reversed.reverse();
        assert_eq!(neg, reversed);

        // Same property under heavy ties.
        let flat = NdArray2::ones((3, 3));
        let pos = masking_order(&flat, PerturbOrder::Pos).unwrap();
        let neg = masking_order(&flat, PerturbOrder::Neg).unwrap();
        assert_eq!(pos, (0..9).collect::<Vec<_>>());
        assert_eq!(neg, (0..9).rev().collect::<Vec<_>>());
    }

    #[test]
    fn insertion_deletion_matches_exhaustive_enumeration_on_3x3() {
        let model = linear_3x3();
        let x = seeded_image(54, 1, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let map = NdArray2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        for (mode, from_image) in [(InsDel::Deletion, true), (InsDel::Insertion, false)] {
            let curve = insertion_deletion(&model, &x, &map, 0, mode).unwrap();
            let order = ranked_pixels_desc(&map).unwrap();
            let mut oracle = Vec::new();
            for step in 0..=10 {
                let k = ((step as f64 / 10.0) * 9.0).round() as usize;
                let mut img = if from_image {
                    x.clone()
                } else {
                    ArrayD::zeros(x.raw_dim())
                };
                for &pix in order.iter().take(k) {
                    img[[0, pix / 3, pix % 3]] = if from_image { 0.0 } else { x[[0, pix / 3, pix % 3]] };
                }
                let mut run = model.begin(img).unwrap();
                let logits = model.finish(&mut run).unwrap();
                let exps: Vec<f64> = logits.iter().map(|&v| v.exp()).collect();
                let z: f64 = exps.iter().sum();
                oracle.push(exps[0] / z);
            }
            let err = curve
                .scores
                .iter()
                .zip(oracle.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(err < 1e-12, "{mode:?}: oracle deviates by {err}");
            let oracle_auc = auc(&curve.fractions, &oracle).unwrap();
            assert!((curve.auc - oracle_auc).abs() < 1e-12);
        }
    }

    #[test]
    fn curves_depend_only_on_pixel_ranks() {
        let model = toy_cnn::<f64>(19);
        let m = model.meta().clone();
        let x = seeded_image(56, m.in_channels, m.input_hw.0, m.input_hw.1);
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let map = NdArray2::from_shape_fn(m.input_hw, |_| rng.random_range(-1.0..1.0));
        let cubed = map.mapv(|v| v * v * v);

        for order in [PerturbOrder::Pos, PerturbOrder::Neg] {
            let a = perturbation_curve(&model, &x, &map, 1, order, ScoreKind::Logit).unwrap();
            let b = perturbation_curve(&model, &x, &cubed, 1, order, ScoreKind::Logit).unwrap();
            assert_eq!(a, b, "{order:?} curve changed under a monotone transform");
        }
        for mode in [InsDel::Insertion, InsDel::Deletion] {
            let a = insertion_deletion(&model, &x, &map, 1, mode).unwrap();
            let b = insertion_deletion(&model, &x, &cubed, 1, mode).unwrap();
            assert_eq!(a, b, "{mode:?} curve changed under a monotone transform");
        }
    }

    #[test]
    fn geometry_violations_are_rejected() {
        let model = constant_model(vec![0.0, 1.0]);
        let x = seeded_image(58, 1, 3, 3);
        let bad_map = NdArray2::zeros((2, 3));
        assert!(perturbation_curve(&model, &x, &bad_map, 0, PerturbOrder::Pos, ScoreKind::Logit)
            .is_err());
        let map = NdArray2::zeros((3, 3));
        assert!(perturbation_curve(&model, &x, &map, 9, PerturbOrder::Pos, ScoreKind::Logit)
            .is_err());
        let bad_x = seeded_image(59, 1, 4, 4);
        assert!(insertion_deletion(&model, &bad_x, &map, 0, InsDel::Deletion).is_err());
    }
}

//! Information curves: progressively sharpen the most relevant regions of a
//! Gaussian-blurred image and score the model against an information axis
//! measured as losslessly-compressed image size.

use iia_models::{Scalar, TapModel};
use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};
use ndarray::{Array2, ArrayD};

use crate::error::{AttributionError, Result};
use crate::tensor::{argmax, softmax_f64};

use super::curves::auc;
use super::ranked_pixels_desc;

/// Batch-aggregated information-curve areas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoScores {
    /// Area under softmax-probability vs normalized information.
    pub sic: f64,
    /// Area under argmax-accuracy vs normalized information.
    pub aic: f64,
}

fn kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur per channel with clamp-to-edge boundary handling.
/// `sigma <= 0` returns the image unchanged.
pub fn gaussian_blur<T: Scalar>(image: &ArrayD<T>, sigma: f64) -> Result<ArrayD<T>> {
    if image.ndim() != 3 {
        return Err(AttributionError::InvalidArgument(format!(
            "blur expects a (channels, height, width) image, got {} axes",
            image.ndim()
        )));
    }
    if !sigma.is_finite() {
        return Err(AttributionError::InvalidArgument(
            "blur sigma must be finite".into(),
        ));
    }
    let k = kernel(sigma);
    let radius = (k.len() / 2) as i64;
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut rows = vec![0.0f64; c * h * w];
    let at = |ch: usize, i: usize, j: usize| Scalar::to_f64(image[[ch, i, j]]);
    // Horizontal pass with clamped column indices.
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for (t, &kv) in k.iter().enumerate() {
                    let jj = (j as i64 + t as i64 - radius).clamp(0, w as i64 - 1) as usize;
                    acc += kv * at(ch, i, jj);
                }
                rows[(ch * h + i) * w + j] = acc;
            }
        }
    }
    // Vertical pass over the horizontally-blurred rows.
    let mut out = image.clone();
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for (t, &kv) in k.iter().enumerate() {
                    let ii = (i as i64 + t as i64 - radius).clamp(0, h as i64 - 1) as usize;
                    acc += kv * rows[(ch * h + ii) * w + j];
                }
                out[[ch, i, j]] = T::from_f64(acc);
            }
        }
    }
    Ok(out)
}

/// Undo preprocessing, quantize to 8-bit, and return the image's losslessly
/// compressed byte count as an entropy proxy.
fn compressed_bytes<T: Scalar>(
    image: &ArrayD<T>,
    mean: &[f64],
    std: &[f64],
) -> Result<usize> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if mean.len() != c || std.len() != c {
        return Err(AttributionError::InvalidArgument(format!(
            "preprocessing stats cover {} channels but the image has {c}",
            mean.len()
        )));
    }
    let mut pixels = Vec::with_capacity(c * h * w);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                let v = Scalar::to_f64(image[[ch, i, j]]) * std[ch] + mean[ch];
                pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let color = match c {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        _ => {
            return Err(AttributionError::InvalidArgument(format!(
                "entropy proxy supports 1- or 3-channel images, got {c}"
            )))
        }
    };
    let mut buf = Vec::new();
    PngEncoder::new_with_quality(&mut buf, CompressionType::Default, FilterType::Adaptive)
        .write_image(&pixels, w as u32, h as u32, color)?;
    Ok(buf.len())
}

/// One image's (information, probability) and (information, accuracy) curves.
/// Points are sorted by the information coordinate; information is the
/// blended image's compressed size relative to the clean image's.
pub fn information_curves<T: Scalar, M: TapModel<T>>(
    model: &M,
    image: &ArrayD<T>,
    map: &Array2<f64>,
    class_index: usize,
    blur_sigma_max: f64,
    steps: usize,
) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    if steps < 2 {
        return Err(AttributionError::InvalidArgument(
            "information curves need at least two steps".into(),
        ));
    }
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
    let base = gaussian_blur(image, blur_sigma_max)?;
    let ranking = ranked_pixels_desc(map)?;
    let (c, h, w) = (expected[0], expected[1], expected[2]);
    let total = h * w;
    let clean_bytes = compressed_bytes(image, &meta.preproc.mean, &meta.preproc.std)? as f64;

    let mut cur = base.clone();
    let mut revealed = 0usize;
    let mut sic_points = Vec::with_capacity(steps);
    let mut aic_points = Vec::with_capacity(steps);
    for s in 0..steps {
        let f = s as f64 / (steps - 1) as f64;
        let k = ((f * total as f64).round() as usize).min(total);
        while revealed < k {
            let pix = ranking[revealed];
            let (i, j) = (pix / w, pix % w);
            for ch in 0..c {
                cur[[ch, i, j]] = image[[ch, i, j]];
            }
            revealed += 1;
        }
        let info =
            compressed_bytes(&cur, &meta.preproc.mean, &meta.preproc.std)? as f64 / clean_bytes;
        let mut run = model.begin(cur.clone())?;
        let logits = model.finish(&mut run)?;
        let probs = softmax_f64(&logits);
        sic_points.push((info, probs[class_index]));
        aic_points.push((info, if argmax(&probs) == class_index { 1.0 } else { 0.0 }));
    }
    sic_points.sort_by(|a, b| a.0.total_cmp(&b.0));
    aic_points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok((sic_points, aic_points))
}

fn curve_area(points: &[(f64, f64)]) -> Result<f64> {
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let span = xs[xs.len() - 1] - xs[0];
    if span <= 0.0 {
        // A flat information axis (e.g. sigma 0 reveals nothing new):
        // the curve is a point mass, so report its average score.
        return Ok(ys.iter().sum::<f64>() / ys.len() as f64);
    }
    auc(&xs, &ys)
}

/// Batch softmax-information and accuracy-information areas, averaged over
/// `(image, map, class)` triples.
pub fn sic_aic<T: Scalar, M: TapModel<T>>(
    model: &M,
    batch: &[(ArrayD<T>, Array2<f64>, usize)],
    blur_sigma_max: f64,
    steps: usize,
) -> Result<InfoScores> {
    if batch.is_empty() {
        return Err(AttributionError::InvalidArgument(
            "information scores need at least one image".into(),
        ));
    }
    let mut sic_sum = 0.0;
    let mut aic_sum = 0.0;
    for (image, map, class_index) in batch {
        let (sic_curve, aic_curve) =
            information_curves(model, image, map, *class_index, blur_sigma_max, steps)?;
        sic_sum += curve_area(&sic_curve)?;
        aic_sum += curve_area(&aic_curve)?;
    }
    let n = batch.len() as f64;
    Ok(InfoScores {
        sic: sic_sum / n,
        aic: aic_sum / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use iia_models::models::toy::toy_cnn;
    use ndarray::{Array2 as NdArray2, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, c: usize, h: usize, w: usize) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(&[c, h, w]), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn blur_keeps_constant_images_constant() {
        let x = ArrayD::from_elem(IxDyn(&[2, 9, 9]), 0.7f64);
        let b = gaussian_blur(&x, 2.5).unwrap();
        for &v in b.iter() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_of_an_interior_impulse_matches_the_kernel_outer_product() {
        let mut x = ArrayD::from_elem(IxDyn(&[1, 15, 15]), 0.0f64);
        x[[0, 7, 7]] = 1.0;
        let sigma = 1.25;
        let b = gaussian_blur(&x, sigma).unwrap();
        let k = kernel(sigma);
        let radius = (k.len() / 2) as i64;
        for i in 0..15i64 {
            for j in 0..15i64 {
                let di = i - 7;
                let dj = j - 7;
                let want = if di.abs() <= radius && dj.abs() <= radius {
                    k[(di + radius) as usize] * k[(dj + radius) as usize]
                } else {
                    0.0
                };
                let got = b[[0, i as usize, j as usize]];
                assert!((got - want).abs() < 1e-12, "({i},{j}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn separable_blur_matches_a_dense_2d_convolution() {
        let x = random_image(81, 1, 8, 8);
        let sigma = 1.0;
        let b = gaussian_blur(&x, sigma).unwrap();
        let k = kernel(sigma);
        let radius = (k.len() / 2) as i64;
        for i in 0..8i64 {
            for j in 0..8i64 {
                let mut acc = 0.0;
                for (ti, &ki) in k.iter().enumerate() {
                    for (tj, &kj) in k.iter().enumerate() {
                        let ii = (i + ti as i64 - radius).clamp(0, 7) as usize;
                        let jj = (j + tj as i64 - radius).clamp(0, 7) as usize;
                        acc += ki * kj * x[[0, ii, jj]];
                    }
                }
                let got = b[[0, i as usize, j as usize]];
                assert!((got - acc).abs() < 1e-12, "({i},{j}): {got} vs {acc}");
            }
        }
    }

    #[test]
    fn zero_sigma_gives_a_flat_curve_at_the_clean_score() {
        let model = toy_cnn::<f64>(37);
        let m = model.meta().clone();
        let x = random_image(82, m.in_channels, m.input_hw.0, m.input_hw.1);
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let map = NdArray2::from_shape_fn(m.input_hw, |_| rng.random_range(-1.0..1.0));

        let mut run = model.begin(x.clone()).unwrap();
        let logits = model.finish(&mut run).unwrap();
        let probs = softmax_f64(&logits);
        let clean = probs[1];
        let clean_top = argmax(&probs) == 1;

        let (sic_curve, aic_curve) =
            information_curves(&model, &x, &map, 1, 0.0, 4).unwrap();
        for &(xi, yi) in &sic_curve {
            assert!((xi - 1.0).abs() < 1e-12);
            assert!((yi - clean).abs() < 1e-12);
        }
        let scores = sic_aic(&model, &[(x, map, 1)], 0.0, 4).unwrap();
        assert!((scores.sic - clean).abs() < 1e-12);
        assert_eq!(scores.aic, if clean_top { 1.0 } else { 0.0 });
        assert_eq!(aic_curve.len(), 4);
    }

    #[test]
    fn two_step_curve_matches_a_hand_computed_trapezoid() {
        let model = toy_cnn::<f64>(41);
        let m = model.meta().clone();
        let x = random_image(84, m.in_channels, m.input_hw.0, m.input_hw.1);
        let mut rng = ChaCha8Rng::seed_from_u64(85);
        let map = NdArray2::from_shape_fn(m.input_hw, |_| rng.random_range(-1.0..1.0));
        let sigma = 4.0;

        // Two steps: fully blurred, then fully revealed.
        let base = gaussian_blur(&x, sigma).unwrap();
        let prob = |img: &ArrayD<f64>| {
            let mut run = model.begin(img.clone()).unwrap();
            softmax_f64(&model.finish(&mut run).unwrap())[2]
        };
        let y0 = prob(&base);
        let y1 = prob(&x);
        let bytes = |img: &ArrayD<f64>| {
            compressed_bytes(img, &m.preproc.mean, &m.preproc.std).unwrap() as f64
        };
        let x1 = bytes(&x);
        let x0 = bytes(&base) / x1;
        // Points sorted by information; blurred images compress smaller.
        assert!(x0 < 1.0, "blurred image should carry less information");
        let want = 0.5 * (y0 + y1); // trapezoid over [x0, 1] divided by span

        let scores = sic_aic(&model, &[(x.clone(), map.clone(), 2)], sigma, 2).unwrap();
        assert!((scores.sic - want).abs() < 1e-12, "{} vs {want}", scores.sic);

        let (sic_curve, _) = information_curves(&model, &x, &map, 2, sigma, 2).unwrap();
        assert_eq!(sic_curve.len(), 2);
        assert!((sic_curve[0].0 - x0).abs() < 1e-12);
        assert!((sic_curve[1].0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn final_step_always_reaches_the_clean_image() {
        let model = toy_cnn::<f64>(43);
        let m = model.meta().clone();
        let x = random_image(86, m.in_channels, m.input_hw.0, m.input_hw.1);
        let mut rng = ChaCha8Rng::seed_from_u64(87);
        let map = NdArray2::from_shape_fn(m.input_hw, |_| rng.random_range(-1.0..1.0));
        let mut run = model.begin(x.clone()).unwrap();
        let clean = softmax_f64(&model.finish(&mut run).unwrap())[0];
        let (sic_curve, _) = information_curves(&model, &x, &map, 0, 6.0, 5).unwrap();
        let last = sic_curve.last().unwrap();
        assert!((last.0 - 1.0).abs() < 1e-12);
        assert!((last.1 - clean).abs() < 1e-12);
    }

    #[test]
    fn degenerate_requests_are_rejected() {
        let model = toy_cnn::<f64>(47);
        let m = model.meta().clone();
        let x = random_image(88, m.in_channels, m.input_hw.0, m.input_hw.1);
        let map = NdArray2::zeros(m.input_hw);
        assert!(information_curves(&model, &x, &map, 0, 4.0, 1).is_err());
        assert!(information_curves(&model, &x, &map, m.num_classes, 4.0, 2).is_err());
        assert!(sic_aic::<f64, _>(&model, &[], 4.0, 2).is_err());
        assert!(gaussian_blur(&x, f64::NAN).is_err());
    }
}

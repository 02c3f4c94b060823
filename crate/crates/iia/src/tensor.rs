//! Small tensor conversions shared across the crate.

use iia_models::Scalar;
use ndarray::{Array1, Array3, ArrayD, Ix3};

use crate::error::{AttributionError, Result};

pub fn to_f64<T: Scalar>(a: &ArrayD<T>) -> ArrayD<f64> {
    a.mapv(|v| Scalar::to_f64(v))
}

pub fn to_f64_3<T: Scalar>(a: &ArrayD<T>) -> Result<Array3<f64>> {
    to_f64(a)
        .into_dimensionality::<Ix3>()
        .map_err(|_| AttributionError::InvalidArgument("expected a 3D tensor".into()))
}

/// Index of the largest logit, first on ties.
pub fn argmax<T: Scalar>(logits: &Array1<T>) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax in double precision.
pub fn softmax_f64<T: Scalar>(logits: &Array1<T>) -> Array1<f64> {
    let vals: Vec<f64> = logits.iter().map(|&v| Scalar::to_f64(v)).collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = vals.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Array1::from_vec(exps.into_iter().map(|e| e / sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn argmax_breaks_ties_toward_the_first_index() {
        assert_eq!(argmax(&array![1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&array![5.0f32]), 0);
    }

    #[test]
    fn softmax_sums_to_one_and_orders_like_the_logits() {
        let p = softmax_f64(&array![1.0, 2.0, 4.0]);
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(p[2] > p[1] && p[1] > p[0]);
    }
}

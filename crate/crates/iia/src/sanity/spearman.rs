//! Spearman rank correlation between two attribution maps, with average
//! ranks on ties and an explicit flag for degenerate (constant) inputs.

use ndarray::Array2;

use crate::error::{AttributionError, Result};

/// Rank correlation with a degeneracy marker. A constant map has no ranking,
/// so the correlation is reported as 0 with `degenerate` set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpearmanRho {
    pub rho: f64,
    pub degenerate: bool,
}

/// 1-based ranks with tied values assigned the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && values[idx[end + 1]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &i in &idx[start..=end] {
            ranks[i] = rank;
        }
        start = end + 1;
    }
    ranks
}

/// Pearson correlation of the rank vectors of two equal-shape maps.
pub fn spearman(map_a: &Array2<f64>, map_b: &Array2<f64>) -> Result<SpearmanRho> {
    if map_a.dim() != map_b.dim() {
        return Err(AttributionError::shape(
            "spearman operands",
            &[map_a.nrows(), map_a.ncols()],
            &[map_b.nrows(), map_b.ncols()],
        ));
    }
    let n = map_a.len();
    if n < 2 {
        return Err(AttributionError::InvalidArgument(
            "rank correlation needs at least two pixels".into(),
        ));
    }
    for &v in map_a.iter().chain(map_b.iter()) {
        if !v.is_finite() {
            return Err(AttributionError::Numeric(
                "rank correlation input contains a non-finite value".into(),
            ));
        }
    }
    let a: Vec<f64> = map_a.iter().cloned().collect();
    let b: Vec<f64> = map_b.iter().cloned().collect();
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(&a) || constant(&b) {
        return Ok(SpearmanRho {
            rho: 0.0,
            degenerate: true,
        });
    }
    let ra = average_ranks(&a);
    let rb = average_ranks(&b);
    // Exact endpoints: identical rankings, and exactly reversed rankings
    // (with average ranks, reversal means the ranks sum to n + 1 everywhere).
    if ra == rb {
        return Ok(SpearmanRho {
            rho: 1.0,
            degenerate: false,
        });
    }
    let flip = (n + 1) as f64;
    if ra.iter().zip(rb.iter()).all(|(&x, &y)| x + y == flip) {
        return Ok(SpearmanRho {
            rho: -1.0,
            degenerate: false,
        });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&ra), mean(&rb));
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..n {
        let da = ra[i] - ma;
        let db = rb[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    Ok(SpearmanRho {
        rho: cov / (va * vb).sqrt(),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2 as NdArray2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(values: &[f64]) -> Array2<f64> {
        NdArray2::from_shape_vec((1, values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn identical_maps_correlate_exactly_one() {
        let a = row(&[0.3, -1.0, 2.0, 2.0, 0.0]);
        let s = spearman(&a, &a.clone()).unwrap();
        assert_eq!(s.rho, 1.0);
        assert!(!s.degenerate);
    }

    #[test]
    fn negated_maps_correlate_exactly_minus_one() {
        let a = row(&[1.0, 2.0, 3.0, 7.0]);
        let s = spearman(&a, &a.mapv(|v| -v)).unwrap();
        assert_eq!(s.rho, -1.0);

        // Ties flip onto ties, so the exact endpoint survives them.
        let t = row(&[1.0, 2.0, 2.0, 4.0]);
        let s = spearman(&t, &t.mapv(|v| -v)).unwrap();
        assert_eq!(s.rho, -1.0);
    }

    #[test]
    fn three_element_permutation_matches_the_hand_value() {
        let s = spearman(&row(&[1.0, 2.0, 3.0]), &row(&[3.0, 1.0, 2.0])).unwrap();
        assert!((s.rho - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn tied_pair_matches_the_hand_value() {
        // Ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4): 4.5 / sqrt(4.5 * 5).
        let s = spearman(&row(&[1.0, 2.0, 2.0, 4.0]), &row(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!((s.rho - 0.9486832980505138).abs() < 1e-15);
    }

    #[test]
    fn random_16_element_pairs_match_a_counting_rank_oracle() {
        // Independent oracle: ranks by counting smaller/equal values, then a
        // textbook Pearson evaluated in a second pass.
        let count_ranks = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|&x| {
                    let smaller = v.iter().filter(|&&y| y < x).count() as f64;
                    let equal = v.iter().filter(|&&y| y == x).count() as f64;
                    smaller + (equal + 1.0) / 2.0
                })
                .collect()
        };
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Mix continuous values and deliberate ties.
            let a: Vec<f64> = (0..16)
                .map(|_| (rng.random_range(-4i32..4) as f64) / 2.0)
                .collect();
            let b: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = spearman(&row(&a), &row(&b)).unwrap();

            let ra = count_ranks(&a);
            let rb = count_ranks(&b);
            let n = 16.0;
            let sa: f64 = ra.iter().sum();
            let sb: f64 = rb.iter().sum();
            let sab: f64 = ra.iter().zip(&rb).map(|(x, y)| x * y).sum();
            let saa: f64 = ra.iter().map(|x| x * x).sum();
            let sbb: f64 = rb.iter().map(|x| x * x).sum();
            let want = (n * sab - sa * sb)
                / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt());
            assert!(
                (got.rho - want).abs() < 1e-12,
                "seed {seed}: {} vs {want}",
                got.rho
            );
        }
    }

    #[test]
    fn constant_map_is_degenerate_zero() {
        let a = row(&[1.0, 2.0, 3.0]);
        let c = row(&[5.0, 5.0, 5.0]);
        for (x, y) in [(&a, &c), (&c, &a), (&c, &c)] {
            let s = spearman(x, y).unwrap();
            assert_eq!(s.rho, 0.0);
            assert!(s.degenerate);
        }
    }

    #[test]
    fn monotone_transforms_leave_rho_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = NdArray2::from_shape_fn((4, 4), |_| rng.random_range(-1.0..1.0));
        let b = NdArray2::from_shape_fn((4, 4), |_| rng.random_range(-1.0..1.0));
        let before = spearman(&a, &b).unwrap();
        let after = spearman(&a.mapv(|v| v * v * v), &b.mapv(f64::exp)).unwrap();
        assert_eq!(before.rho.to_bits(), after.rho.to_bits());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let a = row(&[1.0, 2.0]);
        assert!(spearman(&a, &row(&[1.0, 2.0, 3.0])).is_err());
        assert!(spearman(&row(&[1.0]), &row(&[2.0])).is_err());
        assert!(spearman(&a, &row(&[f64::NAN, 1.0])).is_err());
    }
}

//! Central finite-difference oracle used by gradient tests.
//!
//! Deliberately knows nothing about layers or tapes: it perturbs raw input
//! coordinates of a black-box closure and compares the quotient against a
//! claimed analytic gradient. Every backward implementation in this crate is
//! validated against this oracle, never against another backward pass.

use ndarray::ArrayD;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

/// Relative error of `analytic` against a central difference of `f`,
/// checked on `coords` randomly chosen coordinates of `x`.
///
/// Returns the worst relative error observed. `h` is the absolute step.
pub fn max_rel_err(
    f: &mut dyn FnMut(&ArrayD<f64>) -> f64,
    x: &ArrayD<f64>,
    analytic: &ArrayD<f64>,
    coords: usize,
    h: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    assert_eq!(x.shape(), analytic.shape(), "gradient shape must match input");
    let n = x.len();
    let picks = sample(rng, n, coords.min(n));
    let mut worst = 0.0f64;
    for flat in picks {
        let mut xp = x.clone();
        let mut xm = x.clone();
        {
            let sp = xp.as_slice_mut().expect("contiguous");
            sp[flat] += h;
            let sm = xm.as_slice_mut().expect("contiguous");
            sm[flat] -= h;
        }
        let fd = (f(&xp) - f(&xm)) / (2.0 * h);
        let an = analytic.as_slice().expect("contiguous")[flat];
        let scale = an.abs().max(fd.abs()).max(1e-8);
        let rel = (fd - an).abs() / scale;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

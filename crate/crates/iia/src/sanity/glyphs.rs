//! A synthetic ten-class digit-glyph dataset for desk-scale training: seven
//! segment strokes on a 32x32 canvas with positional jitter and pixel noise.

use iia_models::Scalar;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Labeled single-channel images.
#[derive(Debug, Clone)]
pub struct LabeledSet<T> {
    pub images: Vec<Array3<T>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<T> LabeledSet<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Train/test split of the glyph dataset.
#[derive(Debug, Clone)]
pub struct SplitData<T> {
    pub train: LabeledSet<T>,
    pub test: LabeledSet<T>,
}

const SIDE: usize = 32;

/// Segment order: top, top-right, bottom-right, bottom, bottom-left,
/// top-left, middle.
const DIGIT_SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],    // 0
    [false, true, true, false, false, false, false], // 1
    [true, true, false, true, true, false, true],   // 2
    [true, true, true, true, false, false, true],   // 3
    [false, true, true, false, false, true, true],  // 4
    [true, false, true, true, false, true, true],   // 5
    [true, false, true, true, true, true, true],    // 6
    [true, true, true, false, false, false, false], // 7
    [true, true, true, true, true, true, true],     // 8
    [true, true, true, true, false, true, true],    // 9
];

/// Inclusive-exclusive (row, col) boxes for each segment on the nominal
/// canvas, sized so a +-2 pixel jitter stays inside the border.
const SEGMENT_BOXES: [(usize, usize, usize, usize); 7] = [
    (6, 9, 10, 22),   // top
    (6, 17, 19, 22),  // top-right
    (15, 26, 19, 22), // bottom-right
    (23, 26, 10, 22), // bottom
    (15, 26, 10, 13), // bottom-left
    (6, 17, 10, 13),  // top-left
    (15, 18, 10, 22), // middle
];

fn render_digit<T: Scalar>(digit: usize, rng: &mut ChaCha8Rng) -> Array3<T> {
    let dy = rng.random_range(-2i64..=2);
    let dx = rng.random_range(-2i64..=2);
    let mut img = Array3::zeros((1, SIDE, SIDE));
    for (seg, &(r0, r1, c0, c1)) in SEGMENT_BOXES.iter().enumerate() {
        if !DIGIT_SEGMENTS[digit][seg] {
            continue;
        }
        for r in r0..r1 {
            for c in c0..c1 {
                let rr = (r as i64 + dy).clamp(0, SIDE as i64 - 1) as usize;
                let cc = (c as i64 + dx).clamp(0, SIDE as i64 - 1) as usize;
                img[[0, rr, cc]] = 1.0f64;
            }
        }
    }
    // Pixel noise keeps the task from being solvable by a lookup table.
    img.mapv(|v| {
        let noisy = v + 0.05 * iia_models::init::normal(rng);
        T::from_f64(noisy.clamp(0.0, 1.0))
    })
}

fn fill_set<T: Scalar>(per_class: usize, rng: &mut ChaCha8Rng) -> LabeledSet<T> {
    let mut images = Vec::with_capacity(per_class * 10);
    let mut labels = Vec::with_capacity(per_class * 10);
    for _ in 0..per_class {
        for digit in 0..10 {
            images.push(render_digit(digit, rng));
            labels.push(digit);
        }
    }
    // Shuffle so minibatches mix classes from the first epoch on.
    let mut order: Vec<usize> = (0..images.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let images = order.iter().map(|&i| images[i].clone()).collect();
    let labels = order.iter().map(|&i| labels[i]).collect();
    LabeledSet {
        images,
        labels,
        num_classes: 10,
    }
}

/// Deterministic glyph dataset: `train_per_class` and `test_per_class`
/// examples of each digit, rendered at 1x32x32.
pub fn glyph_dataset<T: Scalar>(
    seed: u64,
    train_per_class: usize,
    test_per_class: usize,
) -> SplitData<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SplitData {
        train: fill_set(train_per_class, &mut rng),
        test: fill_set(test_per_class, &mut rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seed_deterministic() {
        let a: SplitData<f64> = glyph_dataset(5, 3, 2);
        let b: SplitData<f64> = glyph_dataset(5, 3, 2);
        assert_eq!(a.train.labels, b.train.labels);
        assert_eq!(a.train.images, b.train.images);
        assert_eq!(a.test.images, b.test.images);

        let c: SplitData<f64> = glyph_dataset(6, 3, 2);
        assert_ne!(a.train.images, c.train.images);
    }

    #[test]
    fn sets_are_balanced_and_shaped() {
        let d: SplitData<f32> = glyph_dataset(7, 4, 2);
        assert_eq!(d.train.len(), 40);
        assert_eq!(d.test.len(), 20);
        for digit in 0..10 {
            assert_eq!(d.train.labels.iter().filter(|&&l| l == digit).count(), 4);
            assert_eq!(d.test.labels.iter().filter(|&&l| l == digit).count(), 2);
        }
        for img in &d.train.images {
            assert_eq!(img.dim(), (1, SIDE, SIDE));
            assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn different_digits_render_differently() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let imgs: Vec<Array3<f64>> = (0..10).map(|d| render_digit(d, &mut rng)).collect();
        for i in 0..10 {
            for j in i + 1..10 {
                let diff = imgs[i]
                    .iter()
                    .zip(imgs[j].iter())
                    .filter(|(a, b)| (**a - **b).abs() > 0.5)
                    .count();
                assert!(diff > 20, "digits {i} and {j} nearly coincide ({diff} px)");
            }
        }
    }

    #[test]
    fn strokes_carry_substantial_mass() {
        // Digit 8 lights every segment; its rendering must be far from blank.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eight: Array3<f64> = render_digit(8, &mut rng);
        let lit = eight.iter().filter(|&&v| v > 0.5).count();
        assert!(lit > 150, "only {lit} lit pixels");
    }
}

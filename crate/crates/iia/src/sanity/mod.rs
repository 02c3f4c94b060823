//! Sanity checks for attribution methods: parameter-randomization tests
//! (cascading and independent) and the data-randomization test, all reported
//! as Spearman rank correlations against maps from the unmodified model.

pub mod data_rand;
pub mod glyphs;
pub mod randomize;
pub mod spearman;
pub mod train;

pub use data_rand::data_randomization;
pub use glyphs::{glyph_dataset, LabeledSet, SplitData};
pub use randomize::{cascading_randomization, independent_randomization, layer_groups};
pub use spearman::{spearman, SpearmanRho};
pub use train::{evaluate_accuracy, train_classifier, TrainConfig};

use iia_models::models::StagedCnn;
use ndarray::{Array2, ArrayD};

use crate::error::Result;

/// A way to turn `(model, image)` into an attribution map; the randomization
/// drivers stay agnostic of which method they are stress-testing.
pub type MapMethod<'a, T> = dyn Fn(&StagedCnn<T>, &ArrayD<T>) -> Result<Array2<f64>> + 'a;

/// Which randomization experiment produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomizationMode {
    Cascading,
    Independent,
    Data,
}

impl RandomizationMode {
    pub fn name(&self) -> &'static str {
        match self {
            RandomizationMode::Cascading => "cascading",
            RandomizationMode::Independent => "independent",
            RandomizationMode::Data => "data",
        }
    }
}

/// Correlation statistics for one randomization step over the image sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStat {
    /// What was randomized at this step (layer group, or "original").
    pub label: String,
    pub rho_mean: f64,
    /// Population standard deviation of the per-image correlations.
    pub rho_std: f64,
    pub rho_median: f64,
    /// Per-image correlations, in image order.
    pub rhos: Vec<f64>,
    /// How many comparisons were degenerate (a constant map on either side).
    pub degenerate: usize,
}

impl StepStat {
    pub fn from_rhos(label: impl Into<String>, rhos: Vec<f64>, degenerate: usize) -> Self {
        let n = rhos.len() as f64;
        let mean = rhos.iter().sum::<f64>() / n;
        let var = rhos.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        let mut sorted = rhos.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        StepStat {
            label: label.into(),
            rho_mean: mean,
            rho_std: var.sqrt(),
            rho_median: median,
            rhos,
            degenerate,
        }
    }
}

/// Outcome of one randomization experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizationReport {
    pub mode: RandomizationMode,
    pub steps: Vec<StepStat>,
    /// Number of images each step was evaluated on.
    pub sample_size: usize,
    pub seed: u64,
    /// Test accuracy of the permuted-label twin (data mode only).
    pub permuted_test_accuracy: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_stats_summarize_mean_std_and_median() {
        let s = StepStat::from_rhos("x", vec![1.0, 0.0, 0.5, 0.5], 0);
        assert!((s.rho_mean - 0.5).abs() < 1e-15);
        assert!((s.rho_median - 0.5).abs() < 1e-15);
        let var: f64 = (0.25 + 0.25 + 0.0 + 0.0) / 4.0;
        assert!((s.rho_std - var.sqrt()).abs() < 1e-15);

        let odd = StepStat::from_rhos("y", vec![0.9, -1.0, 0.1], 1);
        assert_eq!(odd.rho_median, 0.1);
        assert_eq!(odd.degenerate, 1);
    }
}

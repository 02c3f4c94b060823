//! Data-randomization sanity test: train twin models on true and permuted
//! labels, then compare their attribution maps image by image.

use iia_models::models::StagedCnn;
use iia_models::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::glyphs::SplitData;
use super::spearman::spearman;
use super::train::{evaluate_accuracy, train_classifier, TrainConfig};
use super::{MapMethod, RandomizationMode, RandomizationReport, StepStat};

/// Train one model on the true labels and a twin (same initialization) on a
/// random permutation of them, both to the accuracy bar in `cfg`; report the
/// per-test-image Spearman correlation between their maps plus the permuted
/// twin's test accuracy.
pub fn data_randomization<T: Scalar>(
    method: &MapMethod<'_, T>,
    small_model_factory: &dyn Fn(u64) -> StagedCnn<T>,
    data: &SplitData<T>,
    cfg: &TrainConfig,
) -> Result<RandomizationReport> {
    let mut true_model = small_model_factory(cfg.seed);
    train_classifier(&mut true_model, &data.train.images, &data.train.labels, cfg)?;

    // Fisher-Yates on a dedicated stream so the permutation is independent of
    // minibatch shuffling.
    let mut labels = data.train.labels.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x706572_6d757465);
    for i in (1..labels.len()).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }

    let mut permuted_model = small_model_factory(cfg.seed);
    let permuted_cfg = TrainConfig {
        seed: cfg.seed.wrapping_add(1),
        ..cfg.clone()
    };
    train_classifier(&mut permuted_model, &data.train.images, &labels, &permuted_cfg)?;
    let permuted_test_accuracy = evaluate_accuracy(&permuted_model, &data.test)?;

    let mut rhos = Vec::with_capacity(data.test.len());
    let mut degenerate = 0usize;
    for img in &data.test.images {
        let img = img.clone().into_dyn();
        let a = method(&true_model, &img)?;
        let b = method(&permuted_model, &img)?;
        let s = spearman(&a, &b)?;
        if s.degenerate {
            degenerate += 1;
        }
        rhos.push(s.rho);
    }
    Ok(RandomizationReport {
        mode: RandomizationMode::Data,
        steps: vec![StepStat::from_rhos("permuted-labels", rhos, degenerate)],
        sample_size: data.test.len(),
        seed: cfg.seed,
        permuted_test_accuracy: Some(permuted_test_accuracy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::integrated_gradients;
    use crate::plan::ClassSelector;
    use crate::sanity::glyphs::glyph_dataset;
    use crate::ReferencePolicy;
    use iia_models::models::toy::sanity_cnn;
    use ndarray::ArrayD;

    #[test]
    fn twins_train_to_the_bar_and_produce_a_distribution() {
        let data = glyph_dataset::<f64>(40, 6, 3);
        let method = |model: &StagedCnn<f64>, img: &ArrayD<f64>| {
            Ok(integrated_gradients(
                model,
                img,
                &ReferencePolicy::Zero,
                4,
                ClassSelector::Predicted,
            )?
            .map
            .values)
        };
        let cfg = TrainConfig {
            max_epochs: 400,
            target_train_accuracy: 0.9,
            seed: 2,
            ..TrainConfig::default()
        };
        let report =
            data_randomization(&method, &|seed| sanity_cnn::<f64>(seed), &data, &cfg).unwrap();
        assert_eq!(report.mode, RandomizationMode::Data);
        assert_eq!(report.sample_size, 30);
        assert_eq!(report.steps.len(), 1);
        assert_eq!(report.steps[0].rhos.len(), 30);
        assert!(report.steps[0].rhos.iter().all(|r| (-1.0..=1.0).contains(r)));
        let acc = report.permuted_test_accuracy.unwrap();
        assert!((0.0..=1.0).contains(&acc));
        // Twin models differ, so maps should not agree perfectly everywhere.
        assert!(report.steps[0].rho_mean < 0.999);
    }

    #[test]
    fn unreachable_bar_propagates_the_training_error() {
        let data = glyph_dataset::<f64>(41, 2, 1);
        let method = |_: &StagedCnn<f64>, _: &ArrayD<f64>| {
            Ok(ndarray::Array2::<f64>::zeros((32, 32)))
        };
        let cfg = TrainConfig {
            max_epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let err = data_randomization(&method, &|seed| sanity_cnn::<f64>(seed), &data, &cfg)
            .unwrap_err();
        assert!(matches!(
            err,
            crate::error::AttributionError::TrainingBudget(_)
        ));
    }
}

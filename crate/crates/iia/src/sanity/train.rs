//! Minibatch SGD with momentum and cross-entropy loss, just enough to take a
//! small convnet to a target training accuracy for the data-randomization
//! test.

use std::collections::HashMap;

use iia_models::weights::visit_cnn;
use iia_models::models::StagedCnn;
use iia_models::{Scalar, TapModel};
use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AttributionError, Result};
use crate::tensor::{argmax, softmax_f64};

use super::glyphs::LabeledSet;

/// Optimization budget and hyperparameters for [`train_classifier`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Training stops once train-set accuracy reaches this bar.
    pub target_train_accuracy: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 300,
            target_train_accuracy: 0.95,
            seed: 0,
        }
    }
}

/// Fraction of examples whose top logit matches the label.
pub fn evaluate_accuracy<T: Scalar>(model: &StagedCnn<T>, set: &LabeledSet<T>) -> Result<f64> {
    if set.is_empty() {
        return Err(AttributionError::InvalidArgument(
            "accuracy needs at least one example".into(),
        ));
    }
    let mut correct = 0usize;
    for (img, &label) in set.images.iter().zip(&set.labels) {
        let mut run = model.begin(img.clone().into_dyn())?;
        let logits = model.finish(&mut run)?;
        if argmax(&logits) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

fn apply_update<T: Scalar>(
    model: &mut StagedCnn<T>,
    grads: &HashMap<String, ArrayD<f64>>,
    velocity: &mut HashMap<String, ArrayD<f64>>,
    lr: f64,
    momentum: f64,
) {
    visit_cnn(model, &mut |name, mut slot| {
        let Some(g) = grads.get(&name) else {
            return;
        };
        let v = velocity
            .entry(name)
            .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
        v.zip_mut_with(g, |vi, &gi| *vi = momentum * *vi + gi);
        let vv = v.clone();
        slot.update(|mut w| {
            w.zip_mut_with(&vv, |wi, &vi| {
                *wi = T::from_f64(Scalar::to_f64(*wi) - lr * vi);
            });
        });
    });
}

/// Train in place until the accuracy bar is met; returns the reached train
/// accuracy or a training-budget error naming the best epoch.
pub fn train_classifier<T: Scalar>(
    model: &mut StagedCnn<T>,
    images: &[ndarray::Array3<T>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<f64> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(AttributionError::InvalidArgument(format!(
            "training needs matching non-empty images/labels, got {} and {}",
            images.len(),
            labels.len()
        )));
    }
    let classes = model.meta.num_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(AttributionError::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(AttributionError::InvalidArgument(
            "batch size and epoch budget must be positive".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity: HashMap<String, ArrayD<f64>> = HashMap::new();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut best = 0.0f64;
    for epoch in 0..cfg.max_epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: HashMap<String, ArrayD<f64>> = HashMap::new();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (logits, run) = model.train_forward(images[i].clone());
                let probs = softmax_f64(&logits);
                if argmax(&probs) == labels[i] {
                    correct += 1;
                }
                let g_logits = ndarray::Array1::from_shape_fn(classes, |c| {
                    let delta = if c == labels[i] { 1.0 } else { 0.0 };
                    T::from_f64((probs[c] - delta) * scale)
                });
                for (name, g) in model.train_backward(&run, &g_logits) {
                    let g64 = g.mapv(|v| Scalar::to_f64(v));
                    grads
                        .entry(name)
                        .and_modify(|acc| *acc += &g64)
                        .or_insert(g64);
                }
            }
            apply_update(model, &grads, &mut velocity, cfg.learning_rate, cfg.momentum);
        }
        // Accuracy observed during the epoch lags the updates, so a pass of
        // the bar is confirmed on the final weights before stopping.
        let seen = correct as f64 / images.len() as f64;
        best = best.max(seen);
        if seen >= cfg.target_train_accuracy {
            let set = LabeledSet {
                images: images.to_vec(),
                labels: labels.to_vec(),
                num_classes: classes,
            };
            let confirmed = evaluate_accuracy(model, &set)?;
            best = best.max(confirmed);
            if confirmed >= cfg.target_train_accuracy {
                log::debug!("training reached {confirmed:.3} at epoch {epoch}");
                return Ok(confirmed);
            }
        }
    }
    Err(AttributionError::TrainingBudget(format!(
        "accuracy bar {} not reached within {} epochs (best {best:.3})",
        cfg.target_train_accuracy, cfg.max_epochs
    )))
}
